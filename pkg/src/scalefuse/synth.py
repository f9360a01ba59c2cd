"""Deterministic synthetic shapes dataset with large and small objects.

Classes: 1 = filled circle, 2 = filled square, 3 = filled triangle.  Each image
holds 1-3 shapes whose size is drawn from a bimodal distribution (large:
40-80 % of the image width, small: 5-12 %).  Masks are rasterized from the
same geometry, later shapes overwriting earlier ones, and labels are derived
from what stays visible.

Appearance is built so that no single scale sees everything:

* small shapes are solid patches of their class colour;
* larger shapes have a neutral interior (identical for all classes) carrying
  a regular grid of class-coloured dots, so a 7-pixel receptive field finds
  class evidence everywhere inside them but only as fine texture.

At reduced scales the dots blend into a class tint that covers the whole
interior while small objects shrink to a pixel or two; at enlarged scales
small objects and boundaries become well resolved while the dots turn into
separate blobs.  Colours get Gaussian noise (sigma 0.05) and are clipped to
[0, 1]; the background is a colour-neutral grey texture.

On disk: ``<root>/<split>/<index>.img.smt1`` (3 x H x W image),
``<root>/<split>/<index>.msk.smt1`` (1 x H x W class ids) and a
``<root>/<split>/manifest.tsv`` of ``key<TAB>value`` lines.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List

import numpy as np

from . import tensor
from .geometry import bilinear_resize

NUM_CLASSES = 3
SIZE = 64
CLASS_NAMES = ("background", "circle", "square", "triangle")
BASE_COLORS = np.array(
    [
        [0.85, 0.25, 0.20],  # circle
        [0.25, 0.75, 0.30],  # square
        [0.25, 0.35, 0.90],  # triangle
    ]
)
LARGE = (0.40, 0.80)
SMALL = (0.05, 0.12)
COLOR_NOISE = 0.05
INTERIOR_COLOR = np.array([0.80, 0.78, 0.70])
SOLID_BELOW = 10.0
DOT_SPACING = 4.0
DOT_RADIUS = 1.0
DOT_JITTER = 0.0


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray  # (H, W) int64 in {0..K}
    labels: np.ndarray  # (K,) int64 in {0, 1}


@dataclass
class Manifest:
    root: Path
    split: str
    count: int
    seed: int

    @property
    def directory(self) -> Path:
        return self.root / self.split

    def paths(self, index: int):
        d = self.directory
        return d / f"{index}.img.smt1", d / f"{index}.msk.smt1"


def labels_from_mask(mask: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    present = np.zeros(num_classes, dtype=np.int64)
    ids = np.unique(mask)
    present[ids[ids > 0] - 1] = 1
    return present


def _shape_mask(kind: int, cy: float, cx: float, size: float, n: int, angle: float = 0.0) -> np.ndarray:
    """Boolean raster of one shape; ``size`` is its bounding width in pixels."""
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    dy, dx = yy - cy, xx - cx
    r = size / 2.0
    if kind == 1:
        return dy * dy + dx * dx <= r * r
    if kind == 2:
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    # upward isosceles triangle inscribed in the size x size box, optionally flipped
    if angle:
        dy = -dy
    t = (dy + r) / (2 * r)  # 0 at apex, 1 at base
    return (t >= 0) & (t <= 1) & (np.abs(dx) <= r * t)


def _background(rng, n: int) -> np.ndarray:
    """Low-contrast gray texture: smooth blobs plus fine grain."""
    coarse = rng.uniform(0.0, 1.0, size=(1, 5, 5))
    smooth = bilinear_resize(coarse, n, n)
    tex = np.repeat(0.3 + 0.3 * smooth, 3, axis=0)
    return tex + rng.normal(0.0, 0.04, size=(3, n, n))


def _dots(rng, n: int) -> np.ndarray:
    """Grid of small discs covering the whole canvas (optionally jittered)."""
    g = np.arange(DOT_SPACING / 2, n, DOT_SPACING)
    cy, cx = np.meshgrid(g, g, indexing="ij")
    jitter = rng.uniform(-DOT_JITTER, DOT_JITTER, size=(2,) + cy.shape)
    cy, cx = (cy + jitter[0]).ravel(), (cx + jitter[1]).ravel()
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    d2 = (yy[..., None] - cy) ** 2 + (xx[..., None] - cx) ** 2
    return (d2 <= DOT_RADIUS ** 2 + 0.5).any(axis=-1)


def make_sample(rng: np.random.Generator, n: int = SIZE, num_classes: int = NUM_CLASSES) -> Sample:
    while True:
        image = _background(rng, n)
        mask = np.zeros((n, n), dtype=np.int64)
        for _ in range(int(rng.integers(1, 4))):
            kind = int(rng.integers(1, num_classes + 1))
            lo, hi = LARGE if rng.random() < 0.5 else SMALL
            size = rng.uniform(lo, hi) * n
            r = size / 2.0
            cy, cx = rng.uniform(r, n - r, size=2)
            flip = float(rng.integers(0, 2))
            region = _shape_mask(kind, cy, cx, size, n, flip)
            plain = region & ~_dots(rng, n) if size > SOLID_BELOW else np.zeros_like(region)
            paint = np.where(plain, 0.0, 1.0)[None] * BASE_COLORS[kind - 1][:, None, None] + np.where(plain, 1.0, 0.0)[None] * INTERIOR_COLOR[:, None, None]
            paint = paint + rng.normal(0.0, COLOR_NOISE, size=(3, n, n))
            image[:, region] = paint[:, region]
            mask[region] = kind
        if mask.any():
            break
    image = np.clip(image, 0.0, 1.0)
    return Sample(image, mask, labels_from_mask(mask, num_classes))


def generate_split(root, split: str, count: int, seed: int) -> Manifest:
    root = Path(root)
    rng = np.random.default_rng([seed, _split_key(split)])
    manifest = Manifest(root, split, count, seed)
    d = manifest.directory
    try:
        d.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            s = make_sample(rng)
            img_path, msk_path = manifest.paths(i)
            tensor.save(s.image, img_path)
            tensor.save(s.mask[None].astype(np.float64), msk_path)
        write_manifest(manifest)
    except OSError as e:
        raise OSError(f"failed writing dataset split {split!r} under {d}: {e}") from e
    return manifest


def _split_key(split: str) -> int:
    return int.from_bytes(split.encode("utf-8")[:8].ljust(8, b"\0"), "little")


def generate(root, seed: int, n_train: int, n_val: int):
    if n_train < 1 or n_val < 1:
        raise ValueError(f"split sizes must be >= 1, got n_train={n_train}, n_val={n_val}")
    return {
        "train": generate_split(root, "train", n_train, seed),
        "val": generate_split(root, "val", n_val, seed),
    }


def write_manifest(m: Manifest) -> None:
    lines = [f"split\t{m.split}", f"count\t{m.count}", f"seed\t{m.seed}"]
    for i in range(m.count):
        img, msk = m.paths(i)
        lines.append(f"image.{i}\t{img.name}")
        lines.append(f"mask.{i}\t{msk.name}")
    (m.directory / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(root, split: str) -> Manifest:
    path = Path(root) / split / "manifest.tsv"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read manifest {path}: {e}") from e
    kv = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key<TAB>value")
        kv[key] = value
    try:
        m = Manifest(Path(root), kv["split"], int(kv["count"]), int(kv["seed"]))
    except KeyError as e:
        raise ValueError(f"{path}: missing key {e}") from None
    for i in range(m.count):
        img, msk = m.paths(i)
        if kv.get(f"image.{i}") != img.name or kv.get(f"mask.{i}") != msk.name:
            raise ValueError(f"{path}: entry {i} does not name {img.name} / {msk.name}")
    return m


def load(manifest: Manifest) -> Iterator[Sample]:
    for i in range(manifest.count):
        img_path, msk_path = manifest.paths(i)
        try:
            image = tensor.load(img_path)
            mask = tensor.load(msk_path)[0].astype(np.int64)
        except (OSError, tensor.FormatError) as e:
            raise ValueError(f"sample {manifest.split}/{i}: {e}") from e
        yield Sample(image, mask, labels_from_mask(mask))


def load_all(manifest: Manifest) -> List[Sample]:
    return list(load(manifest))
