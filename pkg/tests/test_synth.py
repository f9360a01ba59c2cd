import numpy as np
import pytest
from scipy import ndimage

from scalefuse import synth, tensor


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return root, synth.generate(root, seed=0, n_train=200, n_val=50)


def _files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_byte_identical(dataset, tmp_path):
    root, _ = dataset
    synth.generate(tmp_path, seed=0, n_train=200, n_val=50)
    assert _files(tmp_path) == _files(root)


def test_different_seed_differs(tmp_path):
    a = synth.generate(tmp_path / "a", seed=0, n_train=3, n_val=1)
    b = synth.generate(tmp_path / "b", seed=1, n_train=3, n_val=1)
    assert a["train"].paths(0)[0].read_bytes() != b["train"].paths(0)[0].read_bytes()


def test_samples_valid(dataset):
    _, m = dataset
    for split in ("train", "val"):
        for s in synth.load(m[split]):
            assert s.image.shape == (3, 64, 64) and s.mask.shape == (64, 64)
            assert s.image.min() >= 0 and s.image.max() <= 1
            assert set(np.unique(s.mask)) <= {0, 1, 2, 3}
            assert s.mask.any()
            present = {int(c) for c in np.unique(s.mask) if c > 0}
            assert present == {k + 1 for k in np.flatnonzero(s.labels)}


def test_class_and_size_audit(dataset):
    """Counting pass over the training masks: classes and both size modes well represented."""
    _, m = dataset
    per_class = np.zeros(3, dtype=int)
    small = large = 0
    for s in synth.load(m["train"]):
        per_class += s.labels
        for k in range(1, 4):
            comps, n = ndimage.label(s.mask == k)
            areas = np.bincount(comps.ravel())[1:]
            small += int(np.sum(areas <= (0.12 * 64) ** 2))
            large += int(np.sum(areas >= (0.40 * 64) ** 2 / 2 * 0.5))
    assert per_class.min() >= 30, per_class
    assert small >= 20 and large >= 20, (small, large)


def test_manifest_round_trip(dataset):
    root, m = dataset
    again = synth.read_manifest(root, "train")
    assert again == m["train"]
    text = (root / "train" / "manifest.tsv").read_text(encoding="utf-8").splitlines()
    assert text[:3] == ["split\ttrain", "count\t200", "seed\t0"]
    assert all("\t" in line for line in text)


def test_load_round_trips_images(dataset, tmp_path):
    _, m = dataset
    first = next(synth.load(m["val"]))
    assert first.image.tobytes() == tensor.load(m["val"].paths(0)[0]).tobytes()


def test_empty_split_streams_nothing(tmp_path):
    assert list(synth.load(synth.Manifest(tmp_path, "none", 0, 0))) == []


def test_truncated_file_names_the_sample(tmp_path):
    m = synth.generate(tmp_path, seed=3, n_train=2, n_val=1)["train"]
    img, _ = m.paths(1)
    img.write_bytes(img.read_bytes()[:-8])
    with pytest.raises(ValueError, match=r"train/1.*1\.img\.smt1"):
        synth.load_all(m)


def test_missing_manifest_and_bad_counts(tmp_path):
    with pytest.raises(OSError, match="manifest"):
        synth.read_manifest(tmp_path, "train")
    with pytest.raises(ValueError):
        synth.generate(tmp_path, 0, 0, 1)


def test_later_shapes_win():
    # a large square followed by a small circle inside it keeps both classes
    m = synth._shape_mask(2, 32, 32, 40, 64) & ~synth._shape_mask(1, 32, 32, 6, 64)
    assert m.sum() < synth._shape_mask(2, 32, 32, 40, 64).sum()


@pytest.mark.parametrize("kind", [1, 2, 3])
def test_shapes_have_area(kind):
    assert synth._shape_mask(kind, 10, 10, 0.05 * 64, 64).sum() > 0
