"""Classification pretraining and frozen-teacher self-training.

Both phases share :func:`train_steps`; pretraining is simply the case with no
teacher.  Each step draws a mini-batch without replacement, applies one random
rescale per batch (factor in ``aug_scale``) and an independent horizontal flip
per image, and takes one SGD step on

    L_total = L_cls + alpha * L_mac

where the attention target is the teacher's fused map for the *unaugmented*
image, pushed through the same rescale and flip as the student input.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import backbone, fusion, losses, tensor
from .geometry import bilinear_resize, hflip, scaled_size

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "SMCK1"


class NumericalAbort(RuntimeError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 100.0
    thr: float = 0.2
    scales: Tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 2000
    batch_size: int = 8
    seed: int = 0
    reactivation: bool = True
    aug_scale: Tuple[float, float] = (0.75, 1.25)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0 < self.thr < 1:
            raise ValueError("thr must lie in (0, 1)")
        if not self.scales or 1.0 not in self.scales:
            raise ValueError(f"scales must contain 1.0, got {self.scales}")
        if any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("invalid optimizer settings")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")


@dataclass
class TrainState:
    student: backbone.BackboneParams
    teacher: Optional[backbone.BackboneParams] = None
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    history: List[Tuple[int, float, float, float]] = field(default_factory=list)


class TeacherTargets:
    """Fused targets from a frozen teacher, one per training image.

    Per-scale flip-averaged maps can be memoised in ``scale_cache`` (keyed by
    ``(index, scale)``); since the teacher never changes this is bit-identical
    to recomputing them.  ``on_target`` sees every target handed to training.
    """

    def __init__(self, teacher, samples, scales, thr, reactivation=True, scale_cache: Optional[dict] = None,
                 on_target: Optional[Callable] = None):
        self.teacher = teacher
        self.samples = samples
        self.scales = tuple(scales)
        self.thr = thr
        self.reactivation = reactivation
        self.scale_cache = scale_cache
        self.on_target = on_target

    def _scale_map(self, i, s):
        if self.scale_cache is None:
            return fusion.scale_maps(self.teacher, self.samples[i].image, [s])[0]
        key = (i, s)
        if key not in self.scale_cache:
            self.scale_cache[key] = fusion.scale_maps(self.teacher, self.samples[i].image, [s])[0]
        return self.scale_cache[key]

    def __call__(self, i: int) -> np.ndarray:
        sample = self.samples[i]
        maps = [self._scale_map(i, s) for s in self.scales]
        target = fusion.target_from_scale_maps(maps, sample.image.shape[1:], sample.labels, self.thr,
                                               self.reactivation)
        if self.on_target is not None:
            self.on_target(i, target)
        return target


def fill_scale_cache(teacher, samples, scales, cache: Optional[dict] = None) -> dict:
    cache = {} if cache is None else cache
    for i, s in enumerate(samples):
        for sc in scales:
            if (i, sc) not in cache:
                cache[(i, sc)] = fusion.scale_maps(teacher, s.image, [sc])[0]
    return cache


def _augment(batch: np.ndarray, factor_hw, flips):
    h, w = factor_hw
    out = bilinear_resize(batch, h, w)
    out[flips] = out[flips][..., ::-1]
    return out


def train_steps(state: TrainState, samples, hp: Hyperparams, n_steps: int, targets: Optional[Callable] = None):
    """Advance ``state`` in place by ``n_steps`` SGD iterations."""
    if not samples:
        raise ValueError("training needs at least one sample")
    n = len(samples)
    bsz = min(hp.batch_size, n)
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.labels for s in samples]).astype(np.float64)
    h, w = images.shape[2:]
    for _ in range(n_steps):
        rng = state.rng
        idx = rng.choice(n, size=bsz, replace=False)
        factor = rng.uniform(*hp.aug_scale)
        flips = rng.random(bsz) < 0.5
        size = scaled_size(h, w, factor)

        x = _augment(images[idx], size, flips)
        out = backbone.forward(state.student, x)
        cls, g_pred = losses.classification_loss(out.pred, labels[idx])
        mac, g_attn = 0.0, np.zeros_like(out.attn)
        if targets is not None:
            tgt = _augment(np.stack([targets(int(i)) for i in idx]), size, flips)
            mac, g_attn = losses.mac_loss(tgt, out.attn)
            g_attn = hp.alpha * g_attn
        total = losses.total_loss(cls, mac, hp.alpha)
        if not np.isfinite(total):
            raise NumericalAbort(state.iteration, "loss")
        grads, _ = backbone.backward(state.student, out.cache, g_attn, g_pred)
        state.student = backbone.sgd_step(state.student, grads, hp.learning_rate, hp.momentum, hp.weight_decay)
        state.iteration += 1
        state.history.append((state.iteration, cls, mac, total))
        if state.iteration % 100 == 0:
            log.info("iter %d  cls %.4f  mac %.5f  total %.4f", state.iteration, cls, mac, total)
    return state


def start_pretraining(hp: Hyperparams, num_classes: int, init_params=None) -> TrainState:
    if init_params is None:
        init_params = backbone.init(hp.seed, num_classes)
    return TrainState(init_params.copy(), rng=np.random.default_rng([hp.seed, 1]))


def pretrain_state(samples, hp: Hyperparams, init_params=None, state=None) -> TrainState:
    if not samples:
        raise ValueError("training needs at least one sample")
    state = state or start_pretraining(hp, len(samples[0].labels), init_params)
    train_steps(state, samples, hp, hp.iterations - state.iteration)
    return state


def pretrain(samples, hp: Hyperparams, init_params=None) -> backbone.BackboneParams:
    """Classification-only training of the student from ``init_params`` (or a seeded init)."""
    return pretrain_state(samples, hp, init_params).student


def start_self_training(pretrained: backbone.BackboneParams, hp: Hyperparams) -> TrainState:
    student = pretrained.copy()
    # fresh optimizer state for the new phase
    student.momentum = [backbone.ConvLayer.zeros_like(l) for l in student.layers]
    return TrainState(student, teacher=pretrained.copy(), rng=np.random.default_rng([hp.seed, 2]))


def self_train(pretrained, samples, hp: Hyperparams, scale_cache=None, on_target=None, state=None, scales=None):
    """Self-train a copy of ``pretrained`` against its own frozen multi-scale targets.

    ``scales`` overrides ``hp.scales`` for the teacher; the scale ablations use
    it for sets without the original scale, which ``Hyperparams`` rejects.
    """
    state = state or start_self_training(pretrained, hp)
    scales = hp.scales if scales is None else tuple(scales)
    targets = TeacherTargets(state.teacher, samples, scales, hp.thr, hp.reactivation, scale_cache, on_target)
    train_steps(state, samples, hp, hp.iterations - state.iteration, targets)
    return state


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(state: TrainState, path) -> None:
    """Manifest line (JSON) followed by concatenated SMT1 tensors."""
    named = [("student." + k, v) for k, v in state.student.named_arrays()]
    if state.teacher is not None:
        named += [("teacher." + k, v) for k, v in state.teacher.named_arrays()]
    if state.history:
        named.append(("history", np.asarray(state.history, dtype=np.float64)))
    head = {
        "format": CHECKPOINT_MAGIC,
        "iteration": state.iteration,
        "rng": state.rng.bit_generator.state,
        "tensors": [[k, list(np.shape(v))] for k, v in named],
    }
    body = b"".join(tensor.to_bytes(np.asarray(v, dtype=np.float64).reshape(1, 1, -1)) for _, v in named)
    data = (json.dumps(head, sort_keys=True) + "\n").encode("utf-8") + body
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    buf = path.read_bytes()
    nl = buf.find(b"\n")
    try:
        head = json.loads(buf[:nl].decode("utf-8")) if nl > 0 else None
    except (UnicodeDecodeError, json.JSONDecodeError):
        head = None
    if not isinstance(head, dict) or head.get("format") != CHECKPOINT_MAGIC:
        raise tensor.FormatError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    offset = nl + 1
    arrays = {}
    for name, shape in head["tensors"]:
        t, offset = tensor.from_buffer(buf, offset, source=f"{path}:{name}")
        if t.size != int(np.prod(shape)):
            raise tensor.FormatError(f"{path}: tensor {name} has {t.size} values, manifest says {shape}")
        arrays[name] = t.reshape(shape)
    if offset != len(buf):
        raise tensor.FormatError(f"{path}: {len(buf) - offset} trailing bytes")

    def params(prefix):
        sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        return backbone.BackboneParams.from_named_arrays(sub) if sub else None

    rng = np.random.default_rng()
    rng.bit_generator.state = head["rng"]
    history = [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in arrays.get("history", [])]
    return TrainState(params("student."), params("teacher."), int(head["iteration"]), rng, history)
