"""Pseudo labels, confusion matrices and mIoU."""

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import backbone, fusion
from .tensor import ShapeError

log = logging.getLogger(__name__)


def pseudo_labels(attn: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over channels; ties go to the lowest channel index."""
    return np.argmax(attn, axis=0).astype(np.int64)


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """(K+1) x (K+1) pixel counts, rows = ground truth, columns = prediction."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"confusion_matrix: prediction {pred.shape} vs ground truth {gt.shape}")
    n = num_classes + 1
    idx = gt.astype(np.int64).ravel() * n + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=n * n).reshape(n, n)


def iou_per_class(cm: np.ndarray) -> np.ndarray:
    """IoU per class, NaN for classes absent from both prediction and ground truth."""
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), np.nan)


def miou_from_confusion(cm: np.ndarray) -> float:
    iou = iou_per_class(cm)
    valid = ~np.isnan(iou)
    if not valid.any():
        return 0.0
    return float(100.0 * iou[valid].mean())


def miou(pred, gt, num_classes: int) -> float:
    return miou_from_confusion(confusion_matrix(pred, gt, num_classes))


def student_attention(params, images: np.ndarray, chunk: int = 16) -> np.ndarray:
    """Single-scale attention maps for a stack of images."""
    out = [backbone.forward(params, images[i : i + chunk], keep_cache=False).attn for i in range(0, len(images), chunk)]
    return np.concatenate(out)


def seed_labels(attn: np.ndarray, labels, background: str = "model", thr: float = 0.2) -> np.ndarray:
    """Pseudo labels for one image with absent-class channels removed.

    ``background="model"`` keeps the network's own background channel;
    ``"threshold"`` replaces it by the constant ``thr`` (the usual CAM seed
    rule, needed for a network whose background channel was never trained).
    """
    a = fusion.denoise(attn, labels)
    if background == "threshold":
        a[fusion.BACKGROUND] = thr
    elif background != "model":
        raise ValueError(f"unknown background mode {background!r}")
    return pseudo_labels(a)


def evaluate(params, samples, background: str = "model", thr: float = 0.2):
    """Dataset-level mIoU (%) of single-scale pseudo labels and the confusion matrix."""
    k = params.num_classes
    cm = np.zeros((k + 1, k + 1), dtype=np.int64)
    if not samples:
        return 0.0, cm
    attn = student_attention(params, np.stack([s.image for s in samples]))
    for a, s in zip(attn, samples):
        cm += confusion_matrix(seed_labels(a, s.labels, background, thr), s.mask, k)
    return miou_from_confusion(cm), cm


# -- ablation suite ----------------------------------------------------------------

FULL = (0.5, 1.0, 1.5, 2.0)
PRETRAINED = "pretrained"
# name -> (teacher scales, reactivation)
CONDITIONS = {
    "single_0.5": ((0.5,), True),
    "single_1": ((1.0,), True),
    "single_1.5": ((1.5,), True),
    "single_2": ((2.0,), True),
    "fuse_0.5_1": ((0.5, 1.0), True),
    "fuse_1_1.5": ((1.0, 1.5), True),
    "fuse_1_2": ((1.0, 2.0), True),
    "full": (FULL, True),
    "full_no_react": (FULL, False),
}
SINGLES = ("single_0.5", "single_1", "single_1.5", "single_2")
SUBSETS = ("fuse_0.5_1", "fuse_1_1.5", "fuse_1_2")


@dataclass
class AblationReport:
    seeds: Tuple[int, ...]
    config_hash: str
    results: Dict[str, List[float]]  # condition -> mIoU per seed, in seed order
    seconds: Dict[int, float] = field(default_factory=dict)  # wall time per seed job

    def median(self, condition: str) -> float:
        return float(np.median(self.results[condition]))

    def orderings(self) -> Dict[str, bool]:
        m = self.median
        return {
            "multi-scale beats every single scale by >= 1.0": all(m("full") >= m(s) + 1.0 for s in SINGLES),
            "full fusion >= every scale subset": all(m("full") >= m(s) for s in SUBSETS),
            "reactivation >= no reactivation": m("full") >= m("full_no_react"),
            "self-training gains >= 2.0 over pretrained": m("full") >= m(PRETRAINED) + 2.0,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "seed", "miou"])
        for name, vals in self.results.items():
            for seed, v in zip(self.seeds, vals):
                w.writerow([name, seed, f"{v:.4f}"])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"config {self.config_hash}", f"seeds {','.join(map(str, self.seeds))}", ""]
        lines.append(f"{'condition':<16}{'median':>9}  per-seed")
        for name, vals in self.results.items():
            lines.append(f"{name:<16}{self.median(name):>9.2f}  " + " ".join(f"{v:.2f}" for v in vals))
        lines.append("")
        for what, ok in self.orderings().items():
            lines.append(f"{'PASS' if ok else 'FAIL'}  {what}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / "summary.txt").write_text(self.summary(), encoding="utf-8")


def config_hash(cfg) -> str:
    """Hash of the settings that influence results (paths and worker count excluded)."""
    keep = {k: v for k, v in asdict(cfg).items() if k not in ("data_root", "out_dir", "workers")}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def run_seed(train, val, cfg, seed: int, background: str = "threshold") -> Dict[str, float]:
    """Pretrain once, then self-train and evaluate every condition for one seed.

    Per-scale teacher maps are shared across conditions; the teacher is the same
    frozen network for all of them, so this is bit-identical to recomputing.
    """
    from . import training

    pre = training.pretrain(train, cfg.hyperparams("pretrain", seed=seed))
    out = {PRETRAINED: evaluate(pre, val, background, cfg.thr)[0]}
    cache = training.fill_scale_cache(pre, train, FULL)
    for name, (scales, react) in CONDITIONS.items():
        hp = cfg.hyperparams("selftrain", seed=seed, reactivation=react)
        state = training.self_train(pre, train, hp, scale_cache=cache, scales=scales)
        out[name] = evaluate(state.student, val, background, cfg.thr)[0]
        log.info("seed %d  %-14s mIoU %.2f", seed, name, out[name])
    return out


def _timed_seed(args):
    train, val, cfg, seed = args
    with threadpool_limits(1):
        t0 = time.perf_counter()
        res = run_seed(train, val, cfg, seed)
        return res, time.perf_counter() - t0


def run_ablation_suite(train, val, cfg, seeds: Sequence[int], workers: int = 1) -> AblationReport:
    """Every condition for every seed; one independent job per seed."""
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) < 3:
        raise ValueError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    jobs = [(train, val, cfg, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as ex:
            outs = list(ex.map(_timed_seed, jobs))
    else:
        outs = [_timed_seed(j) for j in jobs]
    names = (PRETRAINED,) + tuple(CONDITIONS)
    results = {n: [o[0][n] for o in outs] for n in names}
    return AblationReport(seeds, config_hash(cfg), results, {s: o[1] for s, o in zip(seeds, outs)})
