"""Teacher-side target construction: multi-scale fusion, denoising, reactivation.

Maps have K+1 channels, channel 0 being the background.
"""

from typing import Sequence

import numpy as np

from . import backbone
from .geometry import bilinear_resize, hflip, scaled_size
from .tensor import ShapeError, normalize_per_channel

BACKGROUND = 0


def fuse_scales(per_scale_maps: Sequence[np.ndarray], original_size) -> np.ndarray:
    """Resize every map to ``original_size``, sum them, max-normalize each channel."""
    if not per_scale_maps:
        raise ValueError("fuse_scales needs at least one map")
    channels = {m.shape[0] for m in per_scale_maps}
    if len(channels) != 1:
        raise ShapeError(f"fuse_scales: channel counts differ across scales: {sorted(channels)}")
    h, w = original_size
    total = np.zeros((per_scale_maps[0].shape[0], h, w))
    for m in per_scale_maps:
        total += bilinear_resize(m, h, w)
    return normalize_per_channel(total)


def denoise(fused: np.ndarray, labels) -> np.ndarray:
    """Zero the channel of every foreground class absent from ``labels``."""
    y = np.asarray(labels)
    if fused.shape[0] != y.size + 1:
        raise ShapeError(f"denoise: {fused.shape[0]} channels for {y.size} labels")
    out = fused.copy()
    out[1:][y == 0] = 0.0
    return out


def reactivate(fused: np.ndarray, thr: float) -> np.ndarray:
    """Set the background to ``thr`` and divide each pixel by its channel maximum."""
    if not 0.0 < thr < 1.0:
        raise ValueError(f"thr must lie in (0, 1), got {thr}")
    out = fused.copy()
    out[BACKGROUND] = thr
    return out / out.max(axis=0, keepdims=True)


def constant_background(fused: np.ndarray, thr: float) -> np.ndarray:
    """Background set to ``thr`` without the per-pixel division.

    Target used by the no-reactivation ablation.
    """
    out = fused.copy()
    out[BACKGROUND] = thr
    return out


def flip_averaged_attention(teacher, image: np.ndarray) -> np.ndarray:
    """Mean of the attention for ``image`` and the un-flipped attention of its mirror."""
    pair = np.stack([image, hflip(image)])
    attn = backbone.forward(teacher, pair, keep_cache=False).attn
    return 0.5 * (attn[0] + hflip(attn[1]))


def scale_maps(teacher, image: np.ndarray, scales: Sequence[float]):
    """Flip-averaged teacher attention for each scale, at that scale's resolution."""
    h, w = image.shape[1:]
    out = []
    for s in scales:
        sh, sw = scaled_size(h, w, s)
        out.append(flip_averaged_attention(teacher, bilinear_resize(image, sh, sw)))
    return out


def target_from_scale_maps(maps, original_size, labels, thr: float, reactivation: bool = True):
    fused = denoise(fuse_scales(maps, original_size), labels)
    return reactivate(fused, thr) if reactivation else constant_background(fused, thr)


def make_teacher_target(teacher, image, labels, scales, thr: float, reactivation: bool = True):
    """Fused, denoised and reactivated target for one image.

    The teacher is only read; nothing is differentiated.
    """
    maps = scale_maps(teacher, image, scales)
    return target_from_scale_maps(maps, image.shape[1:], labels, thr, reactivation)
