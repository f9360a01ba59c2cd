"""Binary PPM (P6) output with a fixed blue -> red colormap."""

import re
from pathlib import Path

import numpy as np

# anchor colours at 0, 1/3, 2/3, 1: blue, cyan-ish, yellow, red
_ANCHORS = np.array(
    [
        [0.0, 0.0, 0.8],
        [0.0, 0.8, 1.0],
        [1.0, 0.9, 0.0],
        [0.9, 0.0, 0.0],
    ]
)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to (H, W, 3) uint8 RGB; values outside are clipped."""
    v = np.clip(np.nan_to_num(np.asarray(values, dtype=np.float64)), 0.0, 1.0) * (len(_ANCHORS) - 1)
    i = np.minimum(np.floor(v).astype(np.int64), len(_ANCHORS) - 2)
    f = (v - i)[..., None]
    rgb = (1.0 - f) * _ANCHORS[i] + f * _ANCHORS[i + 1]
    return np.round(rgb * 255.0).astype(np.uint8)


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got {rgb.shape}")
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_ppm` (no comments, maxval 255 only)."""
    # four header tokens, each followed by one whitespace byte; the payload is raw
    m = re.match(rb"P6\s(\d+)\s(\d+)\s255\s", data)
    if m is None:
        raise ValueError("not a P6 PPM with maxval 255")
    w, h = int(m.group(1)), int(m.group(2))
    body = data[m.end():]
    if len(body) != w * h * 3:
        raise ValueError(f"PPM payload has {len(body)} bytes, expected {w * h * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def write_heatmap(values: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_ppm(colormap(values)))


def write_image(image: np.ndarray, path) -> None:
    """Write a (3, H, W) image in [0, 1] as PPM."""
    rgb = np.round(np.clip(image, 0.0, 1.0).transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(encode_ppm(rgb))
