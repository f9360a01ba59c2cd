"""Dense C x H x W float64 tensors and the SMT1 binary format.

Tensors are plain ``numpy.ndarray`` objects of shape ``(C, H, W)`` and dtype
float64.  Functions here never mutate their arguments.
"""

import struct
from pathlib import Path

import numpy as np

EPS = 1e-12
MAGIC = b"SMT1"
_HEADER = struct.Struct("<4sIII")


class ShapeError(ValueError):
    pass


class FormatError(ValueError):
    pass


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float64 (C, H, W) array."""
    t = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        t = t.reshape(shape)
    if t.ndim != 3 or min(t.shape) < 1:
        raise ShapeError(f"expected a non-empty (C, H, W) tensor, got shape {t.shape}")
    return t


def zeros(c: int, h: int, w: int) -> np.ndarray:
    return np.zeros((c, h, w), dtype=np.float64)


def check_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise FloatingPointError(f"{what} contains non-finite values")
    return t


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)


def channel_max(t: np.ndarray) -> np.ndarray:
    return t.reshape(t.shape[0], -1).max(axis=1)


def normalize_per_channel(t: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Divide each channel by its own maximum.

    Channels whose maximum is below ``eps`` come back as zeros.  Input is
    expected to be non-negative (i.e. already passed through ``relu``).
    """
    m = channel_max(t)
    safe = np.where(m < eps, 1.0, m)
    out = t / safe[:, None, None]
    out[m < eps] = 0.0
    return out


def add(a, b):
    _check_same(a, b, "add")
    return a + b


def sub(a, b):
    _check_same(a, b, "sub")
    return a - b


def hadamard(a, b):
    _check_same(a, b, "hadamard")
    return a * b


def scale(a, s: float):
    return a * float(s)


# -- SMT1 --------------------------------------------------------------------


def to_bytes(t: np.ndarray) -> bytes:
    t = as_tensor(t)
    c, h, w = t.shape
    return _HEADER.pack(MAGIC, c, h, w) + t.astype("<f8").tobytes(order="C")


def from_buffer(buf: bytes, offset: int = 0, source: str = "<buffer>"):
    """Decode one SMT1 tensor starting at ``offset``.

    Returns ``(tensor, next_offset)``.
    """
    if len(buf) - offset < _HEADER.size:
        raise FormatError(f"{source}: truncated SMT1 header")
    magic, c, h, w = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if min(c, h, w) < 1:
        raise FormatError(f"{source}: invalid dims ({c}, {h}, {w})")
    start = offset + _HEADER.size
    end = start + 8 * c * h * w
    if len(buf) < end:
        raise FormatError(f"{source}: truncated SMT1 payload ({len(buf) - start} of {end - start} bytes)")
    data = np.frombuffer(buf, dtype="<f8", count=c * h * w, offset=start)
    return data.astype(np.float64).reshape(c, h, w), end


def save(t: np.ndarray, path) -> None:
    Path(path).write_bytes(to_bytes(t))


def load(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    t, end = from_buffer(buf, 0, source=str(path))
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes after tensor")
    return t
