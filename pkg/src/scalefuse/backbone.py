"""Tiny 3x3 CNN producing class-aware attention maps, with manual backprop.

Architecture: conv(3->16) ReLU conv(16->32) ReLU conv(32->K+1).  Channel 0 of
the last layer is the background, channels 1..K the foreground classes.

* ``attn = normalize_per_channel(relu(raw))`` per image, the normaliser held
  constant during differentiation (stop-gradient).
* ``pred = mean_{h,w} raw[1:]`` are the image-level logits.

Images are shifted by ``-INPUT_MEAN`` before the first layer.
Internally activations are laid out as ``(C, N, H, W)`` so a 3x3 convolution
is one matrix product against a stacked set of nine shifted views.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .tensor import EPS, ShapeError

WIDTHS = (16, 32)
IN_CHANNELS = 3
INPUT_MEAN = 0.5  # images live in [0, 1]; the first layer sees them centred


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out, in, 3, 3)
    bias: np.ndarray  # (out,)

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.weight.copy(), self.bias.copy())

    @classmethod
    def zeros_like(cls, other: "ConvLayer") -> "ConvLayer":
        return cls(np.zeros_like(other.weight), np.zeros_like(other.bias))


@dataclass
class BackboneParams:
    layers: List[ConvLayer]
    momentum: List[ConvLayer] = field(default_factory=list)

    def __post_init__(self):
        if not self.momentum:
            self.momentum = [ConvLayer.zeros_like(l) for l in self.layers]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[0] - 1

    def copy(self) -> "BackboneParams":
        return BackboneParams([l.copy() for l in self.layers], [m.copy() for m in self.momentum])

    def named_arrays(self):
        """(name, array) pairs in a fixed order; used for checkpoints and hashing."""
        out = []
        for i, (l, m) in enumerate(zip(self.layers, self.momentum)):
            out += [
                (f"conv{i}.weight", l.weight),
                (f"conv{i}.bias", l.bias),
                (f"conv{i}.weight.momentum", m.weight),
                (f"conv{i}.bias.momentum", m.bias),
            ]
        return out

    @classmethod
    def from_named_arrays(cls, named) -> "BackboneParams":
        named = dict(named)
        n = len(named) // 4
        layers, momentum = [], []
        for i in range(n):
            layers.append(ConvLayer(named[f"conv{i}.weight"], named[f"conv{i}.bias"]))
            momentum.append(ConvLayer(named[f"conv{i}.weight.momentum"], named[f"conv{i}.bias.momentum"]))
        return cls(layers, momentum)

    def equals(self, other: "BackboneParams") -> bool:
        a, b = self.named_arrays(), other.named_arrays()
        return len(a) == len(b) and all(
            na == nb and x.shape == y.shape and np.array_equal(x, y) for (na, x), (nb, y) in zip(a, b)
        )


def init(seed: int, num_classes: int) -> BackboneParams:
    """He-normal kernels (variance 2 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    chans = (IN_CHANNELS,) + WIDTHS + (num_classes + 1,)
    layers = []
    for cin, cout in zip(chans[:-1], chans[1:]):
        std = np.sqrt(2.0 / (cin * 9))
        layers.append(ConvLayer(rng.normal(0.0, std, size=(cout, cin, 3, 3)), np.zeros(cout)))
    return BackboneParams(layers)


# -- convolution ---------------------------------------------------------------


def _im2col(x):
    c, n, h, w = x.shape
    xp = np.zeros((c, n, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((c, 9, n, h, w))
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[:, k] = xp[:, :, dy : dy + h, dx : dx + w]
    return cols.reshape(c * 9, n * h * w)


def _col2im(dcols, c, n, h, w):
    dcols = dcols.reshape(c, 9, n, h, w)
    dxp = np.zeros((c, n, h + 2, w + 2))
    for k in range(9):
        dy, dx = divmod(k, 3)
        dxp[:, :, dy : dy + h, dx : dx + w] += dcols[:, k]
    return dxp[:, :, 1:-1, 1:-1]


def conv_forward(x, layer: ConvLayer):
    """3x3, stride 1, zero padding 1.  ``x`` is (C, N, H, W)."""
    c, n, h, w = x.shape
    cout = layer.weight.shape[0]
    cols = _im2col(x)
    out = layer.weight.reshape(cout, -1) @ cols + layer.bias[:, None]
    return out.reshape(cout, n, h, w), cols


def conv_backward(dout, cols, layer: ConvLayer, in_shape, need_dx=True):
    cout = dout.shape[0]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(layer.weight.shape)
    db = d2.sum(axis=1)
    dx = None
    if need_dx:
        dx = _col2im(layer.weight.reshape(cout, -1).T @ d2, *in_shape)
    return ConvLayer(dw, db), dx


# -- network -------------------------------------------------------------------


class Forward(NamedTuple):
    raw: np.ndarray  # last-layer pre-activation
    attn: np.ndarray  # normalized relu(raw), values in [0, 1]
    pred: np.ndarray  # K image-level logits
    cache: object


def forward(params: BackboneParams, image: np.ndarray, keep_cache: bool = True) -> Forward:
    """Run the backbone on one (3, H, W) image or an (N, 3, H, W) batch."""
    single = image.ndim == 3
    x = image[None] if single else image
    if x.ndim != 4 or x.shape[1] != params.layers[0].weight.shape[1]:
        raise ShapeError(
            f"expected {params.layers[0].weight.shape[1]}-channel image(s), got shape {image.shape}"
        )
    a = np.ascontiguousarray(x.transpose(1, 0, 2, 3), dtype=np.float64) - INPUT_MEAN
    steps = []
    for i, layer in enumerate(params.layers):
        z, cols = conv_forward(a, layer)
        steps.append((cols, a.shape, z))
        a = np.maximum(z, 0.0) if i < len(params.layers) - 1 else z
    raw = a.transpose(1, 0, 2, 3)  # (N, K+1, H, W)
    act = np.maximum(raw, 0.0)
    denom = act.max(axis=(2, 3))
    dead = denom < EPS
    inv = np.where(dead, 0.0, 1.0 / np.where(dead, 1.0, denom))
    attn = act * inv[:, :, None, None]
    pred = raw[:, 1:].mean(axis=(2, 3))
    cache = (steps, raw, inv) if keep_cache else None
    if single:
        return Forward(raw[0].copy(), attn[0], pred[0], (cache, True))
    return Forward(np.ascontiguousarray(raw), attn, pred, (cache, False))


def backward(params: BackboneParams, cache, grad_attn, grad_pred, need_input_grad: bool = False):
    """Gradients of a scalar loss given its partials w.r.t. ``attn`` and ``pred``.

    Returns ``(grads, input_grad)`` where ``grads`` is a list of ``ConvLayer``
    aligned with ``params.layers`` and ``input_grad`` is None unless requested.
    """
    inner, single = cache
    if inner is None:
        raise ValueError("forward was run with keep_cache=False")
    steps, raw, inv = inner
    ga = np.asarray(grad_attn, dtype=np.float64)
    gp = np.asarray(grad_pred, dtype=np.float64)
    if single:
        ga, gp = ga[None], gp[None]
    if ga.shape != raw.shape:
        raise ShapeError(f"grad_attn shape {ga.shape} does not match attention maps {raw.shape}")
    if gp.shape != (raw.shape[0], raw.shape[1] - 1):
        raise ShapeError(f"grad_pred shape {gp.shape} does not match predictions {(raw.shape[0], raw.shape[1] - 1)}")

    hw = raw.shape[2] * raw.shape[3]
    d_raw = ga * inv[:, :, None, None] * (raw > 0)
    d_raw[:, 1:] += gp[:, :, None, None] / hw
    d = np.ascontiguousarray(d_raw.transpose(1, 0, 2, 3))

    grads = [None] * len(params.layers)
    for i in reversed(range(len(params.layers))):
        cols, in_shape, _ = steps[i]
        need_dx = i > 0 or need_input_grad
        grads[i], d = conv_backward(d, cols, params.layers[i], in_shape, need_dx)
        if i > 0:
            d = d * (steps[i - 1][2] > 0)
    input_grad = None
    if need_input_grad:
        input_grad = d.transpose(1, 0, 2, 3)
        input_grad = input_grad[0].copy() if single else np.ascontiguousarray(input_grad)
    return grads, input_grad


def sgd_step(params: BackboneParams, grads, lr: float, momentum: float, weight_decay: float) -> BackboneParams:
    """SGD with heavy-ball momentum and L2 weight decay; returns new params.

    ``buf <- momentum * buf + grad + weight_decay * param``; ``param <- param - lr * buf``.
    """
    if len(grads) != len(params.layers):
        raise ShapeError(f"{len(grads)} gradient layers for {len(params.layers)} parameter layers")
    layers, bufs = [], []
    for p, m, g in zip(params.layers, params.momentum, grads):
        if p.weight.shape != g.weight.shape or p.bias.shape != g.bias.shape:
            raise ShapeError(f"gradient shape {g.weight.shape} does not match parameter {p.weight.shape}")
        mw = momentum * m.weight + g.weight + weight_decay * p.weight
        mb = momentum * m.bias + g.bias + weight_decay * p.bias
        layers.append(ConvLayer(p.weight - lr * mw, p.bias - lr * mb))
        bufs.append(ConvLayer(mw, mb))
    return BackboneParams(layers, bufs)


def scale_grads(grads, s: float):
    return [ConvLayer(g.weight * s, g.bias * s) for g in grads]


def add_grads(a, b):
    return [ConvLayer(x.weight + y.weight, x.bias + y.bias) for x, y in zip(a, b)]
