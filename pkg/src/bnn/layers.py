"""Layer specifications and their forward/backward kernels.

Activations are batch-first: dense layers see ``(batch, features)`` and
conv/pool layers see ``(batch, channels, height, width)``. Weight tensors
are stored output-major so that row ``i`` of the 2-D weight view belongs to
output unit (or output channel) ``i``; dropout-style masks act on rows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    masked: bool = True
    # False: dropout-style unit noise is not applied on this layer's outputs
    row_gates: bool = True

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_features, self.in_features)

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass(frozen=True)
class Conv2D:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    masked: bool = True
    row_gates: bool = True

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2D:
    size: int = 2
    stride: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Dense | Conv2D | ReLU | MaxPool2D | Flatten
_LAYER_TYPES = {cls.__name__: cls for cls in (Dense, Conv2D, ReLU, MaxPool2D, Flatten)}


def is_parametric(layer) -> bool:
    return isinstance(layer, (Dense, Conv2D))


def layer_to_dict(layer) -> dict:
    return {"type": type(layer).__name__, **asdict(layer)}


def layer_from_dict(d: dict):
    d = dict(d)
    try:
        cls = _LAYER_TYPES[d.pop("type")]
    except KeyError as exc:
        raise ConfigError(f"unknown or missing layer type in {d}") from exc
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad fields for {cls.__name__}: {exc}") from None


def output_shape(layers, input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-example output shape; raises DimensionError if layers do not compose."""
    shape = tuple(input_shape)
    for idx, layer in enumerate(layers):
        if isinstance(layer, Dense):
            if shape != (layer.in_features,):
                raise DimensionError(f"layer {idx} Dense expects ({layer.in_features},), got {shape}")
            shape = (layer.out_features,)
        elif isinstance(layer, Conv2D):
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise DimensionError(f"layer {idx} Conv2D expects ({layer.in_channels}, H, W), got {shape}")
            h = (shape[1] + 2 * layer.pad - layer.kernel) // layer.stride + 1
            w = (shape[2] + 2 * layer.pad - layer.kernel) // layer.stride + 1
            if h < 1 or w < 1:
                raise DimensionError(f"layer {idx} Conv2D kernel larger than input {shape}")
            shape = (layer.out_channels, h, w)
        elif isinstance(layer, MaxPool2D):
            if len(shape) != 3:
                raise DimensionError(f"layer {idx} MaxPool2D expects (C, H, W), got {shape}")
            h = (shape[1] - layer.size) // layer.stride + 1
            w = (shape[2] - layer.size) // layer.stride + 1
            if h < 1 or w < 1:
                raise DimensionError(f"layer {idx} MaxPool2D window larger than input {shape}")
            shape = (shape[0], h, w)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, ReLU):
            pass
        else:
            raise ConfigError(f"layer {idx}: unsupported layer {layer!r}")
    return shape


# -- dense -------------------------------------------------------------------

def dense_forward(x, w, b):
    return x @ w.T + b, x


def dense_backward(dy, cache, w, need_dx: bool = True):
    x = cache
    return (dy @ w if need_dx else None), dy.T @ x, dy.sum(axis=0)


# -- conv --------------------------------------------------------------------

def _im2col(x, k, stride, pad):
    """Patch matrix with one column per output position, shape (C*k*k, N*Ho*Wo)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # (N, C, Ho, Wo, k, k) view
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
    return cols, (n, ho, wo), x.shape


def conv_forward(x, w, b, layer: Conv2D):
    k, s = layer.kernel, layer.stride
    cols, (n, ho, wo), padded_shape = _im2col(x, k, s, layer.pad)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    # channel-major result viewed as NCHW
    y = out.reshape(-1, n, ho, wo).transpose(1, 0, 2, 3)
    return y, (cols, (n, ho, wo), padded_shape)


def conv_backward(dy, cache, w, layer: Conv2D, need_dx: bool = True):
    cols, (n, ho, wo), padded_shape = cache
    k, s, pad = layer.kernel, layer.stride, layer.pad
    cout, cin = w.shape[:2]
    dy2 = dy.transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
    dw = (dy2 @ cols.T).reshape(w.shape)
    db = dy2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    # (C, k, k, N, Ho, Wo): each kernel offset is one contiguous block
    dcols = (w.reshape(cout, -1).T @ dy2).reshape(cin, k, k, n, ho, wo)
    dxp = np.zeros((padded_shape[1], padded_shape[0], *padded_shape[2:]))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j]
    dxp = dxp.transpose(1, 0, 2, 3)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp, dw, db


# -- pooling -----------------------------------------------------------------

def maxpool_forward(x, layer: MaxPool2D, need_cache: bool = True):
    size, s = layer.size, layer.stride
    n, c, h, w = x.shape
    ho, wo = (h - size) // s + 1, (w - size) // s + 1
    if not need_cache:
        # elementwise max over the size*size window offsets
        y = None
        for i in range(size):
            for j in range(size):
                t = x[:, :, i:i + s * ho:s, j:j + s * wo:s]
                y = t.copy() if y is None else np.maximum(y, t, out=y)
        return y, None
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, size * size)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def maxpool_backward(dy, cache, layer: MaxPool2D):
    arg, in_shape = cache
    size, s = layer.size, layer.stride
    n, c, ho, wo = dy.shape
    dx = np.zeros(in_shape)
    di, dj = np.divmod(arg, size)
    rows = np.arange(ho)[None, None, :, None] * s + di
    cols = np.arange(wo)[None, None, None, :] * s + dj
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    if size <= s:
        dx[nn, cc, rows, cols] = dy
    else:
        # overlapping windows may select the same input twice
        np.add.at(dx, (nn, cc, rows, cols), dy)
    return dx
