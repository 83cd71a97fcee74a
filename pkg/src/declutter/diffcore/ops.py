"""Forward and backward kernels for the supported op kinds.

Conventions:

- images are NHWC, conv kernels are [kh, kw, c_in, c_out];
- a conv node with stride "half" is a fractionally-strided (transposed)
  convolution that doubles the spatial side; its kernel is stored
  [kh, kw, c_out, c_in], i.e. the kernel of the stride-2 conv it is the
  adjoint of;
- reductions that feed order-sensitive consumers (mean, softmax
  normalizer) accumulate in sorted order, so results are invariant to
  permutations of the reduced axis bit for bit.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

OP_KINDS = frozenset({
    "conv2d", "fully-connected", "relu", "sigmoid", "softmax", "flatten",
    "add", "multiply", "subtract", "mean", "abs", "square", "concat",
})


def _canonical_sum(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    # Sorting before summation fixes the accumulation order regardless of
    # element order, which makes object-axis reductions permutation-exact.
    return np.sort(x, axis=axis).sum(axis=axis, keepdims=keepdims)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# convolution plumbing

def _same_geometry(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) padding for "same" convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _conv_dims(node_name, h, w, kh, kw, stride, padding):
    if padding == "same":
        ho, pt, pb = _same_geometry(h, kh, stride)
        wo, pl, pr = _same_geometry(w, kw, stride)
    elif padding == "valid":
        if h < kh or w < kw:
            raise ShapeError(node_name, f"valid conv needs input >= kernel, got {(h, w)} vs {(kh, kw)}")
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ShapeError(node_name, f"unknown padding {padding!r}")
    return ho, wo, (pt, pb, pl, pr)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pads) -> np.ndarray:
    """[n, h, w, c] -> [n, ho, wo, kh, kw, c] patch tensor."""
    pt, pb, pl, pr = pads
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # [n, h', w', c, kh, kw]
    win = win[:, ::stride, ::stride]
    return np.ascontiguousarray(np.moveaxis(win, 3, 5))


def _col2im(dcols: np.ndarray, h: int, w: int, stride: int, pads) -> np.ndarray:
    """Scatter-add [n, ho, wo, kh, kw, c] patches back to [n, h, w, c]."""
    n, ho, wo, kh, kw, c = dcols.shape
    pt, pb, pl, pr = pads
    out = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=dcols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            out[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :] += dcols[:, :, :, ki, kj, :]
    return out[:, pt:pt + h, pl:pl + w, :]


def _conv2d_check(node, x, w, b):
    if x.ndim != 4:
        raise ShapeError(node.name, f"conv2d input must be NHWC, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(node.name, f"conv2d kernel must be rank 4, got shape {w.shape}")
    if b.ndim != 1:
        raise ShapeError(node.name, f"conv2d bias must be rank 1, got shape {b.shape}")


def _conv2d_fwd(node, xs):
    x, w, b = xs
    _conv2d_check(node, x, w, b)
    stride = node.attrs.get("stride", 1)
    padding = node.attrs.get("padding", "same")
    n, h, wd, _ = x.shape
    if stride == "half":
        # transposed conv, spatial side doubles; kernel is [kh, kw, c_out, c_in]
        kh, kw, cout, cin = w.shape
        if x.shape[3] != cin or b.shape[0] != cout:
            raise ShapeError(node.name, f"half-stride conv got input {x.shape}, kernel {w.shape}, bias {b.shape}")
        ho, wo = 2 * h, 2 * wd
        _, _, pads = _conv_dims(node.name, ho, wo, kh, kw, 2, "same")
        dcols = x.reshape(n * h * wd, cin) @ w.reshape(kh * kw * cout, cin).T
        y = _col2im(dcols.reshape(n, h, wd, kh, kw, cout), ho, wo, 2, pads)
        return y + b
    if stride not in (1, 2):
        raise ShapeError(node.name, f"conv2d stride must be 1, 2 or 'half', got {stride!r}")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin or b.shape[0] != cout:
        raise ShapeError(node.name, f"conv2d got input {x.shape}, kernel {w.shape}, bias {b.shape}")
    ho, wo, pads = _conv_dims(node.name, h, wd, kh, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, pads)
    y = cols.reshape(n * ho * wo, kh * kw * cin) @ w.reshape(kh * kw * cin, cout)
    return y.reshape(n, ho, wo, cout) + b


def _conv2d_bwd(node, xs, y, gy):
    x, w, b = xs
    stride = node.attrs.get("stride", 1)
    padding = node.attrs.get("padding", "same")
    n, h, wd, _ = x.shape
    gb = gy.sum(axis=(0, 1, 2))
    if stride == "half":
        kh, kw, cout, cin = w.shape
        ho, wo = 2 * h, 2 * wd
        _, _, pads = _conv_dims(node.name, ho, wo, kh, kw, 2, "same")
        gcols = _im2col(gy, kh, kw, 2, pads).reshape(n * h * wd, kh * kw * cout)
        gx = (gcols @ w.reshape(kh * kw * cout, cin)).reshape(x.shape)
        gw = (gcols.T @ x.reshape(n * h * wd, cin)).reshape(w.shape)
        return [gx, gw, gb]
    kh, kw, cin, cout = w.shape
    ho, wo, pads = _conv_dims(node.name, h, wd, kh, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, pads).reshape(n * ho * wo, kh * kw * cin)
    gy_mat = gy.reshape(n * ho * wo, cout)
    gw = (cols.T @ gy_mat).reshape(w.shape)
    dcols = (gy_mat @ w.reshape(kh * kw * cin, cout).T).reshape(n, ho, wo, kh, kw, cin)
    gx = _col2im(dcols, h, wd, stride, pads)
    return [gx, gw, gb]


# ---------------------------------------------------------------------------
# dense, activations, shape ops

def _fc_fwd(node, xs):
    x, w, b = xs
    if x.ndim != 2:
        raise ShapeError(node.name, f"fully-connected input must be rank 2, got shape {x.shape}")
    if w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(node.name, f"fully-connected got input {x.shape}, weight {w.shape}, bias {b.shape}")
    return x @ w + b


def _fc_bwd(node, xs, y, gy):
    x, w, _ = xs
    return [gy @ w.T, x.T @ gy, gy.sum(axis=0)]


def _relu_fwd(node, xs):
    return np.maximum(xs[0], 0)


def _relu_bwd(node, xs, y, gy):
    return [gy * (xs[0] > 0)]


def _sigmoid_fwd(node, xs):
    x = xs[0]
    # split by sign to avoid exp overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_bwd(node, xs, y, gy):
    return [gy * y * (1.0 - y)]


def _softmax_fwd(node, xs):
    x = xs[0]
    axis = node.attrs.get("axis", -1)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / _canonical_sum(z, axis=axis, keepdims=True)


def _softmax_bwd(node, xs, y, gy):
    axis = node.attrs.get("axis", -1)
    inner = (gy * y).sum(axis=axis, keepdims=True)
    return [y * (gy - inner)]


def _flatten_fwd(node, xs):
    x = xs[0]
    if x.ndim < 2:
        raise ShapeError(node.name, f"flatten input must have a leading batch axis, got shape {x.shape}")
    return x.reshape(x.shape[0], -1)


def _flatten_bwd(node, xs, y, gy):
    return [gy.reshape(xs[0].shape)]


# ---------------------------------------------------------------------------
# arithmetic and reductions

def _add_fwd(node, xs):
    return xs[0] + xs[1]


def _add_bwd(node, xs, y, gy):
    return [_unbroadcast(gy, xs[0].shape), _unbroadcast(gy, xs[1].shape)]


def _subtract_fwd(node, xs):
    return xs[0] - xs[1]


def _subtract_bwd(node, xs, y, gy):
    return [_unbroadcast(gy, xs[0].shape), _unbroadcast(-gy, xs[1].shape)]


def _multiply_fwd(node, xs):
    return xs[0] * xs[1]


def _multiply_bwd(node, xs, y, gy):
    a, b = xs
    return [_unbroadcast(gy * b, a.shape), _unbroadcast(gy * a, b.shape)]


def _mean_fwd(node, xs):
    x = xs[0]
    axis = node.attrs.get("axis")
    if axis is None:
        return np.asarray(_canonical_sum(x) / x.size, dtype=x.dtype)
    return _canonical_sum(x, axis=axis) / x.shape[axis]


def _mean_bwd(node, xs, y, gy):
    x = xs[0]
    axis = node.attrs.get("axis")
    if axis is None:
        return [np.broadcast_to(gy / x.size, x.shape)]
    g = np.expand_dims(gy, axis) / x.shape[axis]
    return [np.broadcast_to(g, x.shape)]


def _abs_fwd(node, xs):
    return np.abs(xs[0])


def _abs_bwd(node, xs, y, gy):
    return [gy * np.sign(xs[0])]


def _square_fwd(node, xs):
    x = xs[0]
    return x * x


def _square_bwd(node, xs, y, gy):
    return [gy * 2 * xs[0]]


def _concat_fwd(node, xs):
    return np.concatenate(xs, axis=node.attrs["axis"])


def _concat_bwd(node, xs, y, gy):
    axis = node.attrs["axis"]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return list(np.split(gy, sizes, axis=axis))


FORWARD = {
    "conv2d": _conv2d_fwd,
    "fully-connected": _fc_fwd,
    "relu": _relu_fwd,
    "sigmoid": _sigmoid_fwd,
    "softmax": _softmax_fwd,
    "flatten": _flatten_fwd,
    "add": _add_fwd,
    "multiply": _multiply_fwd,
    "subtract": _subtract_fwd,
    "mean": _mean_fwd,
    "abs": _abs_fwd,
    "square": _square_fwd,
    "concat": _concat_fwd,
}

BACKWARD = {
    "conv2d": _conv2d_bwd,
    "fully-connected": _fc_bwd,
    "relu": _relu_bwd,
    "sigmoid": _sigmoid_bwd,
    "softmax": _softmax_bwd,
    "flatten": _flatten_bwd,
    "add": _add_bwd,
    "multiply": _multiply_bwd,
    "subtract": _subtract_bwd,
    "mean": _mean_bwd,
    "abs": _abs_bwd,
    "square": _square_bwd,
    "concat": _concat_bwd,
}
