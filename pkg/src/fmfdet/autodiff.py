"""Reverse-mode autodiff on numpy arrays, covering the pipeline's operator set.

Dense elementwise math, matmul, 2D convolution / batch norm / pooling, the
sparse scatter/gather ops used to build pseudo-images, and bilinear map
sampling. Each op records its parents and a backward function; `backward`
walks the graph once in reverse topological order and accumulates gradients
on every tensor created with ``requires_grad=True``.

Forward results are plain numpy and bit-deterministic for fixed inputs.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / decode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional value with an optional gradient.

    ``grad`` is populated by ``backward`` and accumulates across calls until
    ``zero_grad`` (or manual reset). Tensors produced by ops are treated as
    immutable; mutate ``data`` only on leaves you own (e.g. optimizer steps).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def _needs_grad(self):
        return self.requires_grad or self._parents != ()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent):
        return pow(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def backward(self):
        backward(self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    """Create an op result; record the graph only when someone needs grads."""
    if _grad_enabled and any(p._needs_grad() for p in parents):
        out = Tensor(data)
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        return out
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --------------------------------------------------------------------------
# elementwise / reduction ops
# --------------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), bw)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bw)


def neg(a):
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def pow(a, exponent):
    a = _wrap(a)
    p = float(exponent)
    data = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _node(data, (a,), bw)


def sqrt(a):
    a = _wrap(a)
    data = np.sqrt(a.data)

    def bw(g):
        return (g * (0.5 / data),)

    return _node(data, (a,), bw)


def log(a):
    """Natural log; the caller guarantees strictly positive input (clip first)."""
    a = _wrap(a)
    data = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return _node(data, (a,), bw)


def exp(a):
    a = _wrap(a)
    data = np.exp(a.data)

    def bw(g):
        return (g * data,)

    return _node(data, (a,), bw)


def abs(a):
    a = _wrap(a)
    data = np.abs(a.data)

    def bw(g):
        return (g * np.sign(a.data),)

    return _node(data, (a,), bw)


def clip(a, lo, hi):
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    a = _wrap(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * mask,)

    return _node(data, (a,), bw)


def relu(a):
    a = _wrap(a)
    mask = a.data > 0
    data = a.data * mask

    def bw(g):
        return (g * mask,)

    return _node(data, (a,), bw)


def sigmoid(a):
    a = _wrap(a)
    # numerically stable two-sided form
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                    np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))

    def bw(g):
        return (g * data * (1.0 - data),)

    return _node(data, (a,), bw)


def sum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.data.shape).copy(),)

    return _node(data, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)

    def bw(g):
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return _node(data, (a, b), bw)


def max_over_axis(a, axis, keepdims=False):
    """Max reduction along one axis; gradient routes to the first argmax."""
    a = _wrap(a)
    data = a.data.max(axis=axis, keepdims=keepdims)
    idx = np.argmax(a.data, axis=axis)

    def bw(g):
        gx = np.zeros_like(a.data)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), g_exp, axis)
        return (gx,)

    return _node(data, (a,), bw)


# --------------------------------------------------------------------------
# shape ops
# --------------------------------------------------------------------------

def reshape(a, shape):
    a = _wrap(a)
    orig = a.data.shape

    def bw(g):
        return (g.reshape(orig),)

    return _node(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    a = _wrap(a)
    inv = np.argsort(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _node(a.data.transpose(axes), (a,), bw)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    split_at = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, split_at, axis=axis))

    return _node(data, tuple(tensors), bw)


def concat_channels(a, b):
    """Concatenate two [N,C,H,W] maps along the channel axis."""
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(f"concat_channels: {a.data.shape} vs {b.data.shape}")
    return concat((a, b), axis=1)


def index_rows(a, idx):
    """Gather rows of a 2D tensor; duplicate indices accumulate in backward."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[idx]

    def bw(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(data, (a,), bw)


# --------------------------------------------------------------------------
# matmul / linear
# --------------------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2D operands")
    data = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(data, (a, b), bw)


def linear(x, weight, bias=None):
    """x [M,D] @ weight [D,F] + bias [F]."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# --------------------------------------------------------------------------
# conv / pool / norm
# --------------------------------------------------------------------------

def _conv_out_dim(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(w, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of x [N,C,H,W] with weight [F,C,kh,kw].

    `padding` is symmetric zero padding in pixels, or "same" (odd kernels,
    stride 1 output geometry H' = (H + 2p - k)/stride + 1).
    """
    x, weight = _wrap(x), _wrap(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects x [N,C,H,W] and weight [F,C,kh,kw]")
    f, cin, kh, kw = weight.data.shape
    if x.data.shape[1] != cin:
        raise ShapeError(f"conv2d channel mismatch: x has {x.data.shape[1]}, weight expects {cin}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("same padding requires odd kernels")
        padding = (kh - 1) // 2
    pad = int(padding)
    n = x.data.shape[0]
    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(f, cin * kh * kw)
    out = np.matmul(wmat[None], cols).reshape(n, f, oh, ow)
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (f,):
            raise ShapeError("conv2d bias must have shape [F]")
        out = out + bias.data.reshape(1, f, 1, 1)
        parents.append(bias)

    def bw(g):
        gflat = g.reshape(n, f, oh * ow)
        gw = np.einsum("nfl,ncl->fc", gflat, cols).reshape(weight.data.shape)
        gcols = np.matmul(wmat.T[None], gflat)
        gx = _col2im(gcols, x.data.shape, kh, kw, stride, pad)
        if len(parents) == 3:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    return _node(out, tuple(parents), bw)


def maxpool2d(x, kernel, stride=1, padding=0):
    """Sliding-window max, forward only (used for decode-time peak picking).

    Out-of-image positions act as -inf, so zero padding never wins a window.
    The result is detached from the graph.
    """
    xd = x.data if isinstance(x, Tensor) else _as_array(x)
    if xd.ndim != 4:
        raise ShapeError("maxpool2d expects [N,C,H,W]")
    n, c, h, w = xd.shape
    oh = _conv_out_dim(h, kernel, stride, padding)
    ow = _conv_out_dim(w, kernel, stride, padding)
    xp = np.full((n, c, h + 2 * padding, w + 2 * padding), -np.inf, dtype=xd.dtype)
    xp[:, :, padding:padding + h, padding:padding + w] = xd
    out = np.full((n, c, oh, ow), -np.inf, dtype=xd.dtype)
    for i in range(kernel):
        for j in range(kernel):
            np.maximum(out, xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride], out=out)
    return Tensor(out)


class RunningStats:
    """Mutable running mean/var buffers for batch norm (not differentiated)."""

    def __init__(self, channels, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, batch_mean, batch_var, momentum):
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean
        self.var = (1.0 - momentum) * self.var + momentum * batch_var


def batchnorm(x, gamma, beta, stats, training, eps=1e-5, momentum=0.1):
    """Normalize over all axes except channel axis 1.

    Train mode uses batch statistics (biased variance) and updates `stats`;
    eval mode normalizes by the stored running statistics.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batchnorm expects per-channel parameters of shape ({c},)")
    axes = (0,) + tuple(range(2, x.data.ndim))
    shape = (1, c) + (1,) * (x.data.ndim - 2)
    m = x.data.size // c

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.update(mu, var, momentum)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
        out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

        def bw(g):
            gg = (g * xhat).sum(axis=axes)
            gb = g.sum(axis=axes)
            gxhat = g * gamma.data.reshape(shape)
            gx = (gxhat - gxhat.mean(axis=axes).reshape(shape)
                  - xhat * (gxhat * xhat).mean(axis=axes).reshape(shape))
            gx *= inv_std.reshape(shape)
            return gx, gg, gb

        return _node(out, (x, gamma, beta), bw)

    inv_std = 1.0 / np.sqrt(stats.var + eps)
    xhat = (x.data - stats.mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def bw_eval(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gx = g * (gamma.data * inv_std).reshape(shape)
        return gx, gg, gb

    return _node(out, (x, gamma, beta), bw_eval)


# --------------------------------------------------------------------------
# segment / scatter / sampling ops
# --------------------------------------------------------------------------

def _segment_bounds(starts, total):
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.append(starts[1:], total)
    if np.any(ends <= starts):
        raise ShapeError("segment ops require non-empty contiguous segments")
    return starts, ends


def segment_max(x, starts):
    """Per-segment max over contiguous row segments of x [M,C].

    Gradient routes to the first maximal row of each segment (per channel).
    """
    x = _wrap(x)
    m, c = x.data.shape
    starts, ends = _segment_bounds(starts, m)
    data = np.maximum.reduceat(x.data, starts, axis=0)
    seg_ids = np.repeat(np.arange(len(starts)), ends - starts)
    is_max = x.data == data[seg_ids]
    order = np.where(is_max, np.arange(m)[:, None], m)
    first_idx = np.minimum.reduceat(order, starts, axis=0)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[first_idx, np.arange(c)[None, :]] += g
        return (gx,)

    return _node(data, (x,), bw)


def segment_mean(x, starts):
    """Per-segment mean over contiguous row segments of x [M,C]."""
    x = _wrap(x)
    m, _ = x.data.shape
    starts, ends = _segment_bounds(starts, m)
    counts = (ends - starts).astype(x.data.dtype)
    data = np.add.reduceat(x.data, starts, axis=0) / counts[:, None]
    seg_ids = np.repeat(np.arange(len(starts)), ends - starts)

    def bw(g):
        return ((g / counts[:, None])[seg_ids],)

    return _node(data, (x,), bw)


def scatter_to_grid(features, coords, dims):
    """Scatter per-cell features [P,C] to a dense [1,C,H,W] grid.

    `coords` is [P,2] integer (ix, iy) with unique in-grid entries;
    `dims` is (W, H). Untouched cells are zero.
    """
    features = _wrap(features)
    coords = np.asarray(coords, dtype=np.int64)
    w, h = int(dims[0]), int(dims[1])
    p, c = features.data.shape
    if coords.shape != (p, 2):
        raise ShapeError(f"coords shape {coords.shape} does not match {p} feature rows")
    if p:
        ix, iy = coords[:, 0], coords[:, 1]
        if ix.min() < 0 or iy.min() < 0 or ix.max() >= w or iy.max() >= h:
            raise IndexError("scatter coords outside the grid")
        flat = iy * w + ix
        if np.unique(flat).size != p:
            raise IndexError("scatter coords must be unique")
    out = np.zeros((1, c, h, w), dtype=features.data.dtype)
    if p:
        out[0, :, coords[:, 1], coords[:, 0]] = features.data

    def bw(g):
        if not p:
            return (np.zeros_like(features.data),)
        return (g[0, :, coords[:, 1], coords[:, 0]],)

    return _node(out, (features,), bw)


def gather_pixels(x, ys, xs):
    """Gather per-pixel vectors from x [1,C,h,w] at (ys, xs) -> [M,C].

    Duplicate pixels are allowed; backward accumulates.
    """
    x = _wrap(x)
    ys = np.asarray(ys, dtype=np.int64)
    xs = np.asarray(xs, dtype=np.int64)
    data = x.data[0, :, ys, xs]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx[0].transpose(1, 2, 0), (ys, xs), g)
        return (gx,)

    return _node(data, (x,), bw)


_SNAP_TOL = 1e-7


def bilinear_sample(feature_map, sample_grid):
    """Sample feature_map [N,C,H,W] at sample_grid [N,Hg,Wg,2] pixel coords.

    Grid entries are (x, y) source coordinates in pixel units; out-of-map
    samples read as zero. Coordinates within 1e-7 of an integer are snapped
    so integer translations degenerate to exact index shifts. Differentiable
    in the map only; the grid is treated as a constant.
    """
    feature_map = _wrap(feature_map)
    grid = sample_grid.data if isinstance(sample_grid, Tensor) else np.asarray(sample_grid, dtype=np.float64)
    n, c, h, w = feature_map.data.shape
    if grid.ndim != 4 or grid.shape[0] != n or grid.shape[3] != 2:
        raise ShapeError("sample_grid must be [N,Hg,Wg,2]")
    gx = grid[..., 0]
    gy = grid[..., 1]
    gx = np.where(np.abs(gx - np.round(gx)) < _SNAP_TOL, np.round(gx), gx)
    gy = np.where(np.abs(gy - np.round(gy)) < _SNAP_TOL, np.round(gy), gy)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    wx = gx - x0
    wy = gy - y0
    corners = []
    for dy, dx, cw in ((0, 0, (1 - wy) * (1 - wx)), (0, 1, (1 - wy) * wx),
                       (1, 0, wy * (1 - wx)), (1, 1, wy * wx)):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        corners.append((np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1), cw * valid))

    out = np.zeros((n, c) + grid.shape[1:3], dtype=feature_map.data.dtype)
    for yy, xx, cw in corners:
        for b in range(n):
            out[b] += feature_map.data[b][:, yy[b], xx[b]] * cw[b][None]

    def bw(g):
        gm = np.zeros_like(feature_map.data)
        for yy, xx, cw in corners:
            for b in range(n):
                np.add.at(gm[b].transpose(1, 2, 0), (yy[b], xx[b]), (g[b] * cw[b][None]).transpose(1, 2, 0))
        return (gm,)

    return _node(out, (feature_map,), bw)


def resample_nearest(x, out_hw):
    """Nearest-neighbor resize of x [N,C,H,W] by an integer factor.

    Upsampling repeats pixels; downsampling keeps the top-left pixel of each
    block. Non-integer ratios are a shape error.
    """
    x = _wrap(x)
    n, c, h, w = x.data.shape
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh == h and ow == w:
        return _node(x.data.copy(), (x,), lambda g: (g,))
    if oh >= h:
        if oh % h or ow % w:
            raise ShapeError(f"resample {h}x{w} -> {oh}x{ow} is not an integer factor")
        fy, fx = oh // h, ow // w
        data = np.repeat(np.repeat(x.data, fy, axis=2), fx, axis=3)

        def bw_up(g):
            return (g.reshape(n, c, h, fy, w, fx).sum(axis=(3, 5)),)

        return _node(data, (x,), bw_up)
    if h % oh or w % ow:
        raise ShapeError(f"resample {h}x{w} -> {oh}x{ow} is not an integer factor")
    fy, fx = h // oh, w // ow
    data = x.data[:, :, ::fy, ::fx].copy()

    def bw_down(g):
        gx = np.zeros_like(x.data)
        gx[:, :, ::fy, ::fx] = g
        return (gx,)

    return _node(data, (x,), bw_down)


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def backward(loss):
    """Reverse-accumulate gradients of a scalar loss onto requires_grad leaves.

    Repeated calls without zeroing accumulate into `.grad`.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p._needs_grad():
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p._needs_grad():
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
