"""Differentiable primitives.

Every function takes and returns :class:`Tensor` and registers a backward
closure via :func:`make_node`. Subgradients at kinks (relu at 0, ties in
max pooling, |x| at 0) are taken as 0 or routed to the first maximal entry.
"""

from __future__ import annotations

import numpy as np

from biclip.autodiff.tensor import Tensor, make_node
from biclip.errors import DegenerateInputError, ShapeError

COSINE_EPS = 1e-8


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    if not isinstance(b, Tensor):
        b = _lift(b, a)
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; values sitting exactly on a bound keep gradient 1."""
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return make_node(out, (a,), lambda g: (g * inside,), "clamp")


def power(a: Tensor, exponent: float) -> Tensor:
    """a ** exponent for a >= 0; the derivative at a == 0 is taken as 0."""
    out = a.data**exponent

    def bw(g):
        safe = np.where(a.data > 0, a.data, 1)
        return (np.where(a.data > 0, g * exponent * safe ** (exponent - 1), 0).astype(g.dtype),)

    return make_node(out, (a,), bw, "power")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    # keep the open interval even where the dtype rounds to 0 or 1
    lo = np.finfo(x.dtype).tiny
    hi = np.nextafter(x.dtype.type(1), x.dtype.type(0))
    out = np.clip(out, lo, hi)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- linear algebra --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul needs at least 1-d operands")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ad, bd = a.data, b.data
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape).reshape(bd.shape)
        return ga, gb

    return make_node(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects last dim {weight.shape[1]}, got input shape {x.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return make_node(out, parents, bw, "linear")


# -- shape manipulation -------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def _basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g):
        ga = np.zeros_like(a.data, dtype=g.dtype)
        if _basic_index(index):
            ga[index] = g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return make_node(np.array(out, copy=True), (a,), bw, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        rest = [n for i, n in enumerate(t.shape) if i != axis]
        ref = [n for i, n in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or rest != ref:
            raise ShapeError(f"concat along axis {axis}: shapes {tensors[0].shape} and {t.shape} disagree")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tensors, bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(out, tensors, bw, "stack")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Join along the channel axis (axis -3 of [..., C, H, W])."""
    if a.ndim < 3 or a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    return concat([a, b], axis=a.ndim - 3)


def split_channels(x: Tensor, first: int) -> tuple[Tensor, Tensor]:
    c = x.ndim - 3
    lead = (slice(None),) * c
    return getitem(x, lead + (slice(0, first),)), getitem(x, lead + (slice(first, None),))


# -- reductions -------------------------------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_node(np.asarray(out, dtype=a.dtype), (a,), bw, "mean")


def amax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum over ``axis``; the gradient goes to the first maximal entry."""
    axes = _norm_axes(axis, a.ndim)
    keep = [i for i in range(a.ndim) if i not in axes]
    moved = a.data.transpose(keep + list(axes))
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if keepdims:
        out = np.expand_dims(out, axes)

    def bw(g):
        gg = g if not keepdims else g.reshape(lead)
        gflat = np.zeros_like(flat, dtype=g.dtype)
        np.put_along_axis(gflat, arg[..., None], gg[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (gmoved.transpose(np.argsort(keep + list(axes))),)

    return make_node(np.asarray(out), (a,), bw, "amax")


def amin(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return neg(amax(neg(a), axis=axis, keepdims=keepdims))


# -- spatial ---------------------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, zero padding, input [N,C,H,W], kernel [F,C,kh,kw].

    Computed as one batched matmul of the padded input against all kernel
    taps, followed by a shifted sum over taps.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} / padding={padding}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: kernel has {ck} input channels but input has C={c}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    taps = kernel.data.transpose(2, 3, 0, 1).reshape(kh * kw * f, c)
    z = np.matmul(taps, xp.reshape(n, c, hp * wp)).reshape(n, kh, kw, f, hp, wp)
    out = np.zeros((n, f, ho, wo), dtype=z.dtype)
    hspan, wspan = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out += z[:, i, j, :, i : i + hspan : stride, j : j + wspan : stride]
    del z
    if bias is not None:
        out += bias.data.reshape(1, f, 1, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        dz = np.zeros((n, kh, kw, f, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dz[:, i, j, :, i : i + hspan : stride, j : j + wspan : stride] = g
        dz = dz.reshape(n, kh * kw * f, hp * wp)
        gx = gk = None
        if x.requires_grad:
            gxp = np.matmul(taps.T, dz).reshape(n, c, hp, wp)
            gx = np.ascontiguousarray(gxp[:, :, padding : padding + h, padding : padding + w])
        if kernel.requires_grad:
            gt = np.matmul(dz, xp.reshape(n, c, hp * wp).transpose(0, 2, 1)).sum(axis=0)
            gk = gt.reshape(kh, kw, f, c).transpose(2, 3, 0, 1)
        if bias is None:
            return gx, gk
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gk, gb

    return make_node(out, parents, bw, "conv2d")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size``x``size`` max pooling over the last two axes (floor)."""
    *lead, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ShapeError(f"max_pool2d: input {h}x{w} smaller than window {size}")
    crop = x.data[..., : ho * size, : wo * size]
    blocks = crop.reshape(*lead, ho, size, wo, size)
    nl = len(lead)
    perm = list(range(nl)) + [nl, nl + 2, nl + 1, nl + 3]
    windows = blocks.transpose(perm).reshape(*lead, ho, wo, size * size)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros_like(windows, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gb = gw.reshape(*lead, ho, wo, size, size).transpose(np.argsort(perm)).reshape(*lead, ho * size, wo * size)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., : ho * size, : wo * size] = gb
        return (gx,)

    return make_node(out, (x,), bw, "max_pool2d")


def nearest_upsample2d(x: Tensor, scale: int = 2) -> Tensor:
    *lead, h, w = x.shape
    out = np.repeat(np.repeat(x.data, scale, axis=-2), scale, axis=-1)

    def bw(g):
        return (g.reshape(*lead, h, scale, w, scale).sum(axis=(-3, -1)),)

    return make_node(out, (x,), bw, "upsample")


def global_avg_pool(x: Tensor) -> Tensor:
    """[..., C, H, W] -> [..., C]."""
    return mean(x, axis=(-2, -1))


def gather_spatial(x: Tensor, index: np.ndarray, out_hw: tuple[int, int]) -> Tensor:
    """Resample [N,C,H,W] by a per-sample flat source index of shape [N, h*w].

    Every output pixel copies one input pixel, so flips, rotations and
    nearest-neighbour crops are all expressible as an index map.
    """
    n, c, h, w = x.shape
    index = np.asarray(index, dtype=np.intp)
    if index.shape != (n, out_hw[0] * out_hw[1]):
        raise ShapeError(f"gather_spatial: index shape {index.shape} does not match batch {n} x {out_hw}")
    flat = x.data.reshape(n, c, h * w)
    out = np.take_along_axis(flat, np.broadcast_to(index[:, None, :], (n, c, index.shape[1])), axis=-1)

    def bw(g):
        gf = np.zeros((n, c, h * w), dtype=g.dtype)
        g2 = g.reshape(n, c, -1)
        for k in range(n):
            np.add.at(gf[k], (slice(None), index[k]), g2[k])
        return (gf.reshape(x.shape),)

    return make_node(out.reshape(n, c, *out_hw), (x,), bw, "gather")


# -- distances ---------------------------------------------------------------------------


def l1_distance(a: Tensor, b) -> Tensor:
    """Mean absolute difference over all elements."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    count = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=diff.dtype)

    def bw(g):
        s = np.sign(diff) * (g / count)
        return s, -s

    return make_node(out, (a, b), bw, "l1")


def squared_l2_distance(a: Tensor, b, axis: int = -1) -> Tensor:
    """Sum of squared differences along ``axis``."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"squared_l2_distance: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = np.asarray((diff * diff).sum(axis=axis))

    def bw(g):
        gd = 2.0 * diff * np.expand_dims(g, axis)
        return gd, -gd

    return make_node(out, (a, b), bw, "sq_l2")


def cosine_similarity(a: Tensor, b, axis: int = -1, eps: float = COSINE_EPS) -> Tensor:
    """Cosine of the angle between ``a`` and ``b`` along ``axis``.

    Raises DegenerateInputError when either vector has norm below ``eps``
    rather than returning 0.
    """
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: shape mismatch {a.shape} vs {b.shape}")
    na = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axis, keepdims=True))
    if np.any(na < eps) or np.any(nb < eps):
        raise DegenerateInputError(f"cosine_similarity: vector norm below {eps}")
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    cos = np.clip(dot / (na * nb), -1.0, 1.0)

    def bw(g):
        gk = np.expand_dims(g, axis)
        ga = gk * (b.data / (na * nb) - cos * a.data / (na * na))
        gb = gk * (a.data / (na * nb) - cos * b.data / (nb * nb))
        return ga, gb

    return make_node(np.squeeze(cos, axis=axis), (a, b), bw, "cosine")
