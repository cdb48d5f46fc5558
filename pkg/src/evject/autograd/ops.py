"""The fixed op set used by the codec model and the proxy classifier.

Each op takes :class:`Tensor` (or array/scalar constants), computes its
result eagerly with numpy and registers a backward closure. Binary
elementwise ops accept numpy-style broadcasting; gradients are summed back
to the operand shape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import ndtr

from evject.autograd.tensor import Tensor, as_tensor, make_node
from evject.errors import ShapeError

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_shapes(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# --------------------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _pair(a, b)
    _binary_shapes(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)
    _binary_shapes(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _binary_shapes(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _pair(a, b)
    _binary_shapes(a, b, "div")
    out = a.data / b.data

    def backward(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), backward, "div")


def power(x, exponent):
    """``x ** exponent`` for a constant exponent; ``x`` must be positive if non-integer."""
    out = x.data**exponent

    def backward(g):
        return (g * exponent * x.data ** (exponent - 1),)

    return make_node(out, (x,), backward, "power")


def exp(x):
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def log2(x):
    inv = 1.0 / (x.data * np.log(2.0))
    return make_node(np.log2(x.data), (x,), lambda g: (g * inv,), "log2")


def sigmoid(x):
    out = _sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x):
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    return make_node(out, (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


def relu(x):
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope=0.01):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def abs(x):  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return make_node(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def clip(x, lo, hi):
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def lower_bound(x, bound):
    """``max(x, bound)``; gradient flows only where ``x`` is above the bound."""
    above = x.data > bound
    out = np.where(above, x.data, x.dtype.type(bound))
    return make_node(out, (x,), lambda g: (g * above,), "lower_bound")


def add_uniform_noise(x, rng):
    """Additive U[-0.5, 0.5) noise; the gradient passes straight through."""
    noise = rng.uniform(-0.5, 0.5, size=x.shape).astype(x.dtype)
    return make_node(x.data + noise, (x,), lambda g: (g,), "noise")


def round_half_away(values):
    values = np.asarray(values)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def round_ste(x):
    """Hard rounding (half away from zero) with a straight-through gradient."""
    out = round_half_away(x.data).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g,), "round_ste")


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


# --------------------------------------------------------------------------- reductions / shape


def sum(x, axis=None):  # noqa: A001
    out = np.sum(x.data, axis=axis)
    out = np.asarray(out, dtype=x.dtype)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(out, (x,), backward, "sum")


def mean(x, axis=None):
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis), 1.0 / count)


def reshape(x, shape):
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def getitem(x, key):
    """Basic (non-fancy) indexing; the gradient scatters back into a zero array."""
    out = np.array(x.data[key], dtype=x.dtype)

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return make_node(out, (x,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_node(out, tuple(tensors), backward, "concat")


# --------------------------------------------------------------------------- dense layers


def affine(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``x`` (N, F), ``weight`` (O, F)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"affine: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine: bias {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "affine")


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), backward, "log_softmax")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return mul(sum(mul(log_softmax(logits), onehot)), -1.0 / len(labels))


# --------------------------------------------------------------------------- convolutions


def _triple(v):
    return (v, v, v) if np.isscalar(v) else tuple(v)


def _windows(xp, ksize, stride, out_spatial):
    """Strided view (N, C, oD, oH, oW, kD, kH, kW) over a padded input."""
    n, c = xp.shape[:2]
    sn, sc, sd, sh, sw = xp.strides
    shape = (n, c) + tuple(out_spatial) + tuple(ksize)
    strides = (sn, sc, sd * stride[0], sh * stride[1], sw * stride[2], sd, sh, sw)
    return as_strided(xp, shape=shape, strides=strides, writeable=False)


def _scatter_windows(cols, full_spatial, ksize, stride):
    """Adjoint of :func:`_windows`.

    ``cols`` is laid out (C, kD, kH, kW, N, oD, oH, oW); returns an
    (N, C, *full_spatial) grid. Accumulation runs channel-last so every
    shifted add covers long contiguous runs.
    """
    c = cols.shape[0]
    n = cols.shape[4]
    od, oh, ow = cols.shape[5:8]
    taps = np.ascontiguousarray(cols.transpose(1, 2, 3, 5, 6, 7, 0, 4))
    out = np.zeros(tuple(full_spatial) + (c, n), dtype=cols.dtype)
    sd, sh, sw = stride
    for a in range(ksize[0]):
        for b in range(ksize[1]):
            for e in range(ksize[2]):
                out[a : a + sd * od : sd, b : b + sh * oh : sh, e : e + sw * ow : sw] += taps[a, b, e]
    return np.ascontiguousarray(out.transpose(4, 3, 0, 1, 2))


def _im2col(xp, ksize, stride, out_spatial):
    """Contiguous (N*oD*oH*oW, C*kD*kH*kW) patch matrix of a padded input."""
    win = _windows(xp, ksize, stride, out_spatial)
    n, c = xp.shape[:2]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    return cols.reshape(n * int(np.prod(out_spatial)), c * int(np.prod(ksize)))


def conv_output_shape(spatial, ksize, stride, padding):
    ksize, stride, padding = _triple(ksize), _triple(stride), _triple(padding)
    return tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(spatial, ksize, stride, padding))


def conv3d(x, weight, bias=None, stride=1, padding=0):
    """3D cross-correlation with zero padding.

    ``x`` is (N, C, D, H, W) and ``weight`` is (O, C, kD, kH, kW).
    """
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or weight.ndim != 5 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv3d: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv3d: bias {bias.shape} != ({weight.shape[0]},)")
    n = x.shape[0]
    n_out = weight.shape[0]
    ksize = weight.shape[2:]
    out_spatial = conv_output_shape(x.shape[2:], ksize, stride, padding)
    if min(out_spatial) < 1:
        raise ShapeError(f"conv3d: empty output for input {x.shape} and kernel {ksize}")
    pad = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad)
    cols = _im2col(xp, ksize, stride, out_spatial)
    wmat = weight.data.reshape(n_out, -1)
    out = (cols @ wmat.T).reshape((n,) + out_spatial + (n_out,))
    out = np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))
    if bias is not None:
        out += bias.data[None, :, None, None, None]

    def backward(g):
        gmat = g.transpose(0, 2, 3, 4, 1).reshape(-1, n_out)
        gw = (gmat.T @ cols).reshape(weight.shape)
        # (C, k, k, k, N, oD, oH, oW) layout for the scatter
        gcols = np.tensordot(weight.data, g, axes=([0], [1]))
        gxp = _scatter_windows(gcols, xp.shape[2:], ksize, stride)
        d, h, w = x.shape[2:]
        gx = gxp[:, :, padding[0] : padding[0] + d, padding[1] : padding[1] + h, padding[2] : padding[2] + w]
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv3d")


def conv_transpose3d(x, weight, bias=None, stride=2, padding=0, output_shape=None):
    """Transposed 3D convolution (adjoint of :func:`conv3d`).

    ``x`` is (N, Cin, D, H, W) and ``weight`` is (Cin, Cout, kD, kH, kW). The
    spatial output defaults to ``(n - 1) * stride - 2 * padding + k``; pass
    ``output_shape`` to add output padding (at most ``stride - 1`` per axis).
    """
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or weight.ndim != 5 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose3d: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"conv_transpose3d: bias {bias.shape} != ({weight.shape[1]},)")
    n, c_in = x.shape[:2]
    ksize = weight.shape[2:]
    in_spatial = x.shape[2:]
    base = tuple((m - 1) * s - 2 * p + k for m, s, p, k in zip(in_spatial, stride, padding, ksize))
    if output_shape is None:
        output_shape = base
    output_shape = tuple(output_shape)
    extra = tuple(o - b for o, b in zip(output_shape, base))
    if any(e < 0 or e >= s for e, s in zip(extra, stride)):
        raise ShapeError(f"conv_transpose3d: output {output_shape} unreachable from input {in_spatial}")
    full = tuple((m - 1) * s + k + e for m, s, k, e in zip(in_spatial, stride, ksize, extra))

    cols = np.tensordot(weight.data, x.data, axes=([0], [1]))  # Cout,k,k,k,N,D,H,W
    buf = _scatter_windows(cols, full, ksize, stride)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + o) for p, o in zip(padding, output_shape))
    out = np.ascontiguousarray(buf[crop])
    if bias is not None:
        out += bias.data[None, :, None, None, None]
    xmat = x.data.transpose(0, 2, 3, 4, 1).reshape(-1, c_in)

    def backward(g):
        gfull = np.zeros(buf.shape, dtype=g.dtype)
        gfull[crop] = g
        gcols = _im2col(gfull, ksize, stride, in_spatial)  # N*D*H*W, Cout*k^3
        wmat = weight.data.reshape(c_in, -1)
        gx = (gcols @ wmat.T).reshape((n,) + tuple(in_spatial) + (c_in,))
        gx = np.ascontiguousarray(gx.transpose(0, 4, 1, 2, 3))
        gw = (xmat.T @ gcols).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv_transpose3d")


def bias_add(x, bias):
    """Add a per-channel bias to an (N, C, ...) tensor."""
    if bias.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"bias_add: bias {bias.shape} does not match channels of {x.shape}")
    view = (1, -1) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    return make_node(
        x.data + bias.data.reshape(view), (x, bias), lambda g: (g, g.sum(axis=axes)), "bias_add"
    )


# --------------------------------------------------------------------------- likelihood / loss kernels


def gaussian_likelihood(y, sigma):
    """Probability mass of the unit bin around ``y`` under N(0, sigma²).

    Evaluated on the lower tail (``|y|``) so that large values keep precision.
    """
    if y.shape != sigma.shape:
        raise ShapeError(f"gaussian_likelihood: {y.shape} vs {sigma.shape}")
    ay = np.abs(y.data)
    s = sigma.data
    upper = (0.5 - ay) / s
    lower = (-0.5 - ay) / s
    out = (ndtr(upper) - ndtr(lower)).astype(y.dtype)

    def backward(g):
        pu = np.exp(-0.5 * upper**2) / _SQRT_2PI
        pl = np.exp(-0.5 * lower**2) / _SQRT_2PI
        d_ay = (-pu + pl) / s
        gy = g * d_ay * np.sign(y.data)
        gs = g * (-pu * upper + pl * lower) / s
        return gy, gs

    return make_node(out, (y, sigma), backward, "gaussian_likelihood")


def logistic_likelihood(z, loc, scale):
    """Probability mass of the unit bin around ``z`` under a logistic(loc, scale).

    ``loc`` and ``scale`` broadcast against ``z`` (one value per channel).
    """
    _binary_shapes(z, loc, "logistic_likelihood")
    _binary_shapes(z, scale, "logistic_likelihood")
    d = z.data - loc.data
    flip = np.where(d > 0, -1.0, 1.0).astype(z.dtype)
    ad = d * flip  # <= 0: evaluate on the lower tail
    upper = (ad + 0.5) / scale.data
    lower = (ad - 0.5) / scale.data
    su, sl = _sigmoid(upper), _sigmoid(lower)
    out = su - sl

    def backward(g):
        du = su * (1.0 - su)
        dl = sl * (1.0 - sl)
        d_ad = (du - dl) / scale.data
        gz = g * d_ad * flip
        gs = g * (-(du * upper) + dl * lower) / scale.data
        return _unbroadcast(gz, z.shape), _unbroadcast(-gz, loc.shape), _unbroadcast(gs, scale.shape)

    return make_node(out, (z, loc, scale), backward, "logistic_likelihood")


def focal_loss(prob, target, gamma=2.0, alpha_pos=0.5, eps=1e-7):
    """Elementwise focal loss (nats) of probabilities against binary targets.

    ``prob`` is clamped to ``[eps, 1 - eps]``; the clamp blocks the gradient.
    """
    target = np.asarray(target)
    if target.shape != prob.shape:
        raise ShapeError(f"focal_loss: prob {prob.shape} vs target {target.shape}")
    t = target.astype(bool)
    p = prob.data
    inside = (p >= eps) & (p <= 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    pt = np.where(t, pc, 1.0 - pc)
    alpha = np.where(t, alpha_pos, 1.0 - alpha_pos).astype(p.dtype)
    one_m = 1.0 - pt
    log_pt = np.log(pt)
    mod = one_m**gamma
    out = (-alpha * mod * log_pt).astype(p.dtype)

    def backward(g):
        if gamma == 0:
            d_pt = -alpha / pt
        else:
            d_pt = -alpha * (-gamma * one_m ** (gamma - 1) * log_pt + mod / pt)
        d_p = np.where(t, d_pt, -d_pt) * inside
        return (g * d_p,)

    return make_node(out, (prob,), backward, "focal_loss")


def focal_loss_value(prob, target, gamma=2.0, alpha_pos=0.5, eps=1e-7):
    """Scalar/array focal loss without building a graph."""
    out = focal_loss(Tensor(np.asarray(prob, dtype=np.float64)), np.asarray(target), gamma, alpha_pos, eps)
    return out.data
