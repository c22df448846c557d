"""Differentiable primitives used by the Densenet variants.

Convolutions follow the cross-correlation convention (kernels are not
flipped). Layouts are channels-first: N×C×H×W for 2-D, N×C×D×H×W for 3-D.
"""
import numpy as np

from . import _kernels
from .errors import DimensionError, InvalidInputError, InvalidLabelError
from .tensor import Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _conv(x, w, strides, pads):
    x, w = as_tensor(x), as_tensor(w)
    n, c, d, h, wd = x.shape
    f, wc, kd, kh, kw = w.shape
    if c != wc:
        raise DimensionError(f"input has {c} channels but kernel expects {wc}")
    sd, sh, sw = strides
    if min(strides) < 1:
        raise DimensionError(f"stride must be >= 1, got {strides}")
    pd, ph, pw = pads
    in_ext = (d + 2 * pd, h + 2 * ph, wd + 2 * pw)
    if kd > in_ext[0] or kh > in_ext[1] or kw > in_ext[2]:
        raise DimensionError(f"kernel {(kd, kh, kw)} larger than padded input {in_ext}")
    od = (in_ext[0] - kd) // sd + 1
    oh = (in_ext[1] - kh) // sh + 1
    ow = (in_ext[2] - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw))) if any(pads) else x.data
    wdata = w.data
    out = _kernels.conv_forward(xp, wdata, sd, sh, sw, od, oh, ow)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = gw = None
        if x.requires_grad:
            gxp = _kernels.conv_grad_input(g, wdata, sd, sh, sw, *in_ext)
            gx = gxp[:, :, pd:pd + d, ph:ph + h, pw:pw + wd]
        if w.requires_grad:
            gw = _kernels.conv_grad_weight(g, xp, sd, sh, sw, kd, kh, kw)
        return gx, gw

    return Tensor._from_op(out, (x, w), bwd)


def conv2d(x, w, stride=1, padding=0):
    """2-D cross-correlation. ``x``: N×C×H×W, ``w``: F×C×kH×kW."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    f, wc, kh, kw = w.shape
    out = _conv(x.reshape(n, c, 1, h, wd), w.reshape(f, wc, 1, kh, kw), (1, stride, stride), (0, padding, padding))
    return out.reshape(out.shape[0], out.shape[1], out.shape[3], out.shape[4])


def conv3d(x, w, stride=1, padding=0):
    """3-D cross-correlation. ``x``: N×C×D×H×W, ``w``: F×C×kD×kH×kW."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"conv3d expects 5-D input and kernel, got {x.shape} and {w.shape}")
    return _conv(x, w, (stride,) * 3, (padding,) * 3)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel normalization over every axis except 1.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (plain arrays, not on the tape) are updated in place as
    ``momentum * running + (1 - momentum) * batch``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.size == 0 or x.shape[0] == 0:
        raise InvalidInputError("batch_norm on an empty batch")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"affine parameters must have shape ({c},), got {gamma.shape}/{beta.shape}")
    n = x.shape[0]
    x3 = x.data.reshape(n, c, -1)
    if training:
        mean, var = _kernels.bn_stats(x3)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = np.asarray(running_mean, dtype=np.float64), np.asarray(running_var, dtype=np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    out = _kernels.bn_apply(x3, mean, inv_std, gamma.data, beta.data).reshape(x.shape)

    def bwd(g):
        g3 = np.ascontiguousarray(g).reshape(n, c, -1)
        gx, ggamma, gbeta = _kernels.bn_backward(g3, x3, mean, inv_std, gamma.data, training)
        return gx.reshape(x.shape), ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), bwd)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))


def avg_pool(x, size=2):
    """Non-overlapping average pooling over every axis after the channel axis.

    Trailing rows that do not fill a whole window are dropped (floor).
    """
    x = as_tensor(x)
    spatial = x.shape[2:]
    out_ext = tuple(s // size for s in spatial)
    if min(out_ext) < 1:
        raise DimensionError(f"cannot pool extent {spatial} by {size}")
    crop = tuple(slice(0, o * size) for o in out_ext)
    xc = x.data[(slice(None), slice(None)) + crop]
    split = x.shape[:2] + tuple(v for o in out_ext for v in (o, size))
    red_axes = tuple(range(3, 2 + 2 * len(out_ext), 2))
    out = xc.reshape(split).mean(axis=red_axes)
    scale = 1.0 / size ** len(out_ext)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gexp = np.expand_dims(g, red_axes)
        gx[(slice(None), slice(None)) + crop] = (np.broadcast_to(gexp, split) * scale).reshape(xc.shape)
        return (gx,)

    return Tensor._from_op(out, (x,), bwd)


def global_avg_pool(x):
    """Average every axis after the channel axis: N×C×... -> N×C."""
    x = as_tensor(x)
    axes = tuple(range(2, x.ndim))
    count = int(np.prod(x.shape[2:]))
    out = x.data.mean(axis=axes)
    return Tensor._from_op(
        out, (x,), lambda g: (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)), x.shape) / count,)
    )


def dense(x, weight, bias):
    """Affine map ``x @ weight.T + bias`` with ``weight`` shaped out×in."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data
    return Tensor._from_op(
        out, (x, weight, bias), lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0))
    )


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tuple(tensors), bwd)


def softmax(logits):
    """Row-wise softmax of a plain array (no tape)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels, class_weights=None):
    """Class-weighted mean negative log-likelihood.

    ``loss = mean_i  w[y_i] * -log softmax(logits_i)[y_i]`` (divided by the
    batch size, not by the weight sum).
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be N×K, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise InvalidLabelError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidLabelError(f"labels must lie in {{0..{k - 1}}}, got {np.unique(labels).tolist()}")
    w = np.ones(k) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (k,) or np.any(w <= 0):
        raise InvalidInputError(f"class_weights must be {k} strictly positive values, got {w}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    sample_w = w[labels]
    loss = -(sample_w * log_p[rows, labels]).sum() / n

    def bwd(g):
        p = np.exp(log_p)
        p[rows, labels] -= 1.0
        return ((g[0] / n) * sample_w[:, None] * p,)

    return Tensor._from_op(np.array([loss]), (logits,), bwd)
