"""Dense float64 tensor operations with reverse-mode companions.

Every public function follows the same shape convention: feature maps are
(batch, channels, height, width); a 3-d (channels, height, width) input is
treated as a single-image batch and the output squeezed back. The internal
``_*_forward`` variants return (output, cache) pairs consumed by the
matching ``_*_backward``; the graph layer wires those into autodiff nodes.

Padding convention: "same" produces ceil(size / stride) outputs with the
total zero padding split floor-before / ceil-after; "valid" pads nothing.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a 3-d or 4-d tensor, got shape {x.shape}")


def _same_padding(size: int, kernel: int, stride: int, dilation: int):
    effective = (kernel - 1) * dilation + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + effective - size, 0)
    return total // 2, total - total // 2


# ---------------------------------------------------------------------------
# convolution

def _conv2d_forward(x, w, b, stride=1, dilation=1, padding="same"):
    n, c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise ShapeError(
            f"conv2d: input has {c_in} channels but weights expect {c_in_w} "
            f"(input {x.shape}, weights {w.shape})")
    if b.shape != (c_out,):
        raise ShapeError(
            f"conv2d: bias shape {b.shape} does not match {c_out} filters")
    if padding == "same":
        pt, pb = _same_padding(h, kh, stride, dilation)
        pl, pr = _same_padding(wd, kw, stride, dilation)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt or pb or pl or pr else x
    eff_h = (kh - 1) * dilation + 1
    eff_w = (kw - 1) * dilation + 1
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < eff_h or wp < eff_w:
        raise ShapeError(
            f"conv2d: input {x.shape} too small for kernel {w.shape} "
            f"with dilation {dilation}")
    windows = sliding_window_view(xp, (eff_h, eff_w), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, ::dilation, ::dilation]
    out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)
    out += b.reshape(1, -1, 1, 1)
    cache = (xp, windows, w, x.shape, (pt, pl), stride, dilation)
    return out, cache


def _conv2d_backward(grad, cache):
    xp, windows, w, x_shape, (pt, pl), stride, dilation = cache
    grad_b = grad.sum(axis=(0, 2, 3))
    grad_w = np.einsum("nchwij,nohw->ocij", windows, grad, optimize=True)
    grad_xp = np.zeros_like(xp)
    out_h, out_w = grad.shape[2], grad.shape[3]
    kh, kw = w.shape[2], w.shape[3]
    for ki in range(kh):
        for kj in range(kw):
            contrib = np.einsum("nohw,oc->nchw", grad, w[:, :, ki, kj],
                                optimize=True)
            grad_xp[:, :,
                    ki * dilation: ki * dilation + stride * out_h: stride,
                    kj * dilation: kj * dilation + stride * out_w: stride] += contrib
    h, wd = x_shape[2], x_shape[3]
    grad_x = grad_xp[:, :, pt:pt + h, pl:pl + wd]
    return grad_x, grad_w, grad_b


def conv2d(x, weights, bias, stride=1, dilation=1, padding="same"):
    """Direct cross-correlation with zero padding, stride, and dilation."""
    xb, squeezed = _batched(x)
    out, _ = _conv2d_forward(xb, np.asarray(weights, dtype=np.float64),
                             np.asarray(bias, dtype=np.float64),
                             stride, dilation, padding)
    return out[0] if squeezed else out


# ---------------------------------------------------------------------------
# group normalization

def _group_norm_forward(x, groups, gamma, beta, eps=1e-5):
    n, c, h, w = x.shape
    if c % groups:
        raise ShapeError(
            f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"group_norm: affine shapes {gamma.shape}/{beta.shape} do not "
            f"match {c} channels")
    grouped = x.reshape(n, groups, c // groups, h, w)
    mean = grouped.mean(axis=(2, 3, 4), keepdims=True)
    var = grouped.var(axis=(2, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((grouped - mean) * inv).reshape(n, c, h, w)
    out = xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)
    return out, (xhat, inv, gamma, groups)


def _group_norm_backward(grad, cache):
    xhat, inv, gamma, groups = cache
    n, c, h, w = grad.shape
    grad_gamma = (grad * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad.sum(axis=(0, 2, 3))
    dxhat = (grad * gamma.reshape(1, c, 1, 1)).reshape(n, groups, -1, h, w)
    xhat_g = xhat.reshape(n, groups, -1, h, w)
    mean_d = dxhat.mean(axis=(2, 3, 4), keepdims=True)
    mean_dx = (dxhat * xhat_g).mean(axis=(2, 3, 4), keepdims=True)
    grad_x = inv * (dxhat - mean_d - xhat_g * mean_dx)
    return grad_x.reshape(n, c, h, w), grad_gamma, grad_beta


def group_norm(x, groups, gamma, beta, eps=1e-5):
    """Per-sample, per-group normalization with a per-channel affine."""
    xb, squeezed = _batched(x)
    out, _ = _group_norm_forward(xb, groups,
                                 np.asarray(gamma, dtype=np.float64),
                                 np.asarray(beta, dtype=np.float64), eps)
    return out[0] if squeezed else out


# ---------------------------------------------------------------------------
# pointwise and pooling

def _relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def _relu_backward(grad, mask):
    return np.where(mask, grad, 0.0)


def relu(x):
    return _relu_forward(np.asarray(x, dtype=np.float64))[0]


def _maxpool2x2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial size {(h, w)} must be even")
    windows = (x.reshape(n, c, h // 2, 2, w // 2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, h // 2, w // 2, 4))
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, (idx, (n, c, h, w))


def _maxpool2x2_backward(grad, cache):
    idx, (n, c, h, w) = cache
    spread = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(spread, idx[..., None], grad[..., None], axis=-1)
    return (spread.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w))


def maxpool2x2(x):
    """2x2 max pooling, stride 2; ties resolve to the first window entry."""
    xb, squeezed = _batched(x)
    out, _ = _maxpool2x2_forward(xb)
    return out[0] if squeezed else out


def _upsample2x_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3), x.shape


def _upsample2x_backward(grad, x_shape):
    n, c, h, w = x_shape
    return grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def upsample2x(x):
    """Nearest-neighbor 2x spatial upsampling."""
    xb, squeezed = _batched(x)
    out, _ = _upsample2x_forward(xb)
    return out[0] if squeezed else out


# ---------------------------------------------------------------------------
# spatial dropout

def _spatial_dropout_forward(x, rate, mode, rng):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if mode == "infer" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    n, c = x.shape[0], x.shape[1]
    keep = rng.random((n, c)) >= rate
    mask = keep.astype(np.float64) / (1.0 - rate)
    return x * mask[:, :, None, None], mask


def _spatial_dropout_backward(grad, mask):
    if mask is None:
        return grad
    return grad * mask[:, :, None, None]


def spatial_dropout(x, rate, mode, rng):
    """Zero whole channels with probability `rate`; survivors scale by
    1/(1-rate). Inference mode is the identity."""
    xb, squeezed = _batched(x)
    out, _ = _spatial_dropout_forward(xb, rate, mode, rng)
    return out[0] if squeezed else out


# ---------------------------------------------------------------------------
# heads

def _as_projection(proj_weights, c_in):
    proj = np.asarray(proj_weights, dtype=np.float64)
    if proj.ndim == 4 and proj.shape[2:] == (1, 1):
        proj = proj[:, :, 0, 0]
    if proj.ndim != 2 or proj.shape[1] != c_in:
        raise ShapeError(
            f"second_order_pool: projection {proj.shape} does not map "
            f"{c_in} input channels")
    return proj


def _second_order_pool_forward(x, proj):
    n, c, h, w = x.shape
    proj = _as_projection(proj, c)
    y = np.einsum("kc,nchw->nkhw", proj, x, optimize=True)
    out = (y * y).mean(axis=(2, 3))
    return out, (x, y, proj)


def _second_order_pool_backward(grad, cache):
    x, y, proj = cache
    h, w = y.shape[2], y.shape[3]
    dy = (2.0 / (h * w)) * y * grad[:, :, None, None]
    grad_proj = np.einsum("nkhw,nchw->kc", dy, x, optimize=True)
    grad_x = np.einsum("nkhw,kc->nchw", dy, proj, optimize=True)
    return grad_x, grad_proj


def second_order_pool(x, proj_weights):
    """1x1 projection then the spatial mean of squared activations.

    Returns one length-K vector per image: second-order (energy) statistics
    of the projected map, invariant to the sign of the activations.
    """
    xb, squeezed = _batched(x)
    out, _ = _second_order_pool_forward(xb, proj_weights)
    return out[0] if squeezed else out


def _dense_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"dense: input {x.shape} does not match weights {w.shape}")
    return x @ w + b[0], (x, w)


def _dense_backward(grad, cache):
    x, w = cache
    grad_w = grad @ x
    grad_b = np.array([grad.sum()])
    grad_x = np.outer(grad, w)
    return grad_x, grad_w, grad_b


def dense(x, weights, bias):
    """Affine map from feature vectors (n, K) to one logit per row."""
    out, _ = _dense_forward(np.asarray(x, dtype=np.float64),
                            np.asarray(weights, dtype=np.float64),
                            np.asarray(bias, dtype=np.float64))
    return out


# ---------------------------------------------------------------------------
# loss

def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError(
            f"bce_with_logits: {z.shape} logits vs {y.shape} labels")
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    grad = (sigmoid(z) - y) / z.size
    return loss, grad


# ---------------------------------------------------------------------------
# composite dilated block (functional form)

@dataclass(frozen=True)
class DilatedBlockParams:
    """Parameter bundle for one residual dilated unit.

    skip_w/skip_b are the 1x1 projection used only when the input and output
    widths differ; leave them None for the identity skip.
    """

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    gn1_gamma: np.ndarray
    gn1_beta: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    gn2_gamma: np.ndarray
    gn2_beta: np.ndarray
    skip_w: np.ndarray | None = None
    skip_b: np.ndarray | None = None


def dilated_block(x, params, groups, dropout_rate, rng, mode="infer"):
    """Residual unit: conv d1 -> GN -> ReLU -> conv d2 -> GN -> ReLU ->
    spatial dropout, added to an identity (or 1x1-projected) skip."""
    xb, squeezed = _batched(x)
    h = conv2d(xb, params.conv1_w, params.conv1_b, dilation=1)
    h = group_norm(h, groups, params.gn1_gamma, params.gn1_beta)
    h = relu(h)
    h = conv2d(h, params.conv2_w, params.conv2_b, dilation=2)
    h = group_norm(h, groups, params.gn2_gamma, params.gn2_beta)
    h = relu(h)
    h = spatial_dropout(h, dropout_rate, mode, rng)
    if params.skip_w is None:
        if xb.shape[1] != h.shape[1]:
            raise ShapeError(
                f"dilated_block: widths {xb.shape[1]} -> {h.shape[1]} "
                "require a skip projection")
        skip = xb
    else:
        skip = conv2d(xb, params.skip_w, params.skip_b, padding="same")
    out = h + skip
    return out[0] if squeezed else out


# ---------------------------------------------------------------------------
# intensity windowing

def normalize_intensity(pixels, window_center, window_width):
    """Linear window map of raw pixel values onto [0, 1], clamped."""
    if window_width <= 0:
        raise ValueError(f"window_width must be positive, got {window_width}")
    p = np.asarray(pixels, dtype=np.float64)
    low = window_center - window_width / 2.0
    return np.clip((p - low) / window_width, 0.0, 1.0)
