"""Differentiable layers built on :mod:`mtbca.autograd.tensor`.

Convolutions use an im2col layout: each output pixel becomes one row of a
``(C*kH*kW)``-wide matrix so the heavy lifting is a single BLAS matmul.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateBatchError, DimensionError
from .tensor import make_result


def _check_4d(x, what):
    if x.ndim != 4:
        raise DimensionError(f"{what} expects a 4-D tensor [B,C,H,W], got shape {x.shape}")


def _im2col(xp, kh, kw, stride, oh, ow):
    """(B,C,Hp,Wp) -> (B*oh*ow, C*kh*kw)."""
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)


def _col2im(cols, b, c, hp, wp, kh, kw, stride, oh, ow):
    """Adjoint of :func:`_im2col`: scatter-add rows back onto a padded canvas."""
    cols = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    h_end = (oh - 1) * stride + 1
    w_end = (ow - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + h_end : stride, j : j + w_end : stride] += cols[:, :, i, j]
    return out


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x, weight, bias=None, stride=1, padding=1):
    """2-D cross-correlation. ``weight`` is ``[Cout, Cin, kH, kW]``."""
    _check_4d(x, "conv2d")
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d needs stride >= 1 and padding >= 0")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    cols = _im2col(_pad(x.data, padding), kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2))

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = gm @ wmat
            gxp = _col2im(gcols, b, cin, hp, wp, kh, kw, stride, oh, ow)
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution (adjoint of :func:`conv2d` w.r.t. its input).

    ``weight`` is ``[Cin, Cout, kH, kW]``; output height is
    ``(H - 1) * stride - 2 * padding + kH``.
    """
    _check_4d(x, "conv_transpose2d")
    if stride < 1 or padding < 0:
        raise DimensionError("conv_transpose2d needs stride >= 1 and padding >= 0")
    b, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv_transpose2d: input has {cin} channels, weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")
    hf = (h - 1) * stride + kh
    wf = (w - 1) * stride + kw
    oh, ow = hf - 2 * padding, wf - 2 * padding
    if oh < 1 or ow < 1:
        raise DimensionError("conv_transpose2d: padding leaves an empty output")

    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    wmat = weight.data.reshape(cin, -1)
    full = _col2im(xm @ wmat, b, cout, hf, wf, kh, kw, stride, h, w)
    out = full[:, :, padding : padding + oh, padding : padding + ow]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gcols = _im2col(_pad(g, padding), kh, kw, stride, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            gw = (xm.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


@dataclass
class BatchNormState:
    """Running statistics for :func:`batch_norm2d`.

    Until the first train-mode batch (``initialized`` False) the statistics are
    the 0/1 placeholders; that batch then sets them directly and later batches
    blend in with ``momentum``. Starting the average from data matters here:
    attention masks shrink activations by orders of magnitude, and an average
    seeded at variance 1 would need ~100 batches to forget the placeholder.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True
    initialized: bool = True

    @classmethod
    def create(cls, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, eps, initialized=False)

    @property
    def mode(self):
        return "train" if self.training else "eval"


def batch_norm2d(x, gamma, beta, state):
    """Per-channel normalisation; in train mode also updates ``state`` running stats."""
    _check_4d(x, "batch_norm2d")
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm2d: affine params must have shape ({c},)")
    bc = (None, slice(None), None, None)
    if state.training:
        n = b * h * w
        if n < 2:
            raise DegenerateBatchError(f"batch_norm2d in train mode needs B*H*W >= 2, got {n}")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        unbiased = var * n / (n - 1)
        if state.initialized:
            m = state.momentum
            new_mean = (1 - m) * state.running_mean + m * mu
            new_var = (1 - m) * state.running_var + m * unbiased
        else:
            # floor keeps the running variance strictly positive for dead channels
            new_mean, new_var = mu, np.maximum(unbiased, state.eps)
            state.initialized = True
        state.running_mean = new_mean.astype(state.running_mean.dtype)
        state.running_var = new_var.astype(state.running_var.dtype)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu[bc]) * inv_std[bc]
        out = gamma.data[bc] * xhat + beta.data[bc]

        def backward(g):
            gx = None
            if x.requires_grad:
                dxhat = g * gamma.data[bc]
                s1 = dxhat.sum(axis=(0, 2, 3))
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
                gx = (inv_std / n)[bc] * (n * dxhat - s1[bc] - xhat * s2[bc])
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.dtype)
        xhat = (x.data - state.running_mean[bc]) * inv_std[bc]
        out = gamma.data[bc] * xhat + beta.data[bc]

        def backward(g):
            gx = g * (gamma.data * inv_std)[bc] if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def avg_pool2d(x, kernel=2):
    """Non-overlapping ``kernel``x``kernel`` mean pooling; trailing rows/cols are dropped."""
    _check_4d(x, "avg_pool2d")
    b, c, h, w = x.shape
    oh, ow = h // kernel, w // kernel
    if oh == 0 or ow == 0:
        raise DimensionError(f"avg_pool2d: {h}x{w} input too small for kernel {kernel}")
    crop = x.data[:, :, : oh * kernel, : ow * kernel]
    out = crop.reshape(b, c, oh, kernel, ow, kernel).mean(axis=(3, 5))
    scale = 1.0 / (kernel * kernel)

    def backward(g):
        gx = np.zeros_like(x.data)
        up = np.repeat(np.repeat(g * scale, kernel, axis=2), kernel, axis=3)
        gx[:, :, : oh * kernel, : ow * kernel] = up
        return (gx,)

    return make_result(out, (x,), backward)


def _adaptive_matrix(n_in, n_out, dtype):
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        m[i, start:end] = 1.0 / (end - start)
    return m


def adaptive_avg_pool2d(x, out_hw=(1, 1)):
    """Average over near-equal bins so the spatial size becomes ``out_hw``."""
    _check_4d(x, "adaptive_avg_pool2d")
    b, c, h, w = x.shape
    if h == 0 or w == 0:
        raise DimensionError("adaptive_avg_pool2d: empty spatial dims")
    oh, ow = out_hw
    ph = _adaptive_matrix(h, oh, x.dtype)
    pw = _adaptive_matrix(w, ow, x.dtype)
    out = np.einsum("ih,bchw,jw->bcij", ph, x.data, pw, optimize=True)

    def backward(g):
        return (np.einsum("ih,bcij,jw->bchw", ph, g, pw, optimize=True),)

    return make_result(out, (x,), backward)


def global_avg_pool(x):
    """[B,C,H,W] -> [B,C] spatial mean."""
    _check_4d(x, "global_avg_pool")
    b, c, h, w = x.shape
    if h * w == 0:
        raise DimensionError("global_avg_pool: empty spatial dims")
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return make_result(out, (x,), backward)


def global_max_pool(x):
    """[B,C,H,W] -> [B,C] spatial max; gradient goes to the first argmax."""
    _check_4d(x, "global_max_pool")
    b, c, h, w = x.shape
    if h * w == 0:
        raise DimensionError("global_max_pool: empty spatial dims")
    flat = x.data.reshape(b, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[:, :, None], g[:, :, None], axis=2)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), backward)


def pool2d(x, kind, out_hw=(1, 1)):
    """Dispatch for the pooling family; always returns ``[B, C, oh, ow]``."""
    if kind == "adaptive_avg":
        return adaptive_avg_pool2d(x, out_hw)
    if kind == "global_avg":
        return global_avg_pool(x).reshape(x.shape[0], x.shape[1], 1, 1)
    if kind == "global_max":
        return global_max_pool(x).reshape(x.shape[0], x.shape[1], 1, 1)
    raise ValueError(f"unknown pooling kind {kind!r}")


def linear(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` with ``weight`` shaped ``[out, in]``."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def dropout(x, p, rng, training=True):
    """Inverted dropout: zero with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def _bilinear_matrix(n_in, n_out, dtype):
    # half-pixel centres, edge-clamped
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m.astype(dtype)


def resize_bilinear(x, out_hw):
    """Bilinear resize of the two trailing axes to ``out_hw``."""
    _check_4d(x, "resize_bilinear")
    h, w = x.shape[2:]
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return x
    rh = _bilinear_matrix(h, oh, x.dtype)
    rw = _bilinear_matrix(w, ow, x.dtype)
    out = np.einsum("th,bchw,fw->bctf", rh, x.data, rw, optimize=True)

    def backward(g):
        return (np.einsum("th,bctf,fw->bchw", rh, g, rw, optimize=True),)

    return make_result(out, (x,), backward)
