"""Inner loops for convolution, max pooling, and batch normalization.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations below take over. Set ``INCRES_AFFECT_PURE_PYTHON=1``
to force the numpy path. The two paths agree up to floating-point summation
order.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, sh, sw, oh, ow):
    """Patches of padded NHWC ``xp`` as rows of shape (n*oh*ow, kh*kw*c)."""
    n, _, _, c = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw]
    # (n, oh, ow, c, kh, kw) -> (n, oh, ow, kh, kw, c)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * oh * ow, kh * kw * c)


def col2im(dcols, n, hp, wp, c, kh, kw, sh, sw, oh, ow):
    dx = np.zeros((n, hp, wp, c))
    d = dcols.reshape(n, oh, ow, kh, kw, c)
    for di in range(kh):
        for dj in range(kw):
            dx[:, di : di + (oh - 1) * sh + 1 : sh, dj : dj + (ow - 1) * sw + 1 : sw] += d[:, :, :, di, dj]
    return dx


def maxpool_forward(xp, kh, kw, sh, sw, oh, ow):
    n, _, _, c = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw]
    flat = win.reshape(n, oh, ow, c, kh * kw)
    arg = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(dout, arg, hp, wp, kh, kw, sh, sw):
    n, oh, ow, c = dout.shape
    dx = np.zeros((n, hp, wp, c))
    for di in range(kh):
        for dj in range(kw):
            hit = arg == di * kw + dj
            dx[:, di : di + (oh - 1) * sh + 1 : sh, dj : dj + (ow - 1) * sw + 1 : sw] += np.where(hit, dout, 0.0)
    return dx


def channel_stats(x):
    mean = x.mean(axis=0)
    # one refinement pass removes the summation error (constant columns become exact)
    mean = mean + (x - mean).mean(axis=0)
    d = x - mean
    return mean, np.einsum("ij,ij->j", d, d) / x.shape[0]


def bn_forward(x, mean, inv_std, gamma, beta, apply_relu):
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    if apply_relu:
        out = np.where(out > 0, out, 0.0)
    return out, xhat


def bn_backward(g, out, xhat, gamma, inv_std, apply_relu, batch_stats):
    if apply_relu:
        g = np.where(out > 0, g, 0.0)
    dgamma = np.einsum("ij,ij->j", g, xhat)
    dbeta = g.sum(axis=0)
    if batch_stats:
        m = g.shape[0]
        dx = (gamma * inv_std) * (g - dbeta / m - xhat * (dgamma / m))
    else:
        dx = (gamma * inv_std) * g
    return dx, dgamma, dbeta


NUMPY_KERNELS = {
    "im2col": im2col,
    "col2im": col2im,
    "maxpool_forward": maxpool_forward,
    "maxpool_backward": maxpool_backward,
    "channel_stats": channel_stats,
    "bn_forward": bn_forward,
    "bn_backward": bn_backward,
}


def _load_compiled():
    if os.environ.get("INCRES_AFFECT_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return {name: getattr(_ckernels, name) for name in NUMPY_KERNELS}


COMPILED_KERNELS = _load_compiled()
BACKEND = "cython" if COMPILED_KERNELS is not None else "numpy"
_active = dict(COMPILED_KERNELS or NUMPY_KERNELS)


def use_backend(name: str):
    """Switch the kernels used by layers ('cython' or 'numpy')."""
    global BACKEND
    if name == "cython":
        if COMPILED_KERNELS is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _active.update(COMPILED_KERNELS)
    elif name == "numpy":
        _active.update(NUMPY_KERNELS)
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def active_backend() -> str:
    return BACKEND


def get(name: str):
    return _active[name]
