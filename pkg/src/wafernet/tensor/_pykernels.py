"""Pure-numpy implementations of the hot convolution/pooling kernels.

Signatures mirror ``_ckernels``; :mod:`wafernet.tensor.kernels` picks one of
the two at import.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "python"


def _out_size(n, k, s):
    return (n - k) // s + 1


def im2col(xp, kh, kw, stride):
    """Unfold padded ``xp[N,C,Hp,Wp]`` into rows of receptive fields.

    Returns an array of shape ``(N*Ho*Wo, C*kh*kw)``; column order is
    ``(c, i, j)`` to match ``kernel.reshape(Cout, -1)``.
    """
    n, c, hp, wp = xp.shape
    ho, wo = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return view.reshape(n * ho * wo, c * kh * kw)


def col2im(cols, shape, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add rows back into a padded image."""
    n, c, hp, wp = shape
    ho, wo = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    dxp = np.zeros(shape, dtype=cols.dtype)
    blocks = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + hs:stride, j:j + ws:stride] += blocks[:, :, i, j]
    return dxp


def maxpool_forward(x, k, stride):
    """Windowed max with first-in-row-major tie breaking.

    Returns ``(out, idx)`` where ``idx`` holds the flat ``h*W + w`` position of
    each winner inside its input plane.
    """
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride), _out_size(w, k, stride)
    sn, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(n, c, ho, wo, k, k),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    ).reshape(n, c, ho, wo, k * k)
    arg = view.argmax(axis=-1)
    out = np.take_along_axis(view, arg[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(arg, k)
    rows = np.arange(ho)[:, None] * stride + di
    cols = np.arange(wo)[None, :] * stride + dj
    idx = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward(dout, idx, shape):
    n, c, h, w = shape
    dx = np.zeros((n * c, h * w), dtype=dout.dtype)
    flat_idx = idx.reshape(n * c, -1)
    flat_g = dout.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), flat_idx.shape[1])
    if _has_duplicates(flat_idx):
        np.add.at(dx, (rows, flat_idx.ravel()), flat_g.ravel())
    else:
        dx[rows, flat_idx.ravel()] = flat_g.ravel()
    return dx.reshape(shape)


def _has_duplicates(flat_idx):
    # overlapping windows can pick the same input cell twice
    s = np.sort(flat_idx, axis=1)
    return bool((s[:, 1:] == s[:, :-1]).any())
