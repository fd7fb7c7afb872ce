"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback in ``_pykernels``. Set ``WAFERNET_KERNELS=python`` to force the
fallback.
"""
import logging
import os

import numpy as np

from . import _pykernels

logger = logging.getLogger(__name__)

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels


def _default():
    wanted = os.environ.get("WAFERNET_KERNELS", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            logger.warning("kernel backend %r unavailable, using fallback", wanted)
            return _pykernels
        return BACKENDS[wanted]
    return BACKENDS.get("cython", _pykernels)


_active = _default()


def active():
    """Return the module currently serving kernel calls."""
    return _active


def available():
    return sorted(BACKENDS)


def use(name):
    """Switch backend by name; returns the previous backend name."""
    global _active
    if name not in BACKENDS:
        raise KeyError(f"unknown kernel backend {name!r}; available: {available()}")
    prev = _active.NAME
    _active = BACKENDS[name]
    return prev


def im2col(xp, kh, kw, stride):
    return _active.im2col(np.ascontiguousarray(xp), kh, kw, stride)


def col2im(cols, shape, kh, kw, stride):
    return _active.col2im(np.ascontiguousarray(cols), tuple(shape), kh, kw, stride)


def maxpool_forward(x, k, stride):
    return _active.maxpool_forward(np.ascontiguousarray(x), k, stride)


def maxpool_backward(dout, idx, shape):
    return _active.maxpool_backward(
        np.ascontiguousarray(dout), np.ascontiguousarray(idx), tuple(shape)
    )
