"""Small resampling helpers shared by preprocessing and defect composition."""
from __future__ import annotations

import numpy as np


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Bilinear resize of the last two axes with half-pixel alignment.

    Returns float64. Same-size input comes back unchanged (as float).
    """
    width = height if width is None else width
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape[-2:]
    if (h, w) == (height, width):
        return x.copy()
    lo, hi, f = _axis_weights(h, height)
    x = x[..., lo, :] * (1 - f)[:, None] + x[..., hi, :] * f[:, None]
    lo, hi, f = _axis_weights(w, width)
    return x[..., lo] * (1 - f) + x[..., hi] * f


def sample_bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill=0.0) -> np.ndarray:
    """Sample ``img`` at fractional coordinates; points outside read ``fill``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    fr, fc = rows - r0, cols - c0
    out = np.zeros(rows.shape, dtype=np.float64)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            vals = np.full(rows.shape, fill, dtype=np.float64)
            vals[ok] = img[rr[ok], cc[ok]]
            out += wr * wc * vals
    return out


def warp_similarity(img: np.ndarray, angle_deg: float, scale: float, center_out,
                    shape=None, center_in=None) -> np.ndarray:
    """Rotate by ``angle_deg`` and scale about ``center_in``, landing it at ``center_out``.

    Inverse mapping with bilinear sampling; uncovered pixels are 0.
    """
    h, w = img.shape
    shape = img.shape if shape is None else shape
    if center_in is None:
        center_in = ((h - 1) / 2, (w - 1) / 2)
    t = np.deg2rad(angle_deg)
    cos, sin = np.cos(t), np.sin(t)
    rr, cc = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    dy, dx = rr - center_out[0], cc - center_out[1]
    src_r = (cos * dy - sin * dx) / scale + center_in[0]
    src_c = (sin * dy + cos * dx) / scale + center_in[1]
    return sample_bilinear(img, src_r, src_c)
