"""Procedural wafer images for the eight inspection classes.

Each image is a bright pseudo-square plate on a dark frame. Defects are
rendered as darkening masks: ``img *= 1 - alpha * mask`` with ``mask`` in
[0, 1]. The mask returned alongside the image is that soft mask scaled to
0..255; classes whose defect is global (LowLevel, Displaced, WaferOnPin)
and Good return an empty mask.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class WaferClass(enum.IntEnum):
    Good = 0
    LowLevel = 1
    Circle = 2
    Crack = 3
    Displaced = 4
    WaferOnPin = 5
    Splinter = 6
    Scratch = 7

    @classmethod
    def parse(cls, name) -> "WaferClass":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "").replace(" ", "")
        for member in cls:
            if member.name.lower() == key:
                return member
        raise KeyError(name)


DEFAULT_COUNTS = {
    WaferClass.Good: 1096,
    WaferClass.LowLevel: 420,
    WaferClass.Circle: 351,
    WaferClass.Crack: 577,
    WaferClass.Displaced: 993,
    WaferClass.WaferOnPin: 256,
    WaferClass.Splinter: 79,
    WaferClass.Scratch: 569,
}

TASK_CLASSES = {
    3: (WaferClass.Good, WaferClass.LowLevel, WaferClass.Circle),
    5: (WaferClass.Good, WaferClass.LowLevel, WaferClass.Circle, WaferClass.Crack,
        WaferClass.Displaced),
    8: tuple(WaferClass),
}

LOCAL_DEFECTS = (WaferClass.Circle, WaferClass.Crack, WaferClass.Splinter, WaferClass.Scratch)


@dataclass(frozen=True)
class SynthParams:
    """Difficulty knobs. Lengths are fractions of the image side."""

    plate_side: float = 0.95
    chamfer: float = 0.12
    base_level: tuple = (185.0, 215.0)
    background: float = 18.0
    speckle: float = 9.0
    texture: float = 7.0
    vignette: float = 0.12
    contrast: tuple = (0.35, 0.65)
    line_width: float = 0.016
    lowlevel_mean: tuple = (50.0, 90.0)


DEFAULT_PARAMS = SynthParams()


def sample_seed(seed: int, cls, index: int) -> int:
    """Independent 64-bit stream for sample ``index`` of ``cls``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(cls), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def _grid(size):
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    return rr + 0.5, cc + 0.5


def _soft(signed_dist):
    # signed distance in pixels (positive inside) -> anti-aliased coverage
    return np.clip(signed_dist + 0.5, 0.0, 1.0)


def _plate_sd(rr, cc, center, half, chamfer):
    y, x = np.abs(rr - center[0]), np.abs(cc - center[1])
    diag = (half * (2 - chamfer) - x - y) / np.sqrt(2)
    return np.minimum(np.minimum(half - x, half - y), diag)


def _segment_dist(rr, cc, p, q):
    d = q - p
    L2 = float(d @ d) or 1e-12
    t = np.clip(((rr - p[0]) * d[0] + (cc - p[1]) * d[1]) / L2, 0.0, 1.0)
    return np.hypot(rr - (p[0] + t * d[0]), cc - (p[1] + t * d[1]))


def _polyline_mask(rr, cc, points, width):
    dist = np.full(rr.shape, np.inf)
    for p, q in zip(points[:-1], points[1:]):
        dist = np.minimum(dist, _segment_dist(rr, cc, p, q))
    return _soft(width / 2 - dist)


def _convex_polygon_mask(rr, cc, verts):
    """Coverage of a convex polygon (vertices in either winding)."""
    v = np.asarray(verts, dtype=np.float64)
    area = 0.5 * np.sum(v[:, 1] * np.roll(v[:, 0], -1) - np.roll(v[:, 1], -1) * v[:, 0])
    sign = 1.0 if area > 0 else -1.0
    sd = np.full(rr.shape, np.inf)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        e = b - a
        n = np.hypot(*e) or 1e-12
        # left normal for (row, col) coordinates
        cross = (e[1] * (rr - a[0]) - e[0] * (cc - a[1])) / n
        sd = np.minimum(sd, sign * cross)
    return _soft(sd)


def _smooth_noise(rng, size, cells=6):
    from .imageops import resize_bilinear

    coarse = rng.standard_normal((cells, cells))
    return resize_bilinear(coarse, size, size)


class _Canvas:
    def __init__(self, size, rng, params: SynthParams):
        self.size, self.rng, self.p = size, rng, params
        self.rr, self.cc = _grid(size)
        self.half = params.plate_side * size / 2
        self.center = np.array([size / 2, size / 2])
        self.level = rng.uniform(*params.base_level)

    def plate(self, offset=(0.0, 0.0)):
        c = self.center + np.asarray(offset)
        cov = _soft(_plate_sd(self.rr, self.cc, c, self.half, self.p.chamfer))
        r2 = ((self.rr - c[0]) ** 2 + (self.cc - c[1]) ** 2) / (2 * self.half ** 2)
        lit = self.level * (1 - self.p.vignette * r2)
        lit = lit + self.p.texture * _smooth_noise(self.rng, self.size)
        return cov * lit + (1 - cov) * self.p.background, cov

    def point_on_plate(self, margin=0.15):
        lim = self.half * (1 - 2 * margin)
        return self.center + self.rng.uniform(-lim, lim, size=2)

    def edge_point(self):
        """A point on the plate border plus the inward unit normal."""
        side = self.rng.integers(4)
        t = self.rng.uniform(-0.7, 0.7) * self.half
        normals = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.float64)
        inward = normals[side]
        tangent = inward[::-1]
        pt = self.center - inward * self.half + tangent * t
        return pt, inward, tangent

    def width(self):
        return max(1.2, self.p.line_width * self.size * self.rng.uniform(0.8, 1.3))

    def alpha(self):
        return self.rng.uniform(*self.p.contrast)


def _circle(cv: _Canvas):
    c = cv.point_on_plate(0.25)
    radius = cv.rng.uniform(0.08, 0.25) * cv.size
    ring = max(1.5, cv.rng.uniform(0.02, 0.05) * cv.size)
    dist = np.hypot(cv.rr - c[0], cv.cc - c[1])
    return _soft(ring / 2 - np.abs(dist - radius))


def _crack(cv: _Canvas):
    start, inward, _ = cv.edge_point()
    drift = np.arctan2(inward[1], inward[0]) + cv.rng.uniform(-0.6, 0.6)
    heading = drift
    n = int(cv.rng.integers(8, 15))
    step = cv.size * cv.rng.uniform(0.035, 0.06)
    pts = [start]
    for _ in range(n):
        # jagged walk, pulled back toward the initial inward direction
        heading += cv.rng.normal(0.0, 0.6) + 0.25 * (drift - heading)
        pts.append(pts[-1] + step * np.array([np.cos(heading), np.sin(heading)]))
    return _polyline_mask(cv.rr, cv.cc, np.array(pts), cv.width())


def _scratch(cv: _Canvas):
    a = cv.point_on_plate(0.1)
    theta = cv.rng.uniform(0, np.pi)
    length = cv.rng.uniform(0.35, 0.75) * 2 * cv.half
    d = np.array([np.cos(theta), np.sin(theta)]) * length / 2
    pts = np.array([a - d, a + d])
    return _polyline_mask(cv.rr, cv.cc, pts, cv.width())


def _splinter(cv: _Canvas):
    base, inward, tangent = cv.edge_point()
    if cv.rng.random() < 0.5:
        # snap to a chamfered corner region
        base = cv.center - inward * cv.half + tangent * cv.half * cv.rng.choice([-0.85, 0.85])
    span = cv.rng.uniform(0.12, 0.26) * cv.size
    depth = cv.rng.uniform(0.12, 0.26) * cv.size
    outside = inward * 0.1 * cv.size
    verts = [base - tangent * span / 2 - outside,
             base + tangent * span / 2 - outside,
             base + tangent * span * cv.rng.uniform(-0.3, 0.3) / 2 + inward * depth]
    if cv.rng.random() < 0.5:
        verts.insert(2, base + tangent * span * 0.3 + inward * depth * cv.rng.uniform(0.4, 0.8))
    return _convex_polygon_mask(cv.rr, cv.cc, verts)


def _pin_blobs(cv: _Canvas):
    n = int(cv.rng.integers(2, 5))
    img = np.full((cv.size, cv.size), cv.p.background, dtype=np.float64)
    for _ in range(n):
        c = cv.point_on_plate(0.1)
        s = cv.rng.uniform(0.06, 0.14) * cv.size
        peak = cv.level * cv.rng.uniform(0.75, 1.0)
        img += peak * np.exp(-((cv.rr - c[0]) ** 2 + (cv.cc - c[1]) ** 2) / (2 * s * s))
    return img


def generate_wafer(cls, seed: int, size: int = 256, params: SynthParams = DEFAULT_PARAMS):
    """Render one sample; returns ``(image uint8 HxW, mask uint8 HxW)``."""
    cls = WaferClass(cls)
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    cv = _Canvas(size, rng, params)
    mask = np.zeros((size, size), dtype=np.float64)

    if cls is WaferClass.Displaced:
        # shift so that a fraction f of the plate side falls outside the frame
        margin = size / 2 - cv.half
        shift = np.zeros(2)
        axes = [rng.integers(2)] if rng.random() < 0.6 else [0, 1]
        for ax in axes:
            f = rng.uniform(0.17, 0.35)
            shift[ax] = (margin + f * 2 * cv.half) * rng.choice([-1, 1])
        img, _ = cv.plate(shift)
    elif cls is WaferClass.WaferOnPin:
        img = _pin_blobs(cv)
    else:
        img, cov = cv.plate()
        render = {WaferClass.Circle: _circle, WaferClass.Crack: _crack,
                  WaferClass.Scratch: _scratch, WaferClass.Splinter: _splinter}.get(cls)
        if render is not None:
            mask = render(cv) * cov
            img = img * (1 - cv.alpha() * mask)

    img = img + rng.normal(0.0, params.speckle, size=img.shape)
    if cls is WaferClass.LowLevel:
        target = rng.uniform(*params.lowlevel_mean)
        img = img * (target / max(img.mean(), 1e-6))
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img, np.rint(mask * 255).astype(np.uint8)
