"""Standard augmentation, color inversion, normalization stats and defect composition.

Geometric ops act on the last two axes, so they accept ``HxW`` images as
well as ``CxHxW`` / ``NxCxHxW`` arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CompositionError, StatsError
from .imageops import resize_bilinear, warp_similarity
from .synth import WaferClass

OPS = ("hflip", "vflip", "rot90", "rot180")


def transform(img: np.ndarray, op: str) -> np.ndarray:
    """hflip mirrors columns, vflip rows; rot90 is clockwise: (r, c) -> (c, H-1-r)."""
    if op == "hflip":
        out = img[..., ::-1]
    elif op == "vflip":
        out = img[..., ::-1, :]
    elif op == "rot90":
        out = np.rot90(img, k=-1, axes=(-2, -1))
    elif op == "rot180":
        out = img[..., ::-1, ::-1]
    elif op == "id":
        out = img
    else:
        raise ValueError(f"unknown transform {op!r}; expected one of {OPS}")
    return np.ascontiguousarray(out)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-d * d / (2 * sigma * sigma))
    return k / k.sum()


def _blur_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    xp = np.pad(x, pad, mode="edge")
    n = x.shape[axis]
    out = np.zeros_like(x)
    for i, w in enumerate(k):
        out += w * np.take(xp, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable blur with clamp-to-edge borders; uint8 in, uint8 out (rounded)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel(sigma)
    x = np.asarray(img, dtype=np.float64)
    x = _blur_axis(_blur_axis(x, k, -1), k, -2)
    if np.asarray(img).dtype == np.uint8:
        return np.clip(np.rint(x), 0, 255).astype(np.uint8)
    return x.astype(np.asarray(img).dtype, copy=False)


def color_invert(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return 255 - img
    return 1.0 - img


# -- normalization -------------------------------------------------------------------

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        shape = (-1, 1, 1)
        return (x - self.mean.reshape(shape).astype(x.dtype)) / self.std.reshape(shape).astype(x.dtype)


def _as_float_images(images):
    for im in images:
        im = getattr(im, "image", im)
        im = np.asarray(im)
        yield im.astype(np.float64) / 255.0 if im.dtype == np.uint8 else im.astype(np.float64)


def compute_norm_stats(train) -> NormStats:
    """Population mean/std over every pixel of ``train`` (float scale).

    Accepts a Dataset, a list of images or an array. Two streaming passes
    keep memory flat for large sets.
    """
    images = getattr(train, "samples", train)
    total, count = 0.0, 0
    for im in _as_float_images(images):
        total += im.sum()
        count += im.size
    if count == 0:
        raise StatsError("cannot compute normalization stats of an empty training set")
    mean = total / count
    sq = sum(float(((im - mean) ** 2).sum()) for im in _as_float_images(images))
    std = max(math.sqrt(sq / count), STD_FLOOR)
    return NormStats(np.array([mean]), np.array([std]))


# -- stochastic pipeline --------------------------------------------------------------

@dataclass
class AugmentPipeline:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    rotations: tuple = (0, 90, 180)
    p_blur: float = 0.3
    sigma_range: tuple = (0.5, 1.5)
    norm: NormStats | None = None

    def __call__(self, img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        # draws happen unconditionally so the stream layout never depends on outcomes
        flip_h, flip_v, r_rot, r_blur = rng.random(4)
        angle = self.rotations[int(r_rot * len(self.rotations))] if self.rotations else 0
        sigma = rng.uniform(*self.sigma_range)
        x = img
        if flip_h < self.p_hflip:
            x = transform(x, "hflip")
        if flip_v < self.p_vflip:
            x = transform(x, "vflip")
        for _ in range(angle // 90):
            x = transform(x, "rot90")
        if r_blur < self.p_blur:
            x = gaussian_blur(x, sigma)
        if self.norm is not None:
            x = self.norm.apply(np.asarray(x, dtype=np.float32))
        return x

    def sample(self, img, seed: int, index: int, epoch: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))
        return self(img, rng)

    def apply_batch(self, x: np.ndarray, seed: int, epoch: int, indices) -> np.ndarray:
        """Augment each ``x[i]`` with the stream of its dataset index."""
        return np.stack([self.sample(xi, seed, int(idx), epoch) for xi, idx in zip(x, indices)])

    def eval_transform(self, x: np.ndarray) -> np.ndarray:
        return x if self.norm is None else self.norm.apply(x)


# -- defect composition ----------------------------------------------------------------

MIN_ON_PLATE = 0.8


def plate_region(good: np.ndarray) -> np.ndarray:
    """Boolean mask of the lit plate: pixels above the midpoint of dark and bright levels."""
    g = np.asarray(good, dtype=np.float64)
    lo, hi = np.percentile(g, 5), np.percentile(g, 90)
    return g > (lo + hi) / 2


def blend(good: np.ndarray, mask: np.ndarray, alpha: float) -> np.ndarray:
    """``good * (1 - alpha * mask / 255)`` rounded back to uint8."""
    out = np.asarray(good, dtype=np.float64) * (1.0 - alpha * np.asarray(mask, dtype=np.float64) / 255.0)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def place_mask(mask: np.ndarray, shape, plate: np.ndarray, rng: np.random.Generator,
               tries: int = 64):
    """Rotate, scale and move ``mask`` so at least 80% of its mass lands on ``plate``.

    Returns ``(placed float mask 0..255, placement dict)``.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != tuple(shape):
        m = resize_bilinear(m, *shape)
    mass = m.sum()
    if mass <= 0:
        raise CompositionError("defect mask has zero mass")
    rr, cc = np.indices(m.shape)
    com = ((rr * m).sum() / mass, (cc * m).sum() / mass)
    angle = rng.uniform(0.0, 360.0)
    scale = rng.uniform(0.5, 1.5)
    centres = rng.uniform(0, 1, size=(tries, 2)) * np.array(shape)
    for k, centre in enumerate(centres):
        placed = warp_similarity(m, angle, scale, centre, shape, com)
        # compare against the mass the scaled mask would have if fully in frame
        expected = max(placed.sum(), mass * scale * scale)
        if placed[plate].sum() / expected >= MIN_ON_PLATE:
            return placed, {"angle": angle, "scale": scale, "centre": tuple(centre), "attempt": k}
    raise CompositionError(f"no placement kept {MIN_ON_PLATE:.0%} of the mask on the plate in {tries} tries")


def compose_defect(good: np.ndarray, mask: np.ndarray, seed: int, *, alpha: float | None = None,
                   return_mask: bool = False):
    """Paste a darkening defect taken from ``mask`` onto a good wafer image.

    Random rotation [0, 360), scale [0.5, 1.5], position (>= 80% of mass on
    the plate), blur sigma [0, 1.5] and strength alpha [0.5, 0.9], all drawn
    from ``seed``. ``alpha`` may be forced.
    """
    rng = np.random.default_rng(seed)
    good = np.asarray(good)
    placed, _ = place_mask(mask, good.shape, plate_region(good), rng)
    sigma = rng.uniform(0.0, 1.5)
    a = rng.uniform(0.5, 0.9)
    if alpha is not None:
        a = alpha
    if sigma > 1e-3:
        placed = gaussian_blur(placed, sigma)
    placed = np.clip(placed, 0.0, 255.0)
    out = blend(good, placed, a)
    if return_mask:
        return out, np.rint(placed).astype(np.uint8)
    return out


def oversample_by_composition(ds, classes=(WaferClass.Circle, WaferClass.Splinter),
                              target_count: int = 351, seed: int = 0):
    """Append composed samples until each class in ``classes`` has ``target_count``."""
    from .data import Sample

    counts = ds.counts()
    goods = [s for s in ds.samples if s.label is WaferClass.Good]
    extra = []
    for cls in classes:
        cls = WaferClass(cls)
        need = target_count - counts.get(cls, 0)
        if need <= 0:
            continue
        if not goods:
            raise CompositionError("dataset has no Good samples to compose onto")
        donors = [s.mask for s in ds.samples if s.label is cls and s.mask is not None and s.mask.any()]
        if not donors:
            raise CompositionError(f"no {cls.name} masks available for composition")
        for j in range(need):
            ss = np.random.SeedSequence([seed, int(cls), j])
            pick = np.random.default_rng(ss.spawn(1)[0])
            good = goods[int(pick.integers(len(goods)))].image
            donor = donors[int(pick.integers(len(donors)))]
            child_seed = int(ss.generate_state(1, np.uint64)[0])
            img, placed = compose_defect(good, donor, child_seed, return_mask=True)
            extra.append(Sample(img, cls, placed, f"composed/{cls.name.lower()}_{j:05d}.pgm"))
    return ds.extended(extra)
