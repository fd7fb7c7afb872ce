"""Dataset container, on-disk layout, splitting and preprocessing.

On disk a dataset is::

    root/manifest.csv      "filename,label" (LF), filename relative to root
    root/images/*.pgm      8-bit P5 graymaps
    root/masks/*.pgm       defect masks, same basename (local defects only)
"""
from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .errors import DatasetError, ManifestError, MissingFileError, SplitError, UnknownLabelError
from .imageops import resize_bilinear
from .pgm import read_pgm, write_pgm
from .synth import (
    DEFAULT_COUNTS, DEFAULT_PARAMS, TASK_CLASSES, SynthParams, WaferClass, generate_wafer,
    sample_seed,
)

MANIFEST = "manifest.csv"
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
PRETRAINED_RES = 224


@dataclass
class Sample:
    image: np.ndarray
    label: WaferClass
    mask: np.ndarray | None = None
    name: str = ""


@dataclass
class Dataset:
    """Ordered samples plus the class list that defines dense label indices."""

    samples: list = field(default_factory=list)
    classes: tuple = tuple(WaferClass)
    root: Path | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def labels(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[s.label] for s in self.samples], dtype=np.int64)

    def counts(self) -> dict:
        out = {c: 0 for c in self.classes}
        for s in self.samples:
            out[s.label] += 1
        return out

    def of_class(self, cls) -> list:
        cls = WaferClass(cls)
        return [s for s in self.samples if s.label is cls]

    def with_samples(self, samples) -> "Dataset":
        return Dataset(list(samples), self.classes, self.root)

    def extended(self, extra) -> "Dataset":
        return self.with_samples(self.samples + list(extra))

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples]) if self.samples else np.zeros((0, 0, 0), np.uint8)

    def fingerprint(self) -> str:
        """Digest of sample identities (name, label, pixels), order-insensitive."""
        parts = sorted(
            hashlib.sha256(s.name.encode() + bytes([int(s.label)]) + s.image.tobytes()).hexdigest()
            for s in self.samples
        )
        return hashlib.sha256("".join(parts).encode()).hexdigest()


def scaled_counts(counts=None, scale=1.0) -> dict:
    """Multiply counts by ``scale`` rounding half-up; nonzero classes keep at least 4."""
    counts = DEFAULT_COUNTS if counts is None else counts
    factor = Decimal(str(scale))
    out = {}
    for cls, n in counts.items():
        if n < 0:
            raise ValueError(f"negative count for {WaferClass(cls).name}")
        m = int((Decimal(n) * factor).quantize(Decimal(1), rounding=ROUND_HALF_UP))
        out[WaferClass(cls)] = max(4, m) if n > 0 else 0
    return out


def generate_dataset(counts=None, seed: int = 0, size: int = 256, out_dir=None, *,
                     scale: float = 1.0, params: SynthParams = DEFAULT_PARAMS) -> Dataset:
    """Render a dataset; when ``out_dir`` is given also write PGMs and the manifest."""
    counts = scaled_counts(counts, scale)
    root = Path(out_dir) if out_dir is not None else None
    if root is not None:
        try:
            (root / "images").mkdir(parents=True, exist_ok=True)
            (root / "masks").mkdir(exist_ok=True)
        except OSError as exc:
            raise DatasetError(f"cannot create dataset directory {root}: {exc}") from exc
    samples = []
    for cls in WaferClass:
        for i in range(counts.get(cls, 0)):
            img, mask = generate_wafer(cls, sample_seed(seed, cls, i), size, params)
            name = f"images/{cls.name.lower()}_{i:05d}.pgm"
            samples.append(Sample(img, cls, mask if mask.any() else None, name))
    ds = Dataset(samples, tuple(WaferClass), root)
    if root is not None:
        save_dataset(ds, root)
    return ds


def save_dataset(ds: Dataset, root) -> Path:
    root = Path(root)
    lines = io.StringIO(newline="")
    writer = csv.writer(lines, lineterminator="\n")
    writer.writerow(["filename", "label"])
    try:
        for s in ds.samples:
            path = root / s.name
            path.parent.mkdir(parents=True, exist_ok=True)
            write_pgm(path, s.image)
            if s.mask is not None:
                mpath = root / "masks" / Path(s.name).name
                mpath.parent.mkdir(parents=True, exist_ok=True)
                write_pgm(mpath, s.mask)
            writer.writerow([s.name, s.label.name])
        (root / MANIFEST).write_text(lines.getvalue(), encoding="utf-8", newline="")
    except OSError as exc:
        raise DatasetError(f"writing dataset under {root} failed: {exc.filename or exc}") from exc
    return root / MANIFEST


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise MissingFileError(f"manifest not found: {manifest}")
    text = manifest.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows or [c.strip().lower() for c in rows[0]] != ["filename", "label"]:
        raise ManifestError(f"{manifest}: line 1: expected header 'filename,label'")
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ManifestError(f"{manifest}: line {lineno}: expected 2 fields, got {len(row)}")
        fname, label = row
        try:
            cls = WaferClass.parse(label)
        except KeyError:
            raise UnknownLabelError(f"{manifest}: line {lineno}: unknown label {label!r}") from None
        path = root / fname
        if not path.is_file():
            raise MissingFileError(f"{manifest}: line {lineno}: missing image file {path}")
        mpath = root / "masks" / Path(fname).name
        mask = read_pgm(mpath) if mpath.is_file() else None
        samples.append(Sample(read_pgm(path), cls, mask, fname))
    return Dataset(samples, tuple(WaferClass), root)


def _apportion(n: int, ratios) -> list[int]:
    """Largest-remainder allocation; equal remainders favour earlier parts."""
    exact = [Decimal(n) * Decimal(str(r)) for r in ratios]
    base = [int(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    # every part non-empty when possible; donors are the largest parts
    for i in range(len(base)):
        if base[i] == 0 and n >= len(base):
            donor = max(range(len(base)), key=lambda j: (base[j], -j))
            base[donor] -= 1
            base[i] += 1
    return base


def stratified_split(ds: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Per-class deterministic shuffle then allocation by ``ratios``.

    Returns one Dataset per ratio; each keeps the source order of its samples.
    """
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be positive and sum to 1, got {ratios}")
    parts = [[] for _ in ratios]
    by_class = {}
    for idx, s in enumerate(ds.samples):
        by_class.setdefault(s.label, []).append(idx)
    for cls, idxs in by_class.items():
        if len(idxs) < len(ratios):
            raise SplitError(f"class {cls.name} has {len(idxs)} samples, need at least {len(ratios)}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(cls)]))
        order = [idxs[i] for i in rng.permutation(len(idxs))]
        start = 0
        for part, take in zip(parts, _apportion(len(idxs), ratios)):
            part.extend(order[start:start + take])
            start += take
    return tuple(ds.with_samples(ds.samples[i] for i in sorted(p)) for p in parts)


def class_subset(ds: Dataset, task: int) -> Dataset:
    if task not in TASK_CLASSES:
        raise ValueError(f"task must be one of {sorted(TASK_CLASSES)}, got {task}")
    keep = TASK_CLASSES[task]
    return Dataset([s for s in ds.samples if s.label in keep], keep, ds.root)


def preprocess(img: np.ndarray, target: int = 256, pretrained_path: bool = False,
               norm=None) -> np.ndarray:
    """uint8 HxW -> float32 CxHxW in [0, 1] (before optional normalization)."""
    if target < 8:
        raise ValueError(f"target must be >= 8, got {target}")
    x = np.asarray(img, dtype=np.float64) / 255.0
    if pretrained_path:
        x = resize_bilinear(x, PRETRAINED_RES)
        x = np.repeat(x[None], 3, axis=0)
        x = (x - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]
    else:
        x = resize_bilinear(x, target)[None]
    if norm is not None:
        mean = np.asarray(norm.mean, dtype=np.float64).reshape(-1, 1, 1)
        std = np.asarray(norm.std, dtype=np.float64).reshape(-1, 1, 1)
        x = (x - mean) / std
    return x.astype(np.float32)


def to_arrays(ds: Dataset, target: int, pretrained_path: bool = False, norm=None):
    """Stack preprocessed images and dense labels."""
    c = 3 if pretrained_path else 1
    res = PRETRAINED_RES if pretrained_path else target
    x = np.empty((len(ds), c, res, res), dtype=np.float32)
    for i, s in enumerate(ds.samples):
        x[i] = preprocess(s.image, target, pretrained_path, norm)
    return x, ds.labels
