"""Experiment table (IDs 0-12), run configuration and the end-to-end pipeline."""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .augment import AugmentPipeline, color_invert, compute_norm_stats, oversample_by_composition
from .data import Dataset, class_subset, generate_dataset, load_dataset, stratified_split, to_arrays
from .deepsmote import SmoteSpec, oversample_deepsmote, train_autoencoder
from .errors import ConfigParseError, StageError, WaferNetError
from .metrics import evaluate, measure_latency, model_size
from .models import DEFAULT_RES, ArchId, build_model, count_params
from .report import ResultsRow, emit_report
from .synth import WaferClass
from .train import TrainConfig, train_model
from .weights import save_weights


@dataclass(frozen=True)
class Experiment:
    id: int
    name: str
    arch: ArchId
    augment: bool = False
    oversample: str | None = None      # "deepsmote" | "compose"
    invert: bool = False
    transfer: str | None = None        # "fe" | "ft" for the VGG16 rows


EXPERIMENTS = {
    0: Experiment(0, "BaseNet", ArchId.BaseNet),
    1: Experiment(1, "BaseNet8", ArchId.BaseNet8),
    2: Experiment(2, "BaseNet8+", ArchId.BaseNet8Plus),
    3: Experiment(3, "IncNet", ArchId.IncNet),
    4: Experiment(4, "ResiNet", ArchId.ResiNet),
    5: Experiment(5, "BaseNet (+SA)", ArchId.BaseNet, augment=True),
    6: Experiment(6, "BaseNet (+DeepSMOTE)", ArchId.BaseNet, oversample="deepsmote"),
    7: Experiment(7, "BaseNet (+generated)", ArchId.BaseNet, oversample="compose"),
    8: Experiment(8, "BaseNet (+invert)", ArchId.BaseNet, invert=True),
    9: Experiment(9, "BaseNet8+ (+SA)", ArchId.BaseNet8Plus, augment=True),
    10: Experiment(10, "VGG16-FE", ArchId.VGG16, transfer="fe"),
    11: Experiment(11, "VGG16-FT", ArchId.VGG16, transfer="ft"),
    12: Experiment(12, "VGG16-FT (+SA)", ArchId.VGG16, augment=True, transfer="ft"),
}

COMPOSE_CLASSES = (WaferClass.Circle, WaferClass.Splinter)


# -- configuration ----------------------------------------------------------------------

def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(",", " ").split())


@dataclass
class RunConfig:
    experiment: int = 0
    classes: int = 8
    seed: int = 42
    data_dir: str = "data"
    out_dir: str = "runs"
    input_res: int | None = None
    image_size: int = 256
    scale: float = 1.0
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: float = 10
    milestones: tuple = (30, 60)
    gamma: float = 0.1
    oversample_target: int | None = None
    ae_epochs: int = 30
    latent_dim: int = 64
    latency_reps: int = 100
    latency_warmup: int = 10
    allow_untrained_vgg: bool = False
    save_weights: bool = True

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigParseError(f"unknown experiment id {self.experiment} (valid: 0-12)")
        if self.classes not in (3, 5, 8):
            raise ConfigParseError(f"classes must be 3, 5 or 8, got {self.classes}")
        if self.scale <= 0:
            raise ConfigParseError(f"scale must be positive, got {self.scale}")
        if self.latency_reps < 10:
            raise ConfigParseError(f"latency_reps must be >= 10, got {self.latency_reps}")
        try:
            self.train_config()
        except WaferNetError as exc:
            raise ConfigParseError(str(exc)) from None
        return self

    def train_config(self, **extra) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           weight_decay=self.weight_decay, patience=self.patience,
                           milestones=self.milestones, gamma=self.gamma, seed=self.seed, **extra)

    @property
    def spec(self) -> Experiment:
        return EXPERIMENTS[self.experiment]


_CONVERTERS = {
    int: int, float: float, bool: _bool, str: str, tuple: _ints,
}
_FIELD_TYPES = {
    "experiment": int, "classes": int, "seed": int, "data_dir": str, "out_dir": str,
    "input_res": int, "image_size": int, "scale": float, "epochs": int, "batch_size": int,
    "lr": float, "weight_decay": float, "patience": float, "milestones": tuple, "gamma": float,
    "oversample_target": int, "ae_epochs": int, "latent_dim": int, "latency_reps": int,
    "latency_warmup": int, "allow_untrained_vgg": bool, "save_weights": bool,
}


def convert_value(key: str, raw, line=None):
    if key not in _FIELD_TYPES:
        raise ConfigParseError(f"unknown key {key!r}", line)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("none", "")):
        if key in ("input_res", "oversample_target"):
            return None
        raise ConfigParseError(f"{key} needs a value", line)
    try:
        value = _CONVERTERS[_FIELD_TYPES[key]](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigParseError(f"bad value for {key}: {raw!r} ({exc})", line) from None
    if key == "patience" and isinstance(raw, str) and raw.strip().lower() in ("inf", "infinity"):
        value = float("inf")
    return value


def parse_config_text(text: str) -> dict:
    """``key = value`` lines, ``#`` comments; returns converted values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = convert_value(key, value, lineno)
    return values


def parse_config(path=None, flags: dict | None = None) -> RunConfig:
    """Defaults <- file <- flags (flags win). Values are validated."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigParseError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text))
    for k, v in (flags or {}).items():
        if v is not None:
            values[k] = convert_value(k, v) if isinstance(v, str) else v
    cfg = RunConfig(**values)
    if cfg.epochs < 1:
        raise ConfigParseError(f"epochs must be >= 1, got {cfg.epochs}")
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in asdict(cfg).items():
        if isinstance(v, tuple):
            v = ", ".join(map(str, v))
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# -- pipeline ------------------------------------------------------------------------------

class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def manifest_hash(ds: Dataset) -> str:
    """Digest of (filename, label) pairs, order-insensitive."""
    items = sorted(f"{s.name}\t{s.label.name}" for s in ds.samples)
    return hashlib.sha256("\n".join(items).encode()).hexdigest()


@dataclass
class RunArtifacts:
    row: ResultsRow
    weights_path: Path | None = None
    history: object = None
    split_hashes: dict = field(default_factory=dict)
    train_counts: dict = field(default_factory=dict)


_BENCH_CACHE: dict = {}


def _bench_vgg(cfg: RunConfig):
    key = (cfg.out_dir, cfg.latency_reps, cfg.latency_warmup)
    if key not in _BENCH_CACHE:
        model = build_model(ArchId.VGG16, 1000, 224, seed=cfg.seed)
        wdir = Path(cfg.out_dir) / "weights"
        wdir.mkdir(parents=True, exist_ok=True)
        path = wdir / "vgg16_1000.bin"
        save_weights(model, path)
        lat = measure_latency(model, 224, warmup=min(cfg.latency_warmup, 2), reps=cfg.latency_reps)
        _BENCH_CACHE[key] = (count_params(model), model_size(path), lat.median_ms)
    return _BENCH_CACHE[key]


def load_or_generate(cfg: RunConfig) -> Dataset:
    root = Path(cfg.data_dir)
    if (root / "manifest.csv").is_file():
        return load_dataset(root)
    return generate_dataset(seed=cfg.seed, size=cfg.image_size, out_dir=root, scale=cfg.scale)


def _oversample(exp: Experiment, train: Dataset, cfg: RunConfig) -> Dataset:
    counts = train.counts()
    target = cfg.oversample_target
    if target is None:
        target = counts.get(WaferClass.Circle, max(counts.values()))
    if exp.oversample == "compose":
        classes = [c for c in COMPOSE_CLASSES if c in train.classes]
        return oversample_by_composition(train, classes, target, seed=cfg.seed)
    minority = [c for c in train.classes if 0 < counts[c] < target]
    if not minority:
        return train
    res = 64 if min(train[0].image.shape) >= 64 else 16 * (min(train[0].image.shape) // 16)
    pair = train_autoencoder(train.images(), epochs=cfg.ae_epochs, seed=cfg.seed,
                             latent_dim=cfg.latent_dim, input_res=res)
    for c in minority:
        k = min(5, counts[c] - 1)
        train = oversample_deepsmote(train, c, target, pair, SmoteSpec(k=k, seed=cfg.seed + int(c)))
    return train


def run_experiment(cfg: RunConfig, dataset: Dataset | None = None) -> RunArtifacts:
    """Subset -> split -> (oversample train) -> preprocess -> train -> test -> bench."""
    cfg.validate()
    exp = cfg.spec
    row = ResultsRow(exp.id, exp.arch.value, cfg.classes, cfg.seed)

    if exp.arch is ArchId.VGG16 and not cfg.allow_untrained_vgg:
        with _Stage("bench"):
            row.params, row.size_mb, row.latency_ms = _bench_vgg(cfg)
        return RunArtifacts(row)

    with _Stage("data"):
        ds = dataset if dataset is not None else load_or_generate(cfg)
        ds = class_subset(ds, cfg.classes)
    with _Stage("split"):
        train, val, test = stratified_split(ds, seed=cfg.seed)
        hashes = {"val": manifest_hash(val), "test": manifest_hash(test)}
    if exp.oversample:
        with _Stage("oversample"):
            train = _oversample(exp, train, cfg)
    if exp.invert:
        with _Stage("invert"):
            train, val, test = (d.with_samples(
                [replace(s, image=color_invert(s.image)) for s in d.samples]) for d in (train, val, test))
    if {"val": manifest_hash(val), "test": manifest_hash(test)} != hashes:
        raise StageError("split", AssertionError("val/test membership changed after train-side recipes"))

    res = cfg.input_res or DEFAULT_RES[exp.arch]
    pretrained = exp.arch is ArchId.VGG16
    with _Stage("preprocess"):
        norm = compute_norm_stats(train) if exp.augment else None
        x_tr, y_tr = to_arrays(train, res, pretrained)
        x_va, y_va = to_arrays(val, res, pretrained, norm)
        x_te, y_te = to_arrays(test, res, pretrained, norm)
        pipeline = AugmentPipeline(norm=norm) if exp.augment else None

    with _Stage("train"):
        model = build_model(exp.arch, cfg.classes, None if pretrained else res, seed=cfg.seed)
        if exp.transfer == "fe":
            head = {p.name for p in model.layers[-1].parameters()}
            for p in model.parameters():
                p.trainable = p.requires_grad = p.name in head
        tcfg = cfg.train_config(**model.train_defaults)
        model, hist = train_model(model, (x_tr, y_tr), (x_va, y_va), tcfg, pipeline)
    with _Stage("evaluate"):
        rep = evaluate(model, x_te, y_te)
        row.precision, row.recall = rep.weighted_precision, rep.weighted_recall
        row.f1, row.accuracy = rep.weighted_f1, rep.accuracy
    with _Stage("bench"):
        row.params = count_params(model)
        wpath = None
        if cfg.save_weights:
            wdir = Path(cfg.out_dir) / "weights"
            wdir.mkdir(parents=True, exist_ok=True)
            wpath = wdir / f"exp{exp.id}_c{cfg.classes}_s{cfg.seed}.bin"
            save_weights(model, wpath)
            row.size_mb = model_size(wpath)
        row.latency_ms = measure_latency(model, res, warmup=cfg.latency_warmup,
                                         reps=cfg.latency_reps).median_ms
    return RunArtifacts(row, wpath, hist, hashes, {c.name: n for c, n in train.counts().items()})


def _run_one(cfg: RunConfig) -> ResultsRow:
    try:
        return run_experiment(cfg).row
    except Exception as exc:  # suite policy: record and continue
        exp = EXPERIMENTS.get(cfg.experiment)
        arch = exp.arch.value if exp else "?"
        msg = str(exc) if isinstance(exc, WaferNetError) else f"{type(exc).__name__}: {exc}"
        return ResultsRow(cfg.experiment, arch, cfg.classes, cfg.seed, error=msg or "failed")


def run_suite(ids, tasks, seeds, cfg: RunConfig, parallel: int = 1, emit: bool = True):
    """Cross product ids x tasks x seeds, in that nesting order; one report at the end."""
    ids, tasks = list(ids), list(tasks)
    if not ids or not tasks:
        raise ConfigParseError("suite needs at least one id and one task")
    seeds = list(seeds) or [42]
    configs = [replace(cfg, experiment=i, classes=t, seed=s) for i in ids for t in tasks for s in seeds]
    for c in configs:
        c.validate()
    if parallel > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_run_one, configs))
    else:
        rows = [_run_one(c) for c in configs]
    if emit:
        emit_report(rows, cfg.out_dir)
    return rows

