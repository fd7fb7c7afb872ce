"""``wafernet`` command line: gen-data, run, suite, bench, report.

Exit codes: 0 success, 1 configuration error, 2 partial suite failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigParseError, ConfigurationError, WaferNetError

log = logging.getLogger("wafernet")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

# flags that map straight onto RunConfig fields
_OVERRIDES = ("epochs", "batch_size", "lr", "weight_decay", "patience", "milestones", "gamma",
              "input_res", "image_size", "scale", "oversample_target", "ae_epochs", "latent_dim",
              "latency_reps", "latency_warmup", "data_dir", "out_dir")


def _id_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_overrides(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="'key = value' file; flags override it")
    g.add_argument("--data", dest="data_dir")
    g.add_argument("--out", dest="out_dir")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--patience", type=float)
    g.add_argument("--milestones")
    g.add_argument("--gamma", type=float)
    g.add_argument("--input-res", type=int)
    g.add_argument("--image-size", type=int)
    g.add_argument("--scale", type=float)
    g.add_argument("--oversample-target", type=int)
    g.add_argument("--ae-epochs", type=int)
    g.add_argument("--latent-dim", type=int)
    g.add_argument("--latency-reps", type=int)
    g.add_argument("--latency-warmup", type=int)
    g.add_argument("--allow-untrained-vgg", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wafernet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic wafer dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--id", type=int, dest="experiment")
    p.add_argument("--classes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gen-data", action="store_true", help="generate the dataset if missing")
    _add_overrides(p)

    p = sub.add_parser("suite", help="run ids x tasks x seeds and write the report")
    p.add_argument("--ids", type=_id_list, required=True)
    p.add_argument("--tasks", type=_id_list, default=[3, 5, 8])
    p.add_argument("--seeds", type=_id_list, default=[])
    p.add_argument("--parallel", type=int, default=1)
    _add_overrides(p)

    p = sub.add_parser("bench", help="parameter count, size and latency per architecture")
    p.add_argument("--archs", default="BaseNet,BaseNet8,BaseNet8Plus,IncNet,ResiNet,VGG16")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--res", type=int, help="input resolution (VGG16 stays at 224)")
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--out", default="bench")

    p = sub.add_parser("report", help="rebuild results.md from a results.csv")
    p.add_argument("csv")
    p.add_argument("--out", help="output directory (default: next to the csv)")
    return ap


def _flags(ns) -> dict:
    flags = {k: getattr(ns, k, None) for k in _OVERRIDES}
    for k in ("experiment", "classes", "seed", "allow_untrained_vgg"):
        if getattr(ns, k, None) is not None:
            flags[k] = getattr(ns, k)
    return flags


def cmd_gen_data(ns) -> int:
    from .data import generate_dataset

    ds = generate_dataset(seed=ns.seed, size=ns.size, out_dir=ns.out, scale=ns.scale)
    counts = ", ".join(f"{c.name}={n}" for c, n in ds.counts().items())
    print(f"wrote {len(ds)} images to {ns.out} ({counts})")
    return EXIT_OK


def cmd_run(ns) -> int:
    from .experiments import load_or_generate, parse_config, run_experiment

    cfg = parse_config(ns.config, _flags(ns))
    if not (Path(cfg.data_dir) / "manifest.csv").is_file() and not ns.gen_data and cfg.spec.arch.value != "VGG16":
        raise ConfigParseError(f"no dataset at {cfg.data_dir}; run gen-data first or pass --gen-data")
    dataset = load_or_generate(cfg) if cfg.spec.arch.value != "VGG16" or cfg.allow_untrained_vgg else None
    art = run_experiment(cfg, dataset)
    from .report import emit_report

    emit_report([art.row], cfg.out_dir)
    r = art.row
    print(f"experiment {r.experiment_id} ({r.arch}, {r.classes} classes, seed {r.seed}): "
          f"f1={r.f1} acc={r.accuracy} params={r.params} size={r.size_mb} MB latency={r.latency_ms} ms")
    return EXIT_OK


def cmd_suite(ns) -> int:
    from .experiments import parse_config, run_suite

    cfg = parse_config(ns.config, _flags(ns))
    rows = run_suite(ns.ids, ns.tasks, ns.seeds, cfg, parallel=ns.parallel)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"experiment {r.experiment_id} / {r.classes} classes / seed {r.seed} failed: {r.error}",
              file=sys.stderr)
    print(f"{len(rows) - len(failed)}/{len(rows)} runs succeeded; report in {cfg.out_dir}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_bench(ns) -> int:
    from .metrics import measure_latency, model_size
    from .models import ArchId, build_model, count_params
    from .weights import save_weights

    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'arch':<14}{'params':>14}{'size MB':>10}{'median ms':>11}{'p90 ms':>9}")
    for name in ns.archs.split(","):
        arch = ArchId.parse(name.strip())
        vgg = arch is ArchId.VGG16
        model = build_model(arch, 1000 if vgg else ns.classes, None if vgg else ns.res)
        path = out / f"{arch.value.lower()}.bin"
        save_weights(model, path)
        lat = measure_latency(model, warmup=ns.warmup, reps=ns.reps)
        print(f"{arch.value:<14}{count_params(model):>14,}{model_size(path):>10.2f}"
              f"{lat.median_ms:>11.3f}{lat.p90_ms:>9.3f}")
    return EXIT_OK


def cmd_report(ns) -> int:
    from .report import emit_report, read_csv

    rows = read_csv(ns.csv)
    out = ns.out or str(Path(ns.csv).parent)
    _, md = emit_report(rows, out)
    print(f"wrote {md}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "run": cmd_run, "suite": cmd_suite,
            "bench": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[ns.command](ns)
    except (ConfigParseError, ConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WaferNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL if ns.command == "suite" else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
