"""results.csv / results.md writers."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

from .errors import DatasetError

CSV_HEADER = ("experiment_id", "arch", "classes", "seed", "precision", "recall", "f1",
              "accuracy", "params", "size_mb", "latency_ms")
METRICS = ("precision", "recall", "f1", "accuracy")
NA = "n/a"


@dataclass
class ResultsRow:
    experiment_id: int
    arch: str
    classes: int
    seed: int
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    params: int | None = None
    size_mb: float | None = None
    latency_ms: float | None = None
    error: str | None = None

    def numerics(self) -> dict:
        """Everything except latency, for determinism comparisons."""
        return {k: getattr(self, k) for k in CSV_HEADER if k != "latency_ms"}


def _cell(value) -> str:
    if value is None:
        return NA
    if isinstance(value, float):
        return repr(value)
    return str(value)


def round3(value) -> str:
    """Half-even rounding to 3 decimals of the shortest repr of ``value``."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NA
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def to_csv(rows) -> str:
    with_error = any(r.error for r in rows)
    header = CSV_HEADER + (("error",) if with_error else ())
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(getattr(r, k)) if k != "error" else (r.error or "") for k in header])
    return buf.getvalue()


def to_markdown(rows) -> str:
    header = ["ID", "Arch", "Classes", "Seed", "Precision", "Recall", "F1", "Accuracy",
              "#Params", "Size (MB)", "Latency (ms)"]
    with_error = any(r.error for r in rows)
    if with_error:
        header.append("Error")
    body = []
    for r in rows:
        cells = [str(r.experiment_id), r.arch, str(r.classes), str(r.seed)]
        cells += [round3(getattr(r, m)) for m in METRICS]
        cells.append(f"{r.params:,}" if r.params is not None else NA)
        cells.append(f"{r.size_mb:.2f}" if r.size_mb is not None else NA)
        cells.append(f"{r.latency_ms:.3f}" if r.latency_ms is not None else NA)
        if with_error:
            cells.append((r.error or "").replace("|", "\\|").replace("\n", " "))
        body.append(cells)
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    numeric = set(range(2, 11))

    def line(cells):
        out = [c.rjust(w) if i in numeric else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths))]
        return "| " + " | ".join(out) + " |"

    sep = "|" + "|".join(("-" * (w + 1) + ":") if i in numeric else ("-" * (w + 2))
                         for i, w in enumerate(widths)) + "|"
    lines = [line(header), sep] + [line(b) for b in body]
    lines += [
        "",
        "Metrics are support-weighted averages over classes, rounded half-even to 3 decimals.",
        "MB = 10^6 bytes of the serialized float32 weight file. Latency is the median",
        "single-image forward pass on one thread. VGG16 rows (IDs 10-12) are benchmark-only",
        "unless trained explicitly; their parameter count uses the 1000-class head.",
        "",
    ]
    return "\n".join(lines)


def emit_report(rows, out_dir) -> tuple[Path, Path]:
    rows = list(rows)
    if not rows:
        raise ValueError("emit_report needs at least one row")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path, md_path = out / "results.csv", out / "results.md"
        csv_path.write_text(to_csv(rows), encoding="utf-8", newline="")
        md_path.write_text(to_markdown(rows), encoding="utf-8", newline="")
    except OSError as exc:
        raise DatasetError(f"cannot write report under {out}: {exc}") from exc
    return csv_path, md_path


def read_csv(path) -> list[ResultsRow]:
    types = {f.name: f.type for f in fields(ResultsRow)}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                if k not in types:
                    continue
                if v in (NA, ""):
                    kw[k] = None
                elif k in ("experiment_id", "classes", "seed", "params"):
                    kw[k] = int(v)
                elif k in ("arch", "error"):
                    kw[k] = v
                else:
                    kw[k] = float(v)
            rows.append(ResultsRow(**kw))
    return rows
