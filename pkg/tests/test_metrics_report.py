from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wafernet.errors import MetricsError, MissingFileError
from wafernet.metrics import confusion, measure_latency, model_size, weighted_metrics
from wafernet.models import ModelGraph, build_model, count_params
from wafernet.report import CSV_HEADER, ResultsRow, emit_report, read_csv, round3, to_csv, to_markdown
from wafernet.weights import save_weights

from oracles import expand_confusion, metrics_by_counting


def test_confusion_basic():
    np.testing.assert_array_equal(confusion([0, 1, 2], [0, 1, 2], 3), np.eye(3))
    np.testing.assert_array_equal(confusion([], [], 4), np.zeros((4, 4)))
    with pytest.raises(IndexError):
        confusion([3], [0], 3)
    with pytest.raises(IndexError):
        confusion([0], [-1], 3)


def test_confusion_row_sums():
    r = np.random.default_rng(0)
    y, p = r.integers(0, 8, 1000), r.integers(0, 8, 1000)
    cm = confusion(p, y, 8)
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(y, minlength=8))
    assert cm.sum() == 1000


def test_hand_counted_example():
    rep = weighted_metrics(confusion([0, 1, 1, 1, 0], [0, 0, 1, 1, 1], 2))
    np.testing.assert_allclose(rep.precision, [0.5, 2 / 3])
    np.testing.assert_allclose(rep.recall, [0.5, 2 / 3])
    assert rep.weighted_f1 == pytest.approx(0.6) and rep.accuracy == pytest.approx(0.6)


def test_perfect_and_zero_division():
    rep = weighted_metrics(np.diag([3, 4, 5]))
    assert rep.weighted_precision == rep.weighted_recall == rep.weighted_f1 == rep.accuracy == 1.0
    rep = weighted_metrics(np.array([[2, 0, 0], [1, 0, 0], [0, 0, 0]]))
    assert rep.precision[1] == rep.recall[1] == rep.f1[1] == 0.0
    assert rep.f1[2] == 0.0


def test_empty_matrix():
    with pytest.raises(MetricsError):
        weighted_metrics(np.zeros((3, 3), int))


def _random_cm(seed):
    r = np.random.default_rng(seed)
    c = int(r.choice([3, 5, 8]))
    cm = r.integers(0, 20, (c, c)) * (r.random((c, c)) < 0.7)
    cm[0, 0] += 1
    return cm


def test_counting_oracle_200():
    for seed in range(200):
        cm = _random_cm(seed)
        labels, preds = expand_confusion(cm)
        wp, wr, wf, acc = metrics_by_counting(labels, preds, cm.shape[0])
        rep = weighted_metrics(cm)
        assert abs(rep.weighted_precision - wp) < 1e-12
        assert abs(rep.weighted_recall - wr) < 1e-12
        assert abs(rep.weighted_f1 - wf) < 1e-12
        assert abs(rep.accuracy - acc) < 1e-12


def test_weighted_recall_is_accuracy_exactly():
    for seed in range(200):
        cm = _random_cm(seed)
        n = int(cm.sum())
        support = cm.sum(axis=1)
        wr = sum(Fraction(int(s), n) * (Fraction(int(cm[c, c]), int(s)) if s else 0) for c, s in enumerate(support))
        assert wr == Fraction(int(np.trace(cm)), n)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_permutation_invariance(seed):
    cm = _random_cm(seed)
    perm = np.random.default_rng(seed).permutation(cm.shape[0])
    a, b = weighted_metrics(cm), weighted_metrics(cm[np.ix_(perm, perm)])
    for k in ("weighted_precision", "weighted_recall", "weighted_f1", "accuracy"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), abs=1e-12)
    vals = [a.weighted_precision, a.weighted_recall, a.weighted_f1, a.accuracy]
    assert all(0 <= v <= 1 for v in vals)


# -- size / latency ----------------------------------------------------------------

def test_model_size(tmp_path):
    m = build_model("BaseNet8", 8, 256)
    path = tmp_path / "b.bin"
    save_weights(m, path)
    assert abs(model_size(path) - 4 * count_params(m) / 1e6) <= 0.05 * 4 * count_params(m) / 1e6
    save_weights(ModelGraph("e", [], (1,)), tmp_path / "e.bin")
    assert model_size(tmp_path / "e.bin") == 6 / 1e6
    with pytest.raises(MissingFileError):
        model_size(tmp_path / "missing.bin")


@pytest.mark.parametrize("arch", ["BaseNet", "BaseNet8", "BaseNet8Plus", "IncNet", "ResiNet"])
def test_latency_positive(arch):
    lat = measure_latency(build_model(arch, 8, 32), warmup=2, reps=10)
    assert lat.median_ms > 0 and lat.p90_ms >= lat.median_ms and lat.samples == 10


def test_latency_stable():
    m = build_model("BaseNet8", 8, 64)
    a = measure_latency(m, warmup=3, reps=30).median_ms
    b = measure_latency(m, warmup=3, reps=30).median_ms
    assert abs(a - b) / min(a, b) < 0.5


def test_latency_needs_reps():
    with pytest.raises(ValueError):
        measure_latency(build_model("BaseNet", 3, 16), reps=5)


# -- report --------------------------------------------------------------------------

def _row(**kw):
    base = dict(experiment_id=0, arch="BaseNet", classes=3, seed=42, precision=0.95349, recall=0.9525,
                f1=0.9535, accuracy=0.95, params=123456, size_mb=0.49, latency_ms=1.234567)
    base.update(kw)
    return ResultsRow(**base)


def test_csv_one_row(tmp_path):
    csv_path, md_path = emit_report([_row()], tmp_path)
    lines = csv_path.read_bytes().split(b"\n")
    assert lines[0].decode() == ",".join(CSV_HEADER)
    assert len([x for x in lines if x]) == 2 and b"\r" not in csv_path.read_bytes()
    assert md_path.exists()


def test_round_half_even():
    assert round3(0.9525) == "0.952"
    assert round3(0.9535) == "0.954"
    assert round3(0.12345) == "0.123"
    assert round3(None) == "n/a"
    assert round3(1.0) == "1.000"


def test_markdown_formatting():
    md = to_markdown([_row(), _row(experiment_id=10, arch="VGG16", precision=None, recall=None, f1=None,
                                   accuracy=None, params=138357544)])
    assert " 0.952 |" in md and " 0.954 |" in md and "n/a" in md and "138,357,544" in md
    assert "10^6 bytes" in md
    table = [line for line in md.splitlines() if line.startswith("|")]
    assert len({len(line) for line in table}) == 1


def test_csv_round_trip(tmp_path):
    rows = [_row(), _row(seed=43, f1=1 / 3, latency_ms=None)]
    csv_path, _ = emit_report(rows, tmp_path)
    back = read_csv(csv_path)
    for a, b in zip(rows, back):
        for k in CSV_HEADER:
            va, vb = getattr(a, k), getattr(b, k)
            if isinstance(va, float):
                assert abs(va - vb) < 1e-9
            else:
                assert va == vb


def test_error_column_only_when_failed():
    assert "error" not in to_csv([_row()]).splitlines()[0]
    text = to_csv([_row(), _row(experiment_id=3, error="[train] boom")])
    assert text.splitlines()[0].endswith(",error") and "[train] boom" in text


def test_emit_requires_rows(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)
