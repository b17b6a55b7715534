import numpy as np
import pytest
from hypothesis import given, strategies as st

from behaviorimg.evaluation import (
    BASELINES, ConfusionMatrix, LengthMismatch, Metrics, confusion, metrics, parse_report_csv,
    report_csv, report_rows, report_text, write_report,
)


def test_perfect_predictions():
    truth = [1] + [0] * 9
    assert confusion(truth, truth) == ConfusionMatrix(tp=1, fp=0, tn=9, fn=0)


def test_all_negative():
    cm = confusion([0] * 10, [1, 1, 1] + [0] * 7)
    assert cm.tp == 0 and cm.fn == 3
    m = metrics(cm)
    assert not m.precision_defined and m.recall == 0 and m.recall_defined


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), max_size=60))
def test_confusion_brute_force(pairs):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    cm = confusion(pred, truth)
    expected = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, t in pairs:
        expected[{(1, 1): "tp", (1, 0): "fp", (0, 0): "tn", (0, 1): "fn"}[(p, t)]] += 1
    assert cm == ConfusionMatrix(**expected)
    assert cm.total == len(pairs)


def test_metrics_arithmetic():
    m = metrics(ConfusionMatrix(tp=9, fp=1, tn=89, fn=1))
    assert m.precision == pytest.approx(0.9)
    assert m.recall == pytest.approx(0.9)
    assert m.accuracy == pytest.approx(0.98)
    assert m.f1 == pytest.approx(0.9)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_swap_positive_class(pairs):
    pred = np.array([p for p, _ in pairs])
    truth = np.array([t for _, t in pairs])
    cm = confusion(pred, truth)
    flipped = confusion(1 - pred, 1 - truth)
    assert flipped == cm.swapped()
    npv_den = cm.tn + cm.fn
    if npv_den:
        assert metrics(flipped).precision == pytest.approx(cm.tn / npv_den)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metrics_scale_free(pairs):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    once = metrics(confusion(pred, truth))
    twice = metrics(confusion(pred * 2, truth * 2))
    for field in ("accuracy", "precision", "recall", "f1"):
        assert getattr(once, field) == pytest.approx(getattr(twice, field), rel=1e-12)


def test_baselines_verbatim():
    table = {r.method: (r.precision, r.recall) for r in BASELINES}
    assert table["BAIT"] == (0.5144, 0.8209)
    assert table["Modified Isolation Forest"] == (0.5144, 0.8209)
    assert table["Deep Auto Encoder"] == (0.5042, 0.9025)
    assert table["LSTM-RNN"] == (0.9512, None)
    assert table["Image-based CNN (published)"] == (0.9932, 0.9932)


def test_own_row_comes_last_and_round_trips():
    achieved = Metrics(accuracy=0.99, precision=0.97, recall=0.95, f1=2 * 0.97 * 0.95 / 1.92)
    rows = report_rows(achieved)
    assert rows[-1].method == "This run" and rows[:-1] == list(BASELINES)
    assert parse_report_csv(report_csv(rows)) == rows


def test_undefined_precision_is_flagged(tmp_path):
    cm = ConfusionMatrix(tp=0, fp=0, tn=90, fn=10)
    txt, csv_path = write_report(tmp_path, metrics(cm), cm)
    assert csv_path.read_text().splitlines()[-1].startswith("This run,NA,0.0,")
    assert "precision undefined" in txt.read_text()


def test_text_report_lists_every_row():
    cm = ConfusionMatrix(tp=9, fp=1, tn=89, fn=1)
    text = report_text(report_rows(metrics(cm)), cm)
    for row in BASELINES:
        assert row.method in text
    assert "51.44" in text and "99.32" in text and "90.00" in text
