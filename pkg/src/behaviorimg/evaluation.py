"""Confusion matrix, metrics and the comparison report (positive class = malicious)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionMatrix":
        """The same counts seen with the other class taken as positive."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


def confusion(predictions: Sequence[int], truth: Sequence[int]) -> ConfusionMatrix:
    pred = np.asarray(predictions).astype(bool)
    actual = np.asarray(truth).astype(bool)
    if pred.shape != actual.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {actual.size} labels")
    return ConfusionMatrix(
        tp=int(np.sum(pred & actual)),
        fp=int(np.sum(pred & ~actual)),
        tn=int(np.sum(~pred & ~actual)),
        fn=int(np.sum(~pred & actual)),
    )


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Undefined ratios (zero denominator) come back as 0 with the matching flag cleared."""
    precision_defined = (cm.tp + cm.fp) > 0
    recall_defined = (cm.tp + cm.fn) > 0
    precision = cm.tp / (cm.tp + cm.fp) if precision_defined else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if recall_defined else 0.0
    accuracy = (cm.tp + cm.tn) / cm.total if cm.total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(accuracy, precision, recall, f1, precision_defined, recall_defined)


@dataclass(frozen=True)
class ReportRow:
    method: str
    precision: float | None
    recall: float | None
    accuracy: float | None = None
    f1: float | None = None
    source: str = ""


# published comparison rows, as fractions
BASELINES: tuple[ReportRow, ...] = (
    ReportRow("BAIT", 0.5144, 0.8209, source="published [1]"),
    ReportRow("Modified Isolation Forest", 0.5144, 0.8209, source="published [1][2]"),
    ReportRow("Deep Auto Encoder", 0.5042, 0.9025, source="published [1]"),
    ReportRow("LSTM-RNN", 0.9512, None, source="published [1]"),
    ReportRow("Image-based CNN (published)", 0.9932, 0.9932, source="published [1]"),
)

FOOTNOTES = (
    "[1] Figures as printed in the original comparison table; not reproduced here.",
    "[2] Identical to the BAIT row in the original table; kept verbatim.",
)


def _num(value: float | None) -> str:
    return "NA" if value is None else repr(float(value))


def _pct(value: float | None) -> str:
    return "NA" if value is None else f"{100 * value:.2f}"


def report_rows(achieved: Metrics, method: str = "This run", source: str = "measured",
                baselines: Sequence[ReportRow] = BASELINES) -> list[ReportRow]:
    own = ReportRow(
        method,
        achieved.precision if achieved.precision_defined else None,
        achieved.recall if achieved.recall_defined else None,
        achieved.accuracy,
        achieved.f1,
        source,
    )
    return [*baselines, own]


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "precision", "recall", "accuracy", "f1", "source"])
    for r in rows:
        writer.writerow([r.method, _num(r.precision), _num(r.recall), _num(r.accuracy), _num(r.f1), r.source])
    return buf.getvalue()


def parse_report_csv(text: str) -> list[ReportRow]:
    def val(s: str) -> float | None:
        return None if s == "NA" else float(s)

    reader = csv.DictReader(io.StringIO(text))
    return [
        ReportRow(row["method"], val(row["precision"]), val(row["recall"]),
                  val(row["accuracy"]), val(row["f1"]), row["source"])
        for row in reader
    ]


def report_text(rows: Sequence[ReportRow], cm: ConfusionMatrix | None = None,
                extra: Sequence[str] = ()) -> str:
    width = max(len(r.method) for r in rows)
    lines = [
        f"{'Method':<{width}}  {'Precision':>9}  {'Recall':>7}  {'Accuracy':>8}  {'F1':>6}",
        "-" * (width + 40),
    ]
    for r in rows:
        lines.append(
            f"{r.method:<{width}}  {_pct(r.precision):>9}  {_pct(r.recall):>7}  "
            f"{_pct(r.accuracy):>8}  {_pct(r.f1):>6}"
        )
    lines.append("")
    if cm is not None:
        lines.append(f"confusion (positive = malicious): tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
        if cm.tp + cm.fp == 0:
            lines.append("precision undefined: no sample was predicted malicious")
    lines.extend(extra)
    lines.extend(FOOTNOTES)
    return "\n".join(lines) + "\n"


def write_report(directory: str | Path, achieved: Metrics, cm: ConfusionMatrix,
                 method: str = "This run", source: str = "measured", extra: Sequence[str] = ()) -> tuple[Path, Path]:
    directory = Path(directory)
    rows = report_rows(achieved, method, source)
    csv_path = directory / "report.csv"
    txt_path = directory / "report.txt"
    csv_path.write_text(report_csv(rows), encoding="utf-8")
    txt_path.write_text(report_text(rows, cm, extra), encoding="utf-8")
    return txt_path, csv_path
