"""Per-day normalization, labeling, stratified splitting and majority undersampling."""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureMatrix, FeatureVector
from .ingest import GroundTruth

log = logging.getLogger(__name__)

NON_MALICIOUS = 0
MALICIOUS = 1


class ClassTooSmall(ValueError):
    pass


@dataclass
class LabeledSample:
    user: str
    date: dt.date
    features: FeatureVector
    label: int

    @property
    def key(self) -> tuple[str, dt.date]:
        return (self.user, self.date)


def normalize_per_day(matrix: FeatureMatrix) -> FeatureMatrix:
    """Min-max scale every slot against the users active on the same date.

    A (date, slot) column with max == min maps to 0.
    """
    values = matrix.values
    out = np.zeros_like(values)
    dates = np.array([d.toordinal() for _, d in matrix.keys], dtype=np.int64)
    order = np.argsort(dates, kind="stable")
    bounds = np.flatnonzero(np.diff(dates[order])) + 1
    for idx in np.split(order, bounds):
        if idx.size == 0:
            continue
        block = values[idx]
        lo = block.min(axis=0)
        span = block.max(axis=0) - lo
        scaled = np.zeros_like(block)
        ok = span > 0
        scaled[:, ok] = (block[:, ok] - lo[ok]) / span[ok]
        out[idx] = np.clip(scaled, 0.0, 1.0)
    return FeatureMatrix(list(matrix.keys), out, normalized=True, labels=matrix.labels)


def label_matrix(matrix: FeatureMatrix, truth: GroundTruth) -> tuple[np.ndarray, int]:
    """Label array aligned with ``matrix.keys`` and the count of unmatched truth pairs."""
    labels = np.fromiter((key in truth for key in matrix.keys), dtype=np.int8, count=len(matrix))
    present = set(matrix.keys)
    unmatched = sum(1 for pair in truth.pairs if pair not in present)
    if unmatched:
        log.warning("%d ground-truth user-days have no feature row", unmatched)
    return labels, unmatched


def label_samples(matrix: FeatureMatrix, truth: GroundTruth) -> tuple[list[LabeledSample], int]:
    labels, unmatched = label_matrix(matrix, truth)
    samples = [
        LabeledSample(user, day, matrix.vector(i), int(labels[i]))
        for i, (user, day) in enumerate(matrix.keys)
    ]
    return samples, unmatched


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def stratified_split_indices(
    labels: np.ndarray, fraction_train: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class seeded shuffle, cut at round(fraction * class size).

    Returned index arrays are in ascending (corpus) order.
    """
    if not 0 < fraction_train < 1:
        raise ValueError(f"fraction_train must lie in (0, 1), got {fraction_train}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for cls in (NON_MALICIOUS, MALICIOUS):
        members = np.flatnonzero(labels == cls)
        if members.size < 2:
            raise ClassTooSmall(f"class {cls} has {members.size} member(s); need at least 2")
        shuffled = rng.permutation(members)
        cut = _round_half_up(fraction_train * members.size)
        train_parts.append(shuffled[:cut])
        test_parts.append(shuffled[cut:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def undersample_indices(labels: np.ndarray, ratio: float, seed: int) -> np.ndarray:
    """Positions (into ``labels``) kept after majority undersampling, in shuffled order."""
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    minority = np.flatnonzero(labels == MALICIOUS)
    majority = np.flatnonzero(labels == NON_MALICIOUS)
    keep = min(math.floor(ratio * minority.size), majority.size)
    chosen = rng.choice(majority, size=keep, replace=False) if keep < majority.size else majority
    kept = np.concatenate([minority, np.sort(chosen)])
    return rng.permutation(kept)


def split_train_test(samples: Sequence[LabeledSample], fraction_train: float, seed: int) -> "DatasetSplit":
    labels = np.fromiter((s.label for s in samples), dtype=np.int8, count=len(samples))
    train_idx, test_idx = stratified_split_indices(labels, fraction_train, seed)
    return DatasetSplit(
        train=[samples[i] for i in train_idx],
        test=[samples[i] for i in test_idx],
        seed=seed,
        fraction_train=fraction_train,
    )


def undersample_majority(train: Sequence[LabeledSample], ratio: float, seed: int) -> list[LabeledSample]:
    labels = np.fromiter((s.label for s in train), dtype=np.int8, count=len(train))
    return [train[i] for i in undersample_indices(labels, ratio, seed)]


@dataclass
class DatasetSplit:
    train: list[LabeledSample]
    test: list[LabeledSample]
    seed: int
    fraction_train: float
    ratio_majority_per_minority: float | None = None
    kept: list[LabeledSample] | None = field(default=None)

    def undersample(self, ratio: float, seed: int) -> list[LabeledSample]:
        self.ratio_majority_per_minority = ratio
        self.kept = undersample_majority(self.train, ratio, seed)
        return self.kept


# ---------------------------------------------------------------------------
# split manifest: "# key=value" header comments, then user,date,partition,kept

@dataclass
class SplitManifest:
    keys: list[tuple[str, dt.date]]
    partition: list[str]
    kept: list[bool]
    meta: dict[str, str]


def write_split_manifest(
    path: str | Path,
    keys: Sequence[tuple[str, dt.date]],
    train_idx: np.ndarray,
    kept_idx: np.ndarray,
    meta: dict[str, object],
) -> None:
    train_set = set(int(i) for i in train_idx)
    kept_set = set(int(i) for i in kept_idx)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        fh.write("user,date,partition,kept\n")
        for i, (user, day) in enumerate(keys):
            part = "train" if i in train_set else "test"
            kept = part == "test" or i in kept_set
            fh.write(f"{user},{day.isoformat()},{part},{str(kept).lower()}\n")


def read_split_manifest(path: str | Path) -> SplitManifest:
    meta: dict[str, str] = {}
    keys, partition, kept = [], [], []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
                continue
            if not line or line.startswith("user,"):
                continue
            user, day, part, k = line.split(",")
            keys.append((user, dt.date.fromisoformat(day)))
            partition.append(part)
            kept.append(k == "true")
    return SplitManifest(keys, partition, kept, meta)
