"""Per-user-per-day feature vectors (20 slots: logon, email, file, device, http)."""

from __future__ import annotations

import csv
import datetime as dt
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

import numpy as np

from .ingest import EventKind, EventRecord, UserDayKey

LOGON_FEATURES = [f"L{i}" for i in range(1, 10)]
EMAIL_FEATURES = [f"E{i}" for i in range(1, 6)]
FILE_FEATURES = ["F1"]
DEVICE_FEATURES = ["D1", "D2", "D3"]
HTTP_FEATURES = ["H1", "H2", "H3"]
# every named feature, in export (CSV) order
EXPORT_NAMES: list[str] = (
    LOGON_FEATURES + EMAIL_FEATURES + FILE_FEATURES + DEVICE_FEATURES + HTTP_FEATURES
)
# L7 (sessions started outside office hours) equals L4 (logons outside office
# hours) because every logon opens a session; the vector carries it once.
DUPLICATES = {"L7": "L4"}
FEATURE_NAMES: list[str] = [n for n in EXPORT_NAMES if n not in DUPLICATES]
N_FEATURES = len(FEATURE_NAMES)
_LOGON_SLOTS = [LOGON_FEATURES.index(n) for n in LOGON_FEATURES if n not in DUPLICATES]

DEFAULT_ORG_DOMAIN = "dtaa.com"

_END_OF_DAY = dt.time(23, 59, 59)


@dataclass(frozen=True)
class OfficeHours:
    start: dt.time = dt.time(8, 0)
    end: dt.time = dt.time(17, 0)

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"office hours start {self.start} must precede end {self.end}")

    @classmethod
    def parse(cls, text: str) -> "OfficeHours":
        """Parse ``HH:MM-HH:MM``."""
        try:
            a, b = text.split("-")
            start = dt.time.fromisoformat(a.strip())
            end = dt.time.fromisoformat(b.strip())
        except ValueError as exc:
            raise ValueError(f"office hours must look like HH:MM-HH:MM, got {text!r}") from exc
        return cls(start, end)

    def __str__(self) -> str:
        return f"{self.start:%H:%M}-{self.end:%H:%M}"

    def outside(self, when: dt.datetime) -> bool:
        t = when.time()
        return not (self.start <= t < self.end)


@dataclass
class FeatureVector:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (N_FEATURES,):
            raise ValueError(f"feature vector must have {N_FEATURES} slots, got {self.values.shape}")

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


def _hour_of_day(when: dt.datetime) -> float:
    return when.hour + when.minute / 60 + when.second / 3600


def extract_logon_features(events: Sequence[EventRecord], hours: OfficeHours) -> list[float]:
    events = sorted(events, key=lambda e: (e.when, e.event_id))
    logons = [e for e in events if e.kind is EventKind.LOGON]
    logoffs = [e for e in events if e.kind is EventKind.LOGOFF]
    pcs = {e.pc for e in events if e.kind in (EventKind.LOGON, EventKind.LOGOFF)}

    # FIFO pairing per pc; durations counted in whole minutes
    open_sessions: dict[str, deque] = defaultdict(deque)
    minutes = 0
    for ev in events:
        if ev.kind is EventKind.LOGON:
            open_sessions[ev.pc].append(ev.when)
        elif ev.kind is EventKind.LOGOFF and open_sessions[ev.pc]:
            start = open_sessions[ev.pc].popleft()
            minutes += int((ev.when - start).total_seconds()) // 60
    for queue in open_sessions.values():
        for start in queue:
            close = dt.datetime.combine(start.date(), _END_OF_DAY)
            minutes += int((close - start).total_seconds()) // 60

    outside_logons = sum(hours.outside(e.when) for e in logons)
    return [
        float(len(logons)),
        float(len(logoffs)),
        float(len(pcs)),
        float(outside_logons),
        minutes / 60,
        float(len(logons)),
        float(outside_logons),
        _hour_of_day(logons[0].when) if logons else 0.0,
        _hour_of_day(logoffs[-1].when) if logoffs else 0.0,
    ]


def _domain(address: str) -> str:
    return address.rpartition("@")[2].strip().lower()


def extract_email_features(
    events: Sequence[EventRecord], user_address: str, org_domain: str = DEFAULT_ORG_DOMAIN
) -> list[float]:
    me = user_address.strip().lower()
    org = org_domain.lower()
    sent = [e for e in events if (e.sender or "").strip().lower() == me]
    received = len(events) - len(sent)
    external = {
        addr.lower()
        for e in sent
        for addr in e.recipients
        if _domain(addr) != org
    }
    return [
        float(len(sent)),
        float(received),
        float(len(external)),
        float(sum(e.size for e in sent)),
        float(sum(1 for e in sent if e.attachments > 0)),
    ]


def extract_file_features(events: Sequence[EventRecord]) -> list[float]:
    return [float(len(events))]


def extract_device_features(events: Sequence[EventRecord], hours: OfficeHours) -> list[float]:
    connects = [e for e in events if e.kind is EventKind.DEVICE_CONNECT]
    return [
        float(len(connects)),
        float(sum(hours.outside(e.when) for e in connects)),
        float(len({e.pc for e in events})),
    ]


def url_host(url: str) -> str | None:
    """Lowercased host of ``url``; None when there is none to be found."""
    text = url.strip()
    if not text:
        return None
    if "://" not in text:
        text = "http://" + text
    try:
        host = urlsplit(text).hostname
    except ValueError:
        return None
    return host or None


def extract_http_features(events: Sequence[EventRecord], hours: OfficeHours) -> list[float]:
    hosts = {h for h in (url_host(e.url or "") for e in events) if h is not None}
    return [
        float(len(events)),
        float(len(hosts)),
        float(sum(hours.outside(e.when) for e in events)),
    ]


def user_address_for(user: str, org_domain: str = DEFAULT_ORG_DOMAIN,
                     address_map: Mapping[str, str] | None = None) -> str:
    if address_map and user in address_map:
        return address_map[user]
    return f"{user}@{org_domain}"


def assemble_vector(
    events: Iterable[EventRecord],
    hours: OfficeHours = OfficeHours(),
    user_address: str = "",
    org_domain: str = DEFAULT_ORG_DOMAIN,
) -> FeatureVector:
    """Raw 20-slot vector for one user-day; families with no events contribute zeros."""
    by_family: dict[str, list[EventRecord]] = defaultdict(list)
    for ev in events:
        if ev.kind in (EventKind.LOGON, EventKind.LOGOFF):
            by_family["logon"].append(ev)
        elif ev.kind in (EventKind.DEVICE_CONNECT, EventKind.DEVICE_DISCONNECT):
            by_family["device"].append(ev)
        elif ev.kind is EventKind.FILE:
            by_family["file"].append(ev)
        elif ev.kind is EventKind.EMAIL:
            by_family["email"].append(ev)
        else:
            by_family["http"].append(ev)
    logon = extract_logon_features(by_family["logon"], hours)
    values = (
        [logon[i] for i in _LOGON_SLOTS]
        + extract_email_features(by_family["email"], user_address, org_domain)
        + extract_file_features(by_family["file"])
        + extract_device_features(by_family["device"], hours)
        + extract_http_features(by_family["http"], hours)
    )
    return FeatureVector(np.array(values), normalized=False)


@dataclass
class FeatureMatrix:
    """Row-aligned user-day keys and their feature values (one row per key)."""

    keys: list[UserDayKey]
    values: np.ndarray
    normalized: bool = False
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.keys), N_FEATURES)

    def __len__(self) -> int:
        return len(self.keys)

    def vector(self, i: int) -> FeatureVector:
        return FeatureVector(self.values[i].copy(), normalized=self.normalized)


def extract_matrix(
    groups: Mapping[UserDayKey, Sequence[EventRecord]],
    hours: OfficeHours = OfficeHours(),
    org_domain: str = DEFAULT_ORG_DOMAIN,
    address_map: Mapping[str, str] | None = None,
) -> FeatureMatrix:
    keys = sorted(groups)
    values = np.zeros((len(keys), N_FEATURES))
    for i, key in enumerate(keys):
        address = user_address_for(key[0], org_domain, address_map)
        values[i] = assemble_vector(groups[key], hours, address, org_domain).values
    return FeatureMatrix(keys, values)


def _fmt(v: float) -> str:
    text = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("", "-0") else text


LABEL_TEXT = {0: "non-malicious", 1: "malicious"}
_LABEL_VALUE = {v: k for k, v in LABEL_TEXT.items()}


def write_feature_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user", "date", *EXPORT_NAMES, "label"])
        for i, (user, day) in enumerate(matrix.keys):
            label = "" if matrix.labels is None else LABEL_TEXT[int(matrix.labels[i])]
            row = dict(zip(FEATURE_NAMES, matrix.values[i]))
            for dup, src in DUPLICATES.items():
                row[dup] = row[src]
            writer.writerow([user, day.isoformat(), *(_fmt(row[n]) for n in EXPORT_NAMES), label])


def read_feature_csv(path: str | Path, *, normalized: bool = False) -> FeatureMatrix:
    keys: list[UserDayKey] = []
    rows: list[list[float]] = []
    labels: list[int] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[2:2 + len(EXPORT_NAMES)] != EXPORT_NAMES:
            raise ValueError(f"{path}: unexpected feature matrix header")
        cols = [header.index(n) for n in FEATURE_NAMES]
        for row in reader:
            if len(row) != len(header):
                raise ValueError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            keys.append((row[0], dt.date.fromisoformat(row[1])))
            rows.append([float(row[c]) for c in cols])
            if row[-1]:
                labels.append(_LABEL_VALUE[row[-1]])
    values = np.array(rows, dtype=np.float64).reshape(len(keys), N_FEATURES)
    lab = np.array(labels, dtype=np.int8) if labels and len(labels) == len(keys) else None
    return FeatureMatrix(keys, values, normalized=normalized, labels=lab)
