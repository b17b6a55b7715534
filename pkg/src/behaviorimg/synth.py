"""Seeded generator of CERT-schema logs with injected malicious user-days.

Each user gets a behavioral baseline drawn once from seeded priors (arrival
and departure times, mail/web/file volumes, removable-media habits, how often
they work late). A malicious user-day keeps the user's normal activity and
adds a night session on some PC with a removable-media burst, file copies,
mail with attachments to outside addresses and web traffic.
"""

from __future__ import annotations

import csv
import datetime as dt
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import COLUMNS, LogKind, format_timestamp

EXTERNAL_DOMAINS = ["gmail.com", "yahoo.com", "hotmail.com", "aol.com", "comcast.net", "msn.com"]
WORK_SITES = [
    "dtaa.com", "intranet.dtaa.com", "google.com", "bing.com", "msn.com", "cnn.com",
    "weather.com", "linkedin.com", "amazon.com", "wikipedia.org", "nytimes.com",
    "espn.com", "bbc.co.uk", "craigslist.org", "yahoo.com", "reddit.com",
]
SUSPICIOUS_SITES = ["wikileaks.org", "dropbox.com", "monster.com", "careerbuilder.com", "keylogger.net"]
FILE_EXTENSIONS = [".doc", ".pdf", ".txt", ".zip", ".jpg", ".exe"]


@dataclass
class ScenarioConfig:
    users: int = 50
    days: int = 30
    seed: int = 0
    malicious_fraction: float = 0.015
    start: dt.date = dt.date(2010, 1, 4)
    org_domain: str = "dtaa.com"

    def __post_init__(self):
        if self.users < 1 or self.days < 1:
            raise ValueError("users and days must be positive")
        if not 0 < self.malicious_fraction < 0.5:
            raise ValueError("malicious_fraction must lie in (0, 0.5)")


@dataclass
class UserProfile:
    user: str
    pc: str
    arrive: float
    depart: float
    attendance: float
    emails: float
    external_rate: float
    received: float
    files: float
    http: float
    device_user: bool
    device_rate: float
    late_rate: float


@dataclass
class GenerationResult:
    directory: Path
    files: dict[str, Path]
    ground_truth: Path
    active_user_days: int
    malicious: list[tuple[str, dt.date]]
    event_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total_events(self) -> int:
        return sum(self.event_counts.values())


def _user_ids(rng: np.random.Generator, n: int) -> list[str]:
    letters = np.array(list(string.ascii_uppercase))
    return ["".join(rng.choice(letters, 3)) + f"{i + 1:04d}" for i in range(n)]


def _profiles(rng: np.random.Generator, config: ScenarioConfig) -> list[UserProfile]:
    users = _user_ids(rng, config.users)
    pcs = rng.permutation(10000)[: config.users]
    profiles = []
    for user, pc in zip(users, pcs):
        device_user = bool(rng.random() < 0.3)
        profiles.append(UserProfile(
            user=user,
            pc=f"PC-{pc:04d}",
            arrive=float(rng.uniform(7.6, 9.2)),
            depart=float(rng.uniform(16.3, 18.2)),
            attendance=float(rng.uniform(0.88, 0.98)),
            emails=float(rng.uniform(1.0, 8.0)),
            external_rate=float(rng.uniform(0.0, 0.12)),
            received=float(rng.uniform(0.2, 2.0)),
            files=float(rng.uniform(0.5, 6.0)),
            http=float(rng.uniform(4.0, 25.0)),
            device_user=device_user,
            device_rate=float(rng.uniform(0.3, 1.5)) if device_user else 0.0,
            late_rate=float(rng.uniform(0.0, 0.05)),
        ))
    return profiles


class _Writer:
    """Accumulates rows per log kind; assigns sequential, kind-tagged ids."""

    def __init__(self):
        self.rows: dict[LogKind, list[tuple[dt.datetime, list[str]]]] = {k: [] for k in LogKind}

    def add(self, kind: LogKind, when: dt.datetime, user: str, pc: str, *rest: str) -> None:
        self.rows[kind].append((when, [user, pc, *rest]))

    def write(self, directory: Path) -> tuple[dict[str, Path], dict[str, int]]:
        paths, counts = {}, {}
        for kind in LogKind:
            rows = sorted(self.rows[kind], key=lambda r: (r[0], r[1]))
            path = directory / kind.filename
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(COLUMNS[kind])
                for n, (when, fields) in enumerate(rows):
                    event_id = f"{{{kind.value[0].upper()}{n:09d}}}"
                    writer.writerow([event_id, format_timestamp(when), *fields])
            paths[kind.filename] = path
            counts[kind.filename] = len(rows)
        return paths, counts


def _at(day: dt.date, hour: float) -> dt.datetime:
    hour = min(max(hour, 0.0), 23.0 + 59 / 60 + 58 / 3600)
    seconds = int(round(hour * 3600))
    return dt.datetime.combine(day, dt.time()) + dt.timedelta(seconds=seconds)


def _times(rng: np.random.Generator, count: int, lo: float, hi: float) -> list[dt.datetime]:
    return sorted(rng.uniform(lo, hi, count).tolist())


def _emit_day(w: _Writer, rng: np.random.Generator, p: UserProfile, day: dt.date,
              coworkers: list[str], org: str) -> None:
    me = f"{p.user}@{org}"
    arrive = rng.normal(p.arrive, 0.25)
    depart = max(rng.normal(p.depart, 0.3), arrive + 4.0)
    w.add(LogKind.LOGON, _at(day, arrive), p.user, p.pc, "Logon")
    w.add(LogKind.LOGON, _at(day, depart), p.user, p.pc, "Logoff")
    if rng.random() < p.late_rate:
        start = rng.uniform(18.5, 21.0)
        w.add(LogKind.LOGON, _at(day, start), p.user, p.pc, "Logon")
        w.add(LogKind.LOGON, _at(day, start + rng.uniform(0.3, 1.5)), p.user, p.pc, "Logoff")

    for hour in _times(rng, rng.poisson(p.emails), arrive, depart):
        n_to = 1 + rng.poisson(0.6)
        rcpts = []
        for _ in range(n_to):
            if rng.random() < p.external_rate:
                rcpts.append(f"{coworkers[rng.integers(len(coworkers))].lower()}@{EXTERNAL_DOMAINS[rng.integers(len(EXTERNAL_DOMAINS))]}")
            else:
                rcpts.append(f"{coworkers[rng.integers(len(coworkers))]}@{org}")
        cc = f"{coworkers[rng.integers(len(coworkers))]}@{org}" if rng.random() < 0.2 else ""
        attach = int(rng.random() < 0.15)
        size = int(rng.integers(2000, 40000)) + attach * int(rng.integers(10000, 200000))
        w.add(LogKind.EMAIL, _at(day, hour), p.user, p.pc, ";".join(rcpts), cc, "", me, str(size), str(attach), "")
    for hour in _times(rng, rng.poisson(p.received), arrive, depart):
        sender = f"{coworkers[rng.integers(len(coworkers))]}@{org}"
        w.add(LogKind.EMAIL, _at(day, hour), p.user, p.pc, me, "", "", sender,
              str(int(rng.integers(2000, 40000))), "0", "")
    for hour in _times(rng, rng.poisson(p.files), arrive, depart):
        name = f"{rng.integers(16 ** 8):08X}{FILE_EXTENSIONS[rng.integers(len(FILE_EXTENSIONS))]}"
        w.add(LogKind.FILE, _at(day, hour), p.user, p.pc, name, "")
    for hour in _times(rng, rng.poisson(p.http), arrive, depart):
        site = WORK_SITES[rng.integers(len(WORK_SITES))]
        w.add(LogKind.HTTP, _at(day, hour), p.user, p.pc, f"http://{site}/page{rng.integers(1000)}.html", "")
    if p.device_user:
        for hour in _times(rng, rng.poisson(p.device_rate), arrive, depart - 0.2):
            w.add(LogKind.DEVICE, _at(day, hour), p.user, p.pc, "Connect")
            w.add(LogKind.DEVICE, _at(day, hour + rng.uniform(0.05, 0.2)), p.user, p.pc, "Disconnect")


def _emit_malicious(w: _Writer, rng: np.random.Generator, p: UserProfile, day: dt.date,
                    other_pcs: list[str], org: str) -> int:
    """Night-time overlay; returns the number of after-hours events written."""
    me = f"{p.user}@{org}"
    pc = p.pc if rng.random() < 0.5 else other_pcs[rng.integers(len(other_pcs))]
    if rng.random() < 0.6:
        start = rng.uniform(19.5, 22.0)
    else:
        start = rng.uniform(0.5, 4.5)
    end = min(start + rng.uniform(1.0, 1.9), 23.9)
    w.add(LogKind.LOGON, _at(day, start), p.user, pc, "Logon")
    w.add(LogKind.LOGON, _at(day, end), p.user, pc, "Logoff")
    written = 1

    burst = int(rng.integers(3, 8))
    slots = np.linspace(start + 0.05, end - 0.1, burst + 1)
    for i in range(burst):
        w.add(LogKind.DEVICE, _at(day, slots[i]), p.user, pc, "Connect")
        w.add(LogKind.DEVICE, _at(day, slots[i] + (slots[i + 1] - slots[i]) * 0.5), p.user, pc, "Disconnect")
        written += 1
    for hour in _times(rng, int(rng.integers(5, 20)), start, end):
        name = f"{rng.integers(16 ** 8):08X}{FILE_EXTENSIONS[rng.integers(len(FILE_EXTENSIONS))]}"
        w.add(LogKind.FILE, _at(day, hour), p.user, pc, name, "")
        written += 1
    for hour in _times(rng, int(rng.integers(2, 5)), start, end):
        rcpts = [
            f"{p.user.lower()}{k}@{EXTERNAL_DOMAINS[rng.integers(len(EXTERNAL_DOMAINS))]}"
            for k in range(int(rng.integers(1, 3)))
        ]
        size = int(rng.integers(200000, 2000000))
        w.add(LogKind.EMAIL, _at(day, hour), p.user, pc, ";".join(rcpts), "", "", me, str(size),
              str(int(rng.integers(1, 4))), "")
        written += 1
    for hour in _times(rng, int(rng.integers(3, 10)), start, end):
        site = SUSPICIOUS_SITES[rng.integers(len(SUSPICIOUS_SITES))]
        w.add(LogKind.HTTP, _at(day, hour), p.user, pc, f"http://{site}/{rng.integers(1000)}", "")
        written += 1
    return written


def generate(config: ScenarioConfig, directory: str | Path) -> GenerationResult:
    """Write logon/device/file/email/http CSVs plus ``ground_truth.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    profiles = _profiles(rng, config)
    user_ids = [p.user for p in profiles]
    all_pcs = [p.pc for p in profiles]
    days = [config.start + dt.timedelta(days=d) for d in range(config.days)]

    # attendance is decided up front so the malicious draw is over real active days
    active: list[tuple[int, int]] = []
    for d, day in enumerate(days):
        weekday = day.weekday() < 5
        for u, p in enumerate(profiles):
            if rng.random() < (p.attendance if weekday else 0.02):
                active.append((u, d))
    if not active:
        raise ValueError("scenario produced no active user-days")
    n_mal = max(1, int(round(config.malicious_fraction * len(active))))
    chosen = set(int(i) for i in rng.choice(len(active), size=min(n_mal, len(active)), replace=False))

    writer = _Writer()
    malicious: list[tuple[str, dt.date]] = []
    for i, (u, d) in enumerate(active):
        p, day = profiles[u], days[d]
        # a per-day stream keeps each user-day's draws independent of the others
        day_rng = np.random.default_rng([config.seed, u, d])
        coworkers = [user_ids[k] for k in day_rng.choice(len(user_ids), size=min(5, len(user_ids)), replace=False)]
        _emit_day(writer, day_rng, p, day, coworkers, config.org_domain)
        if i in chosen:
            _emit_malicious(writer, day_rng, p, day, all_pcs, config.org_domain)
            malicious.append((p.user, day))

    files, counts = writer.write(directory)
    truth_path = directory / "ground_truth.csv"
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["user", "date"])
        for user, day in sorted(malicious, key=lambda k: (k[1], k[0])):
            out.writerow([user, day.strftime("%m/%d/%Y")])
    return GenerationResult(directory, files, truth_path, len(active), sorted(malicious), counts)
