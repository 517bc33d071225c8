"""Domain records for the raw streams, plus ingestion and validation.

One file per stream kind lives under a cohort directory::

    self_reports.csv     participant,time,loneliness
    ppg_segments.jsonl   {"participant", "start", "sample_rate", "samples"}
    daily_scores.csv     participant,date,name,value
    phone_events.csv     participant,time,kind,duration,category
    location.csv         participant,time,lat,lon,speed

Times are UTC epoch seconds. Missing files are treated as empty streams.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator
from zoneinfo import ZoneInfo

import numpy as np

logger = logging.getLogger(__name__)

PHONE_KINDS = (
    "screen_on",
    "screen_off",
    "screen_lock",
    "screen_unlock",
    "battery_plugin",
    "call",
    "message",
    "notification",
)
CATEGORIZED_KINDS = ("message", "notification")

SELF_REPORTS = "self_reports.csv"
PPG_SEGMENTS = "ppg_segments.jsonl"
DAILY_SCORES = "daily_scores.csv"
PHONE_EVENTS = "phone_events.csv"
LOCATION = "location.csv"

_EPOCH_DATE = dt.date(1970, 1, 1)


class ValidationError(ValueError):
    """A record violates its schema; carries the file/line/field when known."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None, field: str | None = None):
        self.message = message
        self.file = file
        self.line = line
        self.field = field
        where = ":".join(str(p) for p in (file, line) if p is not None)
        if field:
            where = f"{where} [{field}]" if where else f"[{field}]"
        super().__init__(f"{where}: {message}" if where else message)


def _check_participant(pid: str) -> None:
    if not isinstance(pid, str) or not pid:
        raise ValidationError("participant id must be a non-empty string", field="participant")


def _check_finite(value: float, name: str) -> None:
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}", field=name)


@dataclass(frozen=True, eq=False)
class PpgSegment:
    participant: str
    start: float
    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        _check_participant(self.participant)
        _check_finite(self.start, "start")
        if not self.sample_rate > 0 or not math.isfinite(self.sample_rate):
            raise ValidationError(f"sample_rate must be > 0, got {self.sample_rate!r}", field="sample_rate")
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("samples must be a non-empty 1-d sequence", field="samples")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "PpgSegment":
        return PpgSegment(self.participant, self.start, self.sample_rate, samples)

    def __eq__(self, other):
        if not isinstance(other, PpgSegment):
            return NotImplemented
        return (
            self.participant == other.participant
            and self.start == other.start
            and self.sample_rate == other.sample_rate
            and np.array_equal(self.samples, other.samples, equal_nan=True)
        )

    def __hash__(self):
        return hash((self.participant, self.start, self.sample_rate, self.samples.size))


@dataclass(frozen=True)
class DailyScore:
    participant: str
    date: dt.date
    name: str
    value: float

    def __post_init__(self):
        _check_participant(self.participant)
        if not self.name:
            raise ValidationError("score name must be non-empty", field="name")
        _check_finite(self.value, "value")


@dataclass(frozen=True)
class PhoneEvent:
    participant: str
    time: float
    kind: str
    duration: float | None = None
    category: str | None = None

    def __post_init__(self):
        _check_participant(self.participant)
        _check_finite(self.time, "time")
        if self.kind not in PHONE_KINDS:
            raise ValidationError(f"unknown event kind {self.kind!r}", field="kind")
        if self.kind == "call":
            if self.duration is None:
                raise ValidationError("call events need a duration", field="duration")
            if not self.duration >= 0 or not math.isfinite(self.duration):
                raise ValidationError(f"call duration must be >= 0, got {self.duration!r}", field="duration")
        elif self.duration is not None:
            raise ValidationError(f"duration is only allowed on calls, not {self.kind}", field="duration")
        if self.category is not None and self.kind not in CATEGORIZED_KINDS:
            raise ValidationError(f"category is not allowed on {self.kind}", field="category")


@dataclass(frozen=True)
class LocationFix:
    participant: str
    time: float
    latitude: float
    longitude: float
    speed: float | None = None

    def __post_init__(self):
        _check_participant(self.participant)
        _check_finite(self.time, "time")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"latitude {self.latitude!r} outside [-90, 90]", field="lat")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"longitude {self.longitude!r} outside [-180, 180]", field="lon")
        if self.speed is not None and (not self.speed >= 0 or not math.isfinite(self.speed)):
            raise ValidationError(f"speed must be >= 0, got {self.speed!r}", field="speed")


@dataclass(frozen=True)
class SelfReport:
    participant: str
    time: float
    loneliness: float

    def __post_init__(self):
        _check_participant(self.participant)
        _check_finite(self.time, "time")
        if not 0.0 <= self.loneliness <= 100.0:
            raise ValidationError(f"loneliness {self.loneliness!r} outside [0, 100]", field="loneliness")


@dataclass(frozen=True)
class CohortStreams:
    participants: tuple[str, ...] = ()
    ppg: tuple[PpgSegment, ...] = ()
    daily_scores: tuple[DailyScore, ...] = ()
    phone_events: tuple[PhoneEvent, ...] = ()
    location_fixes: tuple[LocationFix, ...] = ()
    self_reports: tuple[SelfReport, ...] = ()
    duplicates: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        known = set(self.participants)
        if len(known) != len(self.participants):
            raise ValidationError("participant ids must be unique")
        for name in ("ppg", "daily_scores", "phone_events", "location_fixes", "self_reports"):
            for rec in getattr(self, name):
                if rec.participant not in known:
                    raise ValidationError(f"{name} record for unknown participant {rec.participant!r}")

    @classmethod
    def build(
        cls,
        ppg: Iterable[PpgSegment] = (),
        daily_scores: Iterable[DailyScore] = (),
        phone_events: Iterable[PhoneEvent] = (),
        location_fixes: Iterable[LocationFix] = (),
        self_reports: Iterable[SelfReport] = (),
    ) -> "CohortStreams":
        """Sort, drop duplicates, and derive the participant set."""
        dups: dict[str, int] = {}
        ppg = _dedupe(sorted(ppg, key=lambda r: (r.participant, r.start)), lambda r: (r.participant, r.start), "ppg", dups)
        daily = _dedupe(
            sorted(daily_scores, key=lambda r: (r.participant, r.date, r.name)),
            lambda r: (r.participant, r.date, r.name),
            "daily_scores",
            dups,
        )
        phone = _dedupe(
            sorted(phone_events, key=lambda r: (r.participant, r.time, r.kind)),
            lambda r: (r.participant, r.time, r.kind),
            "phone_events",
            dups,
        )
        loc = _dedupe(
            sorted(location_fixes, key=lambda r: (r.participant, r.time)),
            lambda r: (r.participant, r.time),
            "location_fixes",
            dups,
        )
        reports = _dedupe(
            sorted(self_reports, key=lambda r: (r.participant, r.time)),
            lambda r: (r.participant, r.time),
            "self_reports",
            dups,
        )
        pids = sorted({r.participant for group in (ppg, daily, phone, loc, reports) for r in group})
        for name, n in dups.items():
            logger.warning("dropped %d duplicate %s records", n, name)
        return cls(tuple(pids), tuple(ppg), tuple(daily), tuple(phone), tuple(loc), tuple(reports), dups)

    def of(self, participant: str) -> "CohortStreams":
        """The streams restricted to one participant."""
        keep = lambda recs: tuple(r for r in recs if r.participant == participant)
        return CohortStreams(
            (participant,) if participant in self.participants else (),
            keep(self.ppg),
            keep(self.daily_scores),
            keep(self.phone_events),
            keep(self.location_fixes),
            keep(self.self_reports),
        )


def _dedupe(records, key, name, dups) -> list:
    out = []
    last = object()
    for rec in records:
        k = key(rec)
        if k == last:
            dups[name] = dups.get(name, 0) + 1
            continue
        out.append(rec)
        last = k
    return out


# -- study clock -----------------------------------------------------------


class StudyClock:
    """Maps UTC epoch seconds to calendar days in one study timezone.

    Days are integers counted from 1970-01-01 in the study zone.
    """

    def __init__(self, timezone: str = "UTC"):
        self.timezone = timezone
        self._zone = None if timezone.upper() == "UTC" else ZoneInfo(timezone)

    def _offsets(self, ts: np.ndarray) -> np.ndarray:
        if self._zone is None:
            return np.zeros_like(ts)
        cache: dict[int, float] = {}
        out = np.empty_like(ts)
        for i, t in enumerate(ts):
            hour = int(t // 3600)
            off = cache.get(hour)
            if off is None:
                off = dt.datetime.fromtimestamp(float(t), self._zone).utcoffset().total_seconds()
                cache[hour] = off
            out[i] = off
        return out

    def local_seconds(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        return ts + self._offsets(ts)

    def day_of(self, ts) -> np.ndarray:
        return np.floor(self.local_seconds(ts) / 86400.0).astype(np.int64)

    def day_start(self, day: int) -> float:
        """UTC epoch seconds of local midnight opening ``day``."""
        if self._zone is None:
            return day * 86400.0
        d = _EPOCH_DATE + dt.timedelta(days=int(day))
        return dt.datetime(d.year, d.month, d.day, tzinfo=self._zone).timestamp()

    @staticmethod
    def day_of_date(date: dt.date) -> int:
        return (date - _EPOCH_DATE).days

    @staticmethod
    def date_of_day(day: int) -> dt.date:
        return _EPOCH_DATE + dt.timedelta(days=int(day))


# -- reading ---------------------------------------------------------------


def _csv_rows(path: Path, columns: tuple[str, ...]) -> Iterator[tuple[int, dict[str, str]]]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in columns if c not in header]
        if missing:
            raise ValidationError(f"missing columns {missing}", file=path.name, line=1)
        for row in reader:
            # header is line 1
            yield reader.line_num, row


def _parse_float(raw: str | None, fname: str, path: Path, line: int, optional: bool = False) -> float | None:
    if raw is None or raw.strip() == "":
        if optional:
            return None
        raise ValidationError("missing value", file=path.name, line=line, field=fname)
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"not a number: {raw!r}", file=path.name, line=line, field=fname) from None


def _located(exc: ValidationError, path: Path, line: int) -> ValidationError:
    return ValidationError(exc.message, path.name, line, exc.field)


def _read_csv(path: Path, columns: tuple[str, ...], make) -> list:
    if not path.exists():
        return []
    out = []
    for line, row in _csv_rows(path, columns):
        try:
            out.append(make(row, path, line))
        except ValidationError as exc:
            if exc.file is not None:
                raise
            raise _located(exc, path, line) from None
    return out


def _report(row, path, line):
    return SelfReport(
        row["participant"],
        _parse_float(row["time"], "time", path, line),
        _parse_float(row["loneliness"], "loneliness", path, line),
    )


def _daily(row, path, line):
    try:
        date = dt.date.fromisoformat(row["date"])
    except (TypeError, ValueError):
        raise ValidationError(f"bad date {row['date']!r}", file=path.name, line=line, field="date") from None
    return DailyScore(row["participant"], date, row["name"], _parse_float(row["value"], "value", path, line))


def _phone(row, path, line):
    category = row.get("category") or None
    return PhoneEvent(
        row["participant"],
        _parse_float(row["time"], "time", path, line),
        row["kind"],
        _parse_float(row.get("duration"), "duration", path, line, optional=True),
        category,
    )


def _fix(row, path, line):
    return LocationFix(
        row["participant"],
        _parse_float(row["time"], "time", path, line),
        _parse_float(row["lat"], "lat", path, line),
        _parse_float(row["lon"], "lon", path, line),
        _parse_float(row.get("speed"), "speed", path, line, optional=True),
    )


def _read_ppg(path: Path) -> list[PpgSegment]:
    if not path.exists():
        return []
    out = []
    with path.open(encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON: {exc.msg}", file=path.name, line=line) from None
            for key in ("participant", "start", "sample_rate", "samples"):
                if key not in obj:
                    raise ValidationError("missing field", file=path.name, line=line, field=key)
            try:
                out.append(PpgSegment(obj["participant"], float(obj["start"]), float(obj["sample_rate"]), obj["samples"]))
            except ValidationError as exc:
                raise _located(exc, path, line) from None
            except (TypeError, ValueError) as exc:
                raise ValidationError(str(exc), file=path.name, line=line) from None
    return out


def ingest_cohort(root: str | Path) -> CohortStreams:
    """Parse and validate every stream file under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"cohort directory not found: {root}")
    return CohortStreams.build(
        ppg=_read_ppg(root / PPG_SEGMENTS),
        daily_scores=_read_csv(root / DAILY_SCORES, ("participant", "date", "name", "value"), _daily),
        phone_events=_read_csv(root / PHONE_EVENTS, ("participant", "time", "kind"), _phone),
        location_fixes=_read_csv(root / LOCATION, ("participant", "time", "lat", "lon"), _fix),
        self_reports=_read_csv(root / SELF_REPORTS, ("participant", "time", "loneliness"), _report),
    )


# -- writing ---------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_cohort(streams: CohortStreams, root: str | Path) -> None:
    """Write ``streams`` in the ingestion format; floats keep full precision."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with (root / SELF_REPORTS).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant", "time", "loneliness"])
        for r in streams.self_reports:
            w.writerow([r.participant, _fmt(r.time), _fmt(r.loneliness)])
    with (root / DAILY_SCORES).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant", "date", "name", "value"])
        for r in streams.daily_scores:
            w.writerow([r.participant, r.date.isoformat(), r.name, _fmt(r.value)])
    with (root / PHONE_EVENTS).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant", "time", "kind", "duration", "category"])
        for r in streams.phone_events:
            w.writerow([r.participant, _fmt(r.time), r.kind, _fmt(r.duration), r.category or ""])
    with (root / LOCATION).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant", "time", "lat", "lon", "speed"])
        for r in streams.location_fixes:
            w.writerow([r.participant, _fmt(r.time), _fmt(r.latitude), _fmt(r.longitude), _fmt(r.speed)])
    with (root / PPG_SEGMENTS).open("w", encoding="utf-8") as fh:
        for s in streams.ppg:
            obj = {
                "participant": s.participant,
                "start": s.start,
                "sample_rate": s.sample_rate,
                "samples": s.samples.tolist(),
            }
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")


# -- summary ---------------------------------------------------------------


@dataclass(frozen=True)
class ParticipantSummary:
    participant: str
    n_ppg: int
    n_daily_scores: int
    n_phone_events: int
    n_location_fixes: int
    n_self_reports: int
    first_time: float | None
    last_time: float | None
    first_date: dt.date | None
    last_date: dt.date | None


def cohort_summary(streams: CohortStreams) -> list[ParticipantSummary]:
    counts: dict[str, Counter] = {p: Counter() for p in streams.participants}
    times: dict[str, list[float]] = {p: [] for p in streams.participants}
    dates: dict[str, list[dt.date]] = {p: [] for p in streams.participants}
    for s in streams.ppg:
        counts[s.participant]["ppg"] += 1
        times[s.participant].append(s.start)
    for r in streams.daily_scores:
        counts[r.participant]["daily"] += 1
        dates[r.participant].append(r.date)
    for name, recs in (("phone", streams.phone_events), ("loc", streams.location_fixes), ("reports", streams.self_reports)):
        for r in recs:
            counts[r.participant][name] += 1
            times[r.participant].append(r.time)
    rows = []
    for p in streams.participants:
        c, ts, ds = counts[p], times[p], dates[p]
        rows.append(
            ParticipantSummary(
                p,
                c["ppg"],
                c["daily"],
                c["phone"],
                c["loc"],
                c["reports"],
                min(ts) if ts else None,
                max(ts) if ts else None,
                min(ds) if ds else None,
                max(ds) if ds else None,
            )
        )
    return rows
