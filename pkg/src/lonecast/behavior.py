"""Phone-usage, social and GPS-context features over time windows.

Counting features read ``PhoneEvent`` records on the half-open window
``[start, end)``. Context features come from ``LocationFix`` traces after
stay-point clustering into places; home is the place with the most dwell
between 00:00 and 06:00 study-local time.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import LocationFix, PhoneEvent, StudyClock

EARTH_RADIUS = 6_371_000.0  # m

_COUNTED = {
    "battery_plugin": "n_battery_plugin",
    "screen_on": "n_screen_on",
    "screen_off": "n_screen_off",
    "screen_lock": "n_screen_lock",
    "screen_unlock": "n_screen_unlock",
}


@dataclass(frozen=True)
class WindowSpec:
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"window start {self.start} must precede end {self.end}")

    def shifted(self, dt: float) -> "WindowSpec":
        return WindowSpec(self.start + dt, self.end + dt)


@dataclass(frozen=True)
class BehaviorFeatures:
    n_battery_plugin: int = 0
    n_screen_on: int = 0
    n_screen_off: int = 0
    n_screen_lock: int = 0
    n_screen_unlock: int = 0
    n_messages: int = 0
    n_notifications: int = 0
    n_calls: int = 0
    call_total: float = 0.0
    call_mean: float = 0.0
    messages_by_category: dict[str, int] = field(default_factory=dict)
    notifications_by_category: dict[str, int] = field(default_factory=dict)

    def flat(self, message_categories: Sequence[str] = (), notification_categories: Sequence[str] = ()) -> dict[str, float]:
        """Scalar columns; categories absent from this window count as 0.

        Without explicit category lists, only the categories present here
        get a column.
        """
        out: dict[str, float] = {
            name: getattr(self, name)
            for name in (*_COUNTED.values(), "n_messages", "n_notifications", "n_calls", "call_total", "call_mean")
        }
        for cat in message_categories or sorted(self.messages_by_category):
            out[f"n_messages_{cat}"] = self.messages_by_category.get(cat, 0)
        for cat in notification_categories or sorted(self.notifications_by_category):
            out[f"n_notifications_{cat}"] = self.notifications_by_category.get(cat, 0)
        return out


@dataclass(frozen=True)
class ContextFeatures:
    """NaN marks a value that needs data the window lacks (no fixes, no home)."""

    lat_variance: float = math.nan
    speed_mean: float = math.nan
    speed_variance: float = math.nan
    n_places: int = 0
    home_duration: float = math.nan
    outside_mean: float = math.nan
    outside_std: float = math.nan
    travel_distance: float = 0.0

    def flat(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in CONTEXT_NAMES}


CONTEXT_NAMES = (
    "lat_variance",
    "speed_mean",
    "speed_variance",
    "n_places",
    "home_duration",
    "outside_mean",
    "outside_std",
    "travel_distance",
)


def _window_slice(times: Sequence[float], window: WindowSpec) -> slice:
    return slice(bisect.bisect_left(times, window.start), bisect.bisect_left(times, window.end))


def behavior_features(events: Sequence[PhoneEvent], window: WindowSpec, times: Sequence[float] | None = None) -> BehaviorFeatures:
    """Event counts and call statistics on ``[start, end)``.

    ``times`` may carry the precomputed event times when the same sequence
    is queried for many windows.
    """
    if times is None:
        times = [e.time for e in events]
    counts = dict.fromkeys(_COUNTED.values(), 0)
    messages: dict[str, int] = {}
    notifications: dict[str, int] = {}
    n_messages = n_notifications = n_calls = 0
    call_total = 0.0
    for e in events[_window_slice(times, window)]:
        if e.kind in _COUNTED:
            counts[_COUNTED[e.kind]] += 1
        elif e.kind == "call":
            n_calls += 1
            call_total += e.duration
        elif e.kind == "message":
            n_messages += 1
            if e.category is not None:
                messages[e.category] = messages.get(e.category, 0) + 1
        elif e.kind == "notification":
            n_notifications += 1
            if e.category is not None:
                notifications[e.category] = notifications.get(e.category, 0) + 1
    return BehaviorFeatures(
        **counts,
        n_messages=n_messages,
        n_notifications=n_notifications,
        n_calls=n_calls,
        call_total=call_total,
        call_mean=call_total / n_calls if n_calls else 0.0,
        messages_by_category=dict(sorted(messages.items())),
        notifications_by_category=dict(sorted(notifications.items())),
    )


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between two (lat, lon) points in degrees."""
    return float(haversine_many(a[0], a[1], b[0], b[1]))


def haversine_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


# -- places ----------------------------------------------------------------


@dataclass(frozen=True)
class Visit:
    start: float
    end: float
    latitude: float
    longitude: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Place:
    index: int
    latitude: float
    longitude: float
    visits: tuple[Visit, ...]

    @property
    def dwell(self) -> float:
        return sum(v.duration for v in self.visits)


@dataclass(frozen=True)
class PlaceSet:
    places: tuple[Place, ...] = ()
    home: int | None = None
    radius: float = 150.0

    def __len__(self):
        return len(self.places)

    @property
    def home_place(self) -> Place | None:
        return None if self.home is None else self.places[self.home]


def _stay_points(lat: np.ndarray, lon: np.ndarray, t: np.ndarray, radius: float, min_dwell: float) -> list[Visit]:
    visits = []
    n = len(t)
    i = 0
    while i < n:
        j = i + 1
        # Grow the run while every fix stays within radius of the run centroid.
        while j < n:
            clat, clon = lat[i : j + 1].mean(), lon[i : j + 1].mean()
            if np.max(haversine_many(lat[i : j + 1], lon[i : j + 1], clat, clon)) > radius:
                break
            j += 1
        if t[j - 1] - t[i] >= min_dwell:
            visits.append(Visit(float(t[i]), float(t[j - 1]), float(lat[i:j].mean()), float(lon[i:j].mean())))
            i = j
        else:
            i += 1
    return visits


def _night_overlap(visit: Visit, clock: StudyClock, night_end: float) -> float:
    local0 = float(clock.local_seconds([visit.start])[0])
    offset = local0 - visit.start
    a, b = local0, visit.end + offset
    day = math.floor(a / 86400.0)
    total = 0.0
    while day * 86400.0 < b:
        lo, hi = day * 86400.0, day * 86400.0 + night_end
        total += max(0.0, min(b, hi) - max(a, lo))
        day += 1
    return total


def cluster_places(
    fixes: Sequence[LocationFix],
    radius: float = 150.0,
    min_dwell: float = 600.0,
    clock: StudyClock | None = None,
    night_hours: float = 6.0,
) -> PlaceSet:
    """Stay-point visits merged into places, with home identified.

    Visits within ``radius`` of each other (single linkage) form a place.
    Home is the place with the most dwell in the nightly window; when no
    visit touches the night, the place with the most total dwell is home.
    """
    clock = clock or StudyClock()
    if not fixes:
        return PlaceSet(radius=radius)
    lat = np.array([f.latitude for f in fixes])
    lon = np.array([f.longitude for f in fixes])
    t = np.array([f.time for f in fixes])
    visits = _stay_points(lat, lon, t, radius, min_dwell)
    if not visits:
        return PlaceSet(radius=radius)

    parent = list(range(len(visits)))

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    vlat = np.array([v.latitude for v in visits])
    vlon = np.array([v.longitude for v in visits])
    for a in range(len(visits)):
        d = haversine_many(vlat[a], vlon[a], vlat[a + 1 :], vlon[a + 1 :])
        for b in np.flatnonzero(d <= radius) + a + 1:
            ra, rb = find(a), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[Visit]] = {}
    for k, v in enumerate(visits):
        groups.setdefault(find(k), []).append(v)
    places = []
    for idx, root in enumerate(sorted(groups)):
        members = groups[root]
        w = np.array([max(v.duration, 1e-9) for v in members])
        places.append(
            Place(
                idx,
                float(np.average([v.latitude for v in members], weights=w)),
                float(np.average([v.longitude for v in members], weights=w)),
                tuple(members),
            )
        )

    night = [sum(_night_overlap(v, clock, night_hours * 3600.0) for v in p.visits) for p in places]
    score = night if max(night) > 0 else [p.dwell for p in places]
    home = int(np.argmax(score))  # first maximum: earliest place wins ties
    return PlaceSet(tuple(places), home, radius)


# -- context ---------------------------------------------------------------


def _overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def _away_episodes(t: np.ndarray, at_home: np.ndarray) -> list[float]:
    """Durations of maximal runs of away fixes, bracketed by the nearest home fixes."""
    out = []
    n = len(t)
    i = 0
    while i < n:
        if at_home[i]:
            i += 1
            continue
        j = i
        while j < n and not at_home[j]:
            j += 1
        t0 = t[i - 1] if i > 0 else t[i]
        t1 = t[j] if j < n else t[j - 1]
        out.append(float(t1 - t0))
        i = j
    return out


def context_features(fixes: Sequence[LocationFix], places: PlaceSet, window: WindowSpec, times: Sequence[float] | None = None) -> ContextFeatures:
    if times is None:
        times = [f.time for f in fixes]
    sel = fixes[_window_slice(times, window)]
    home = places.home_place
    home_duration = math.nan
    if home is not None:
        home_duration = sum(_overlap(v.start, v.end, window.start, window.end) for v in home.visits)
    n_places = sum(
        any(_overlap(v.start, v.end, window.start, window.end) > 0 or window.start <= v.start < window.end for v in p.visits)
        for p in places.places
    )
    if not sel:
        return ContextFeatures(n_places=n_places, home_duration=home_duration)

    lat = np.array([f.latitude for f in sel])
    lon = np.array([f.longitude for f in sel])
    t = np.array([f.time for f in sel])
    steps = haversine_many(lat[:-1], lon[:-1], lat[1:], lon[1:])
    dt = np.diff(t)
    speeds = []
    for k, f in enumerate(sel):
        if f.speed is not None:
            speeds.append(f.speed)
        elif k > 0 and dt[k - 1] > 0:
            speeds.append(steps[k - 1] / dt[k - 1])
    speeds = np.array(speeds)

    outside_mean = outside_std = math.nan
    if home is not None:
        at_home = haversine_many(lat, lon, home.latitude, home.longitude) <= places.radius
        episodes = np.array(_away_episodes(t, at_home))
        outside_mean = float(episodes.mean()) if episodes.size else 0.0
        outside_std = float(episodes.std()) if episodes.size else 0.0

    return ContextFeatures(
        lat_variance=float(np.var(lat)),
        speed_mean=float(speeds.mean()) if speeds.size else math.nan,
        speed_variance=float(speeds.var()) if speeds.size else math.nan,
        n_places=n_places,
        home_duration=home_duration,
        outside_mean=outside_mean,
        outside_std=outside_std,
        travel_distance=float(steps.sum()),
    )


# -- export ----------------------------------------------------------------


@dataclass(frozen=True)
class FeatureRow:
    """One participant-window row of named feature values."""

    participant: str
    start: float
    end: float
    values: dict[str, float]


def write_feature_csv(rows: Iterable[FeatureRow], path: str | Path, columns: Sequence[str] | None = None) -> None:
    rows = list(rows)
    if columns is None:
        seen: dict[str, None] = {}
        for r in rows:
            seen.update(dict.fromkeys(r.values))
        columns = list(seen)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant", "start", "end", *columns])
        for r in rows:
            cells = []
            for c in columns:
                v = r.values.get(c, math.nan)
                cells.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(v))
            w.writerow([r.participant, repr(r.start), repr(r.end), *cells])
