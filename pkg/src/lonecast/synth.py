"""Deterministic synthetic cohort with a planted, lagged loneliness dependence.

Each participant has three latent daily drivers (sleep restlessness,
activity balance, social contact), each a standardized quasi-periodic
AR(2) process (a slowly drifting multi-week rhythm) or, optionally, AR(1). A
report on day ``t`` has latent logit

    effect * (w_r * restless[t - lag] - w_a * activity[t - lag] - w_s * social[t - lag]) + noise

where the noise is AR(1) over the participant's report sequence. Reports
are scaled to 0..100 through the logistic function. Ring scores measure
the first two drivers; phone calls, messages and social notifications
measure the third; GPS trips follow activity; PPG heart rate drifts weakly
with the day's latent level.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    CohortStreams,
    DailyScore,
    LocationFix,
    PhoneEvent,
    PpgSegment,
    SelfReport,
    StudyClock,
)

DRIVERS = ("sleep_restless", "activity_balance", "social_contact")
# sign of each driver's effect on loneliness, and its relative weight
DRIVER_SIGNS = {"sleep_restless": 1.0, "activity_balance": -1.0, "social_contact": -1.0}
DRIVER_WEIGHTS = {"sleep_restless": 1.0, "activity_balance": 0.7, "social_contact": 0.5}
OBSERVED_BY = {
    "sleep_restless": ["sleep_restless"],
    "activity_balance": ["activity_balance", "travel_distance", "n_places"],
    "social_contact": ["n_calls", "call_total", "n_messages", "n_notifications_social"],
}
HOME_BASE = (33.6405, -117.8443)


@dataclass(frozen=True)
class SynthConfig:
    n_participants: int = 29
    weeks: int = 8
    reports_per_day: int = 3
    ppg_sample_rate: float = 20.0
    missing_rate: float = 0.05
    effect_strength: float = 1.0
    seed: int = 0
    lag_days: int = 10
    driver_persistence: float = 0.98  # AR root modulus of the daily drivers
    driver_period: float = 20.0  # days; 0 gives a plain AR(1) driver
    noise_ar: float = 0.5  # AR(1) coefficient of report noise
    noise_sd: float = 1.0  # stationary sd of report noise on the logit scale
    ppg_segments_per_day: int = 2
    ppg_segment_minutes: float = 3.0
    ppg_noisy_rate: float = 0.1
    gps_interval: float = 600.0  # s between fixes
    start_date: str = "2024-01-08"

    def __post_init__(self):
        if self.n_participants < 1:
            raise ValueError("n_participants must be >= 1")
        if self.weeks < 1:
            raise ValueError("weeks must be >= 1")
        if self.reports_per_day < 0:
            raise ValueError("reports_per_day must be >= 0")
        if not self.ppg_sample_rate > 0:
            raise ValueError("ppg_sample_rate must be > 0")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if not self.effect_strength >= 0:
            raise ValueError("effect_strength must be >= 0")
        if not 0.0 <= self.driver_persistence < 1.0 or not 0.0 <= self.noise_ar < 1.0:
            raise ValueError("AR coefficients must lie in [0, 1)")
        if self.driver_period != 0 and self.driver_period <= 2:
            raise ValueError("driver_period must be 0 or > 2 days")
        if self.lag_days < 1:
            raise ValueError("lag_days must be >= 1")
        if self.ppg_segments_per_day < 0 or self.ppg_segment_minutes <= 0:
            raise ValueError("PPG density must be non-negative with positive segment length")
        if self.gps_interval <= 0:
            raise ValueError("gps_interval must be > 0")
        dt.date.fromisoformat(self.start_date)

    @property
    def n_days(self) -> int:
        return 7 * self.weeks


@dataclass
class PlantedTruth:
    coefficients: dict[str, float]
    lag_days: int
    drivers: list[str]
    observed_by: dict[str, list[str]]
    latent: dict[str, list[float]] = field(default_factory=dict)  # daily noise-free logit

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedTruth":
        return cls(dict(d["coefficients"]), int(d["lag_days"]), list(d["drivers"]), {k: list(v) for k, v in d["observed_by"].items()}, {k: list(v) for k, v in d.get("latent", {}).items()})

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def describe_truth(truth: PlantedTruth) -> tuple[str, dict]:
    """Readable summary and JSON-ready listing of the planted drivers."""
    listing = {
        "lag_days": truth.lag_days,
        "drivers": [
            {"name": n, "coefficient": truth.coefficients[n], "sign": "+" if truth.coefficients[n] > 0 else "-", "observed_by": truth.observed_by.get(n, [])}
            for n in truth.drivers
        ],
    }
    if not truth.drivers:
        return "no planted drivers: loneliness is independent of every feature", listing
    lines = [f"loneliness logit depends on drivers lagged {truth.lag_days} days:"]
    for d in listing["drivers"]:
        lines.append(f"  {d['name']}: {d['coefficient']:+.3f} (observed via {', '.join(d['observed_by'])})")
    return "\n".join(lines), listing


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    e = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = e[0]
    scale = math.sqrt(1.0 - phi * phi)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + scale * e[i]
    return out


def _driver(rng: np.random.Generator, n: int, r: float, period: float, burn: int = 200) -> np.ndarray:
    """Unit-variance daily driver: AR(1) when ``period`` is 0, else a
    quasi-periodic AR(2) with complex roots of modulus ``r``."""
    if period == 0:
        return _ar1(rng, n, r)
    theta = 2 * math.pi / period
    a1, a2 = 2 * r * math.cos(theta), -r * r
    e = rng.standard_normal(n + burn)
    x = np.zeros(n + burn)
    for i in range(2, n + burn):
        x[i] = a1 * x[i - 1] + a2 * x[i - 2] + e[i]
    # stationary variance of AR(2)
    var = (1 - a2) / ((1 + a2) * ((1 - a2) ** 2 - a1 * a1))
    return x[burn:] / math.sqrt(var)


def _offset(lat: float, lon: float, north_m: float, east_m: float) -> tuple[float, float]:
    dlat = north_m / 111_195.0
    dlon = east_m / (111_195.0 * math.cos(math.radians(lat)))
    return lat + dlat, lon + dlon


# -- per-stream generators ---------------------------------------------------


def _ring(pid, rng, days, day0, restless, activity, latent, keep):
    out = []
    for k, day in enumerate(days):
        if not keep[k]:
            continue
        date = StudyClock.date_of_day(day0 + day)
        vals = {
            "sleep_restless": 30.0 + 8.0 * restless[k] + rng.normal(0, 1.0),
            "activity_balance": 70.0 + 10.0 * activity[k] + rng.normal(0, 1.0),
            "sleep_score": 75.0 - 2.0 * restless[k] + rng.normal(0, 5.0),
            "readiness_score": 72.0 + rng.normal(0, 6.0),
        }
        for name, v in vals.items():
            out.append(DailyScore(pid, date, name, round(float(np.clip(v, 0.0, 100.0)), 2)))
    return out


def _pulse_train(rng, duration, fs, mean_ibi, hrv_scale):
    """Gaussian-pulse PPG with respiratory and Mayer-wave IBI modulation."""
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    beats = []
    tb = rng.uniform(0, mean_ibi / 1000.0)
    ph_r, ph_m = rng.uniform(0, 2 * np.pi, 2)
    while tb < duration:
        beats.append(tb)
        ibi = mean_ibi + hrv_scale * (25 * math.sin(2 * math.pi * 0.25 * tb + ph_r) + 20 * math.sin(2 * math.pi * 0.1 * tb + ph_m)) + rng.normal(0, 8.0)
        tb += max(ibi, 350.0) / 1000.0
    beats = np.array(beats)
    x = 0.1 * np.sin(2 * np.pi * 0.25 * t + ph_r) + rng.normal(0, 0.02, n)
    half = int(math.ceil(4 * 0.05 * fs))
    for b in beats:
        c = int(round(b * fs))
        lo, hi = max(0, c - half), min(n, c + half + 1)
        x[lo:hi] += np.exp(-0.5 * ((t[lo:hi] - b) / 0.05) ** 2)
    return x


def _corrupt(rng, x):
    kind = rng.integers(0, 2)
    if kind == 0:
        return np.full_like(x, round(float(x.mean()), 3))  # sensor off: flat
    top = np.quantile(x, 0.85)
    return np.minimum(x, top)  # saturated: ~15% of samples on the rail


def _ppg(pid, rng, cfg, days, day0, latent_z, keep_seg):
    out = []
    fs = cfg.ppg_sample_rate
    dur = cfg.ppg_segment_minutes * 60.0
    every = 24.0 / max(cfg.ppg_segments_per_day, 1)
    for k, day in enumerate(days):
        for s in range(cfg.ppg_segments_per_day):
            if not keep_seg[k, s]:
                continue
            start = (day0 + day) * 86400.0 + (s * every + rng.uniform(0, max(every - dur / 3600.0, 0.0))) * 3600.0
            mean_ibi = 800.0 - 15.0 * latent_z[k] + rng.normal(0, 20.0)
            hrv = float(np.clip(1.0 - 0.1 * latent_z[k], 0.5, 1.5))
            x = _pulse_train(rng, dur, fs, mean_ibi, hrv)
            if rng.random() < cfg.ppg_noisy_rate:
                x = _corrupt(rng, x)
            out.append(PpgSegment(pid, round(float(start), 3), fs, np.round(x, 3)))
    return out


def _phone(pid, rng, days, day0, social):
    out = []
    for k, day in enumerate(days):
        base = (day0 + day) * 86400.0
        wake = lambda m: np.sort(base + rng.uniform(7 * 3600, 24 * 3600, m))
        s = social[k]
        for t in wake(rng.poisson(35)):
            out.append(PhoneEvent(pid, round(float(t), 1), "screen_on"))
            out.append(PhoneEvent(pid, round(float(t + rng.uniform(5, 300)), 1), "screen_off"))
            if rng.random() < 0.8:
                out.append(PhoneEvent(pid, round(float(t + 1.0), 1), "screen_unlock"))
                out.append(PhoneEvent(pid, round(float(t + rng.uniform(305, 400)), 1), "screen_lock"))
        for t in np.sort(base + rng.uniform(18 * 3600, 24 * 3600, rng.poisson(1.2))):
            out.append(PhoneEvent(pid, round(float(t), 1), "battery_plugin"))
        for t in wake(rng.poisson(2.0 * math.exp(0.6 * s))):
            out.append(PhoneEvent(pid, round(float(t), 1), "call", duration=round(float(rng.exponential(180.0)), 1)))
        for t in wake(rng.poisson(20.0 * math.exp(0.4 * s))):
            out.append(PhoneEvent(pid, round(float(t), 1), "message", category="sms" if rng.random() < 0.3 else "chat"))
        for t in wake(rng.poisson(15.0 * math.exp(0.4 * s))):
            out.append(PhoneEvent(pid, round(float(t), 1), "notification", category="social"))
        for t in wake(rng.poisson(25.0)):
            out.append(PhoneEvent(pid, round(float(t), 1), "notification", category="system"))
    # rounding can land two events of one kind on the same instant; ingestion
    # would drop the second, so drop it here and keep files and cohort equal
    seen, kept = set(), []
    for e in out:
        if (e.time, e.kind) not in seen:
            seen.add((e.time, e.kind))
            kept.append(e)
    return kept


def _gps(pid, rng, cfg, days, day0, activity, keep_day):
    home = _offset(*HOME_BASE, rng.uniform(-3000, 3000), rng.uniform(-3000, 3000))
    places = [_offset(*home, rng.uniform(-6000, 6000), rng.uniform(-6000, 6000)) for _ in range(rng.integers(3, 7))]
    out = []
    for k, day in enumerate(days):
        if not keep_day[k]:
            continue
        base = (day0 + day) * 86400.0
        # piecewise path: (t0, t1, from, to)
        legs = []
        t = base + rng.uniform(7.0, 9.5) * 3600
        legs.append((base, t, home, home))
        here = home
        n_trips = int(min(5, 1 + rng.poisson(1.2 * math.exp(0.5 * activity[k]))))
        for _ in range(n_trips):
            dest = places[rng.integers(len(places))]
            if dest == here:
                continue
            dist = math.hypot((dest[0] - here[0]) * 111_195.0, (dest[1] - here[1]) * 111_195.0 * math.cos(math.radians(here[0])))
            travel = dist / rng.uniform(5.0, 12.0)
            legs.append((t, t + travel, here, dest))
            t += travel
            dwell = rng.uniform(30, 150) * 60
            legs.append((t, t + dwell, dest, dest))
            t += dwell
            here = dest
            if t > base + 21 * 3600:
                break
        if here != home:
            dist = math.hypot((home[0] - here[0]) * 111_195.0, (home[1] - here[1]) * 111_195.0 * math.cos(math.radians(here[0])))
            travel = dist / rng.uniform(5.0, 12.0)
            legs.append((t, t + travel, here, home))
            t += travel
        legs.append((t, base + 86400.0, home, home))
        grid = base + np.arange(0.0, 86400.0, cfg.gps_interval) + rng.uniform(0, 30)
        j = 0
        for tg in grid:
            while j < len(legs) - 1 and tg >= legs[j][1]:
                j += 1
            t0, t1, a, b = legs[j]
            f = 0.0 if t1 <= t0 else min(max((tg - t0) / (t1 - t0), 0.0), 1.0)
            lat = a[0] + f * (b[0] - a[0])
            lon = a[1] + f * (b[1] - a[1])
            lat, lon = _offset(lat, lon, rng.normal(0, 10.0), rng.normal(0, 10.0))
            moving = a != b
            speed = None
            if rng.random() > 0.1:
                if moving:
                    dist = math.hypot((b[0] - a[0]) * 111_195.0, (b[1] - a[1]) * 111_195.0 * math.cos(math.radians(a[0])))
                    speed = round(dist / (t1 - t0), 2)
                else:
                    speed = round(abs(rng.normal(0, 0.3)), 2)
            out.append(LocationFix(pid, round(float(tg), 1), round(lat, 6), round(lon, 6), speed))
    return out


def _reports(pid, rng, cfg, days, day0, logit_day):
    n = len(days) * cfg.reports_per_day
    noise = cfg.noise_sd * _ar1(rng, max(n, 1), cfg.noise_ar)
    out = []
    i = 0
    for k, day in enumerate(days):
        times = np.sort((day0 + day) * 86400.0 + rng.uniform(9 * 3600, 21 * 3600, cfg.reports_per_day))
        for t in times:
            eta = logit_day[k] + noise[i]
            i += 1
            if rng.random() < cfg.missing_rate:
                continue
            out.append(SelfReport(pid, round(float(t), 1), round(100.0 / (1.0 + math.exp(-eta)), 2)))
    return out


def generate(config: SynthConfig = SynthConfig()) -> tuple[CohortStreams, PlantedTruth]:
    cfg = config
    day0 = StudyClock.day_of_date(dt.date.fromisoformat(cfg.start_date))
    coef = {d: cfg.effect_strength * DRIVER_SIGNS[d] * DRIVER_WEIGHTS[d] for d in DRIVERS}
    drivers = [d for d in DRIVERS if coef[d] != 0.0]
    n_days = cfg.n_days
    days = np.arange(n_days)
    burn = cfg.lag_days
    streams = {k: [] for k in ("ppg", "daily", "phone", "loc", "reports")}
    latent_out = {}
    width = len(str(cfg.n_participants - 1))
    for i in range(cfg.n_participants):
        pid = f"P{i:0{width}d}"
        ss = np.random.SeedSequence([cfg.seed, i])
        r_drv, r_ring, r_ppg, r_phone, r_gps, r_rep, r_miss = (np.random.default_rng(s) for s in ss.spawn(7))
        z = {d: _driver(r_drv, n_days + burn, cfg.driver_persistence, cfg.driver_period) for d in DRIVERS}
        # driver value on day k - lag sits at index k in the burn-in-shifted series
        logit = np.zeros(n_days)
        for d in DRIVERS:
            logit += coef[d] * z[d][:n_days]
        obs = {d: z[d][burn:] for d in DRIVERS}
        scale = float(np.std(logit)) or 1.0
        latent_z = logit / scale if np.any(logit) else np.zeros(n_days)
        latent_out[pid] = [round(float(v), 6) for v in logit]

        keep_day = r_miss.random(n_days) >= cfg.missing_rate
        keep_gps = r_miss.random(n_days) >= cfg.missing_rate
        keep_seg = r_miss.random((n_days, max(cfg.ppg_segments_per_day, 1))) >= cfg.missing_rate

        streams["daily"] += _ring(pid, r_ring, days, day0, obs["sleep_restless"], obs["activity_balance"], latent_z, keep_day)
        streams["ppg"] += _ppg(pid, r_ppg, cfg, days, day0, latent_z, keep_seg)
        streams["phone"] += _phone(pid, r_phone, days, day0, obs["social_contact"])
        streams["loc"] += _gps(pid, r_gps, cfg, days, day0, obs["activity_balance"], keep_gps)
        streams["reports"] += _reports(pid, r_rep, cfg, days, day0, logit)

    cohort = CohortStreams.build(streams["ppg"], streams["daily"], streams["phone"], streams["loc"], streams["reports"])
    truth = PlantedTruth(coef, cfg.lag_days, drivers, {d: OBSERVED_BY[d] for d in drivers}, latent_out)
    return cohort, truth
