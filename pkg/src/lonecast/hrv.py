"""Time-domain, frequency-domain and Poincaré HRV features of an IbiSeries.

All spreads use the population (1/N) convention. Spectral power comes from
a Lomb-Scargle periodogram of the unevenly sampled interval series, scaled
so that the one-sided density integrates to the series variance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from scipy.signal import lombscargle

from .ppg import IbiSeries, InsufficientBeats


class InsufficientData(ValueError):
    """Series too short or too sparse for spectral estimation."""


@dataclass(frozen=True)
class SpectralConfig:
    lf_band: tuple[float, float] = (0.04, 0.15)  # Hz, half-open
    hf_band: tuple[float, float] = (0.15, 0.40)  # Hz, closed
    min_span: float = 120.0  # s
    min_intervals: int = 30
    df: float = 0.001  # Hz, grid step


class TimeDomain(NamedTuple):
    avnn: float
    sdnn: float
    rmssd: float
    mean_hr: float


class FrequencyDomain(NamedTuple):
    lf: float
    hf: float
    lf_hf: float  # NaN when hf == 0


class Poincare(NamedTuple):
    sd1: float
    sd2: float


@dataclass(frozen=True)
class HrvFeatures:
    """One segment's features; NaN marks a field whose preconditions failed."""

    participant: str
    segment_start: float
    avnn: float = math.nan
    sdnn: float = math.nan
    rmssd: float = math.nan
    mean_hr: float = math.nan
    lf: float = math.nan
    hf: float = math.nan
    lf_hf: float = math.nan
    sd1: float = math.nan
    sd2: float = math.nan

    @property
    def missing(self) -> tuple[str, ...]:
        return tuple(n for n in FEATURE_NAMES if math.isnan(getattr(self, n)))

    def values(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in FEATURE_NAMES}


FEATURE_NAMES = tuple(f.name for f in fields(HrvFeatures) if f.name not in ("participant", "segment_start"))


def _intervals(ibi) -> np.ndarray:
    if isinstance(ibi, IbiSeries):
        return ibi.intervals
    return np.asarray(ibi, dtype=np.float64)


def time_domain(ibi) -> TimeDomain:
    x = _intervals(ibi)
    if x.size < 2:
        raise InsufficientBeats(f"time-domain features need >= 2 intervals, got {x.size}")
    avnn = float(np.mean(x))
    sdnn = float(np.sqrt(np.mean((x - avnn) ** 2)))
    d = np.diff(x)
    rmssd = float(np.sqrt(np.mean(d * d)))
    return TimeDomain(avnn, sdnn, rmssd, 60000.0 / avnn)


def nonlinear(ibi) -> Poincare:
    x = _intervals(ibi)
    if x.size < 3:
        raise InsufficientBeats(f"Poincaré features need >= 3 intervals, got {x.size}")
    a, b = x[:-1], x[1:]
    minor = (a - b) / math.sqrt(2.0)
    major = (a + b) / math.sqrt(2.0)
    return Poincare(float(np.std(minor)), float(np.std(major)))


def lomb_scargle(t, x, freqs) -> np.ndarray:
    """One-sided Lomb-Scargle power spectral density (units of x² per Hz).

    ``x`` is centred first. Scaling the classical periodogram by
    ``2 * span / N`` gives a density whose integral over (0, Nyquist) is
    close to the variance for evenly sampled data.
    """
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    power = lombscargle(t, x - x.mean(), 2.0 * np.pi * np.asarray(freqs, dtype=np.float64))
    return 2.0 * power * (t[-1] - t[0]) / t.size


def frequency_domain(ibi, config: SpectralConfig = SpectralConfig()) -> FrequencyDomain:
    if isinstance(ibi, IbiSeries):
        t, x = ibi.interval_times, ibi.intervals
    else:
        x = np.asarray(ibi, dtype=np.float64)
        t = np.cumsum(x) / 1000.0
    if x.size < config.min_intervals:
        raise InsufficientData(f"need >= {config.min_intervals} intervals, got {x.size}")
    span = float(t[-1] - t[0]) if x.size else 0.0
    if span < config.min_span:
        raise InsufficientData(f"need a span of >= {config.min_span} s, got {span:.1f} s")
    # Grid k * df; band membership is decided on the integer k so edges
    # are not subject to float rounding.
    edge = lambda f: int(round(f / config.df))
    k = np.arange(max(edge(min(config.lf_band[0], config.hf_band[0])), 1), edge(max(config.lf_band[1], config.hf_band[1])) + 1)
    # rebase so epoch-scale timestamps do not eat the phase precision
    psd = lomb_scargle(t - t[0], x, k * config.df)
    lf = float(np.sum(psd[(k >= edge(config.lf_band[0])) & (k < edge(config.lf_band[1]))]) * config.df)
    hf = float(np.sum(psd[(k >= edge(config.hf_band[0])) & (k <= edge(config.hf_band[1]))]) * config.df)
    return FrequencyDomain(lf, hf, lf / hf if hf > 0 else math.nan)


def hrv_features(ibi: IbiSeries, config: SpectralConfig = SpectralConfig()) -> HrvFeatures:
    """Every computable feature of one series; the rest stay NaN."""
    start = float(ibi.beat_times[0]) if ibi.beat_times.size else math.nan
    values: dict[str, float] = {}
    for fn in (time_domain, nonlinear):
        try:
            values.update(fn(ibi)._asdict())
        except InsufficientBeats:
            pass
    try:
        values.update(frequency_domain(ibi, config)._asdict())
    except InsufficientData:
        pass
    return HrvFeatures(ibi.participant, start, **values)


def write_hrv_csv(rows: Iterable[HrvFeatures], path: str | Path) -> None:
    columns = ["participant", "segment_start", *FEATURE_NAMES]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            d = asdict(r)
            w.writerow([d["participant"], repr(d["segment_start"])] + ["" if math.isnan(d[c]) else repr(d[c]) for c in FEATURE_NAMES])
