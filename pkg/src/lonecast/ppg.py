"""PPG quality gating, short-gap repair, systolic peak detection and IBI
extraction.

Rule-based throughout: a segment is Noisy when it is flat, clipped against
a rail, or has an implausible amplitude. Peaks come from a zero-phase
band-passed signal with an adaptive threshold and a refractory period.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import signal
from scipy.ndimage import maximum_filter1d

from .model import PpgSegment

CLEAN = "Clean"
NOISY = "Noisy"


class TooShort(ValueError):
    """Segment is shorter than the peak detector's minimum duration."""


class InsufficientBeats(ValueError):
    """Too few accepted beats for the requested computation."""


@dataclass(frozen=True)
class QualityRules:
    flat_window: float = 2.0  # s
    flat_variance_floor: float = 1e-8
    flat_window_fraction: float = 0.2  # share of flat windows that makes a segment flat
    flat_run: float = 0.25  # s of identical samples masked as a dropout
    clip_fraction: float = 0.02
    clip_min_run: int = 2  # consecutive rail samples that count as saturation
    amplitude_min: float = 1e-3
    amplitude_max: float = 1e5


@dataclass(frozen=True)
class PeakConfig:
    band: tuple[float, float] = (0.5, 8.0)  # Hz
    filter_order: int = 2
    refractory: float = 0.3  # s
    threshold_window: float = 5.0  # s, span of the moving maximum
    threshold_fraction: float = 0.5
    envelope_floor: float = 0.5  # moving maximum never drops below this share of its median
    min_duration: float = 10.0  # s


@dataclass(frozen=True)
class IbiRules:
    min_interval: float = 300.0  # ms
    max_interval: float = 2000.0  # ms
    ectopic_fraction: float = 0.3  # max relative deviation from the median
    min_beats: int = 3


@dataclass(frozen=True)
class QualityLabel:
    label: str
    reasons: tuple[str, ...] = ()

    @property
    def clean(self) -> bool:
        return self.label == CLEAN


@dataclass(frozen=True, eq=False)
class IbiSeries:
    """Accepted beats and the intervals between them.

    ``intervals[i]`` ends at ``beat_times[i + 1]``. When an interval was
    rejected the series resumes at the next accepted one, so the intervals
    are not always the plain differences of ``beat_times``.
    """

    participant: str
    beat_times: np.ndarray
    intervals: np.ndarray

    def __post_init__(self):
        bt = np.asarray(self.beat_times, dtype=np.float64)
        iv = np.asarray(self.intervals, dtype=np.float64)
        if bt.ndim != 1 or iv.ndim != 1 or len(iv) != max(len(bt) - 1, 0):
            raise ValueError("need exactly one interval per successive beat pair")
        if np.any(np.diff(bt) <= 0):
            raise ValueError("beat_times must be strictly increasing")
        object.__setattr__(self, "beat_times", bt)
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def from_intervals(cls, intervals, participant: str = "", start: float = 0.0) -> "IbiSeries":
        """Contiguous series whose beats are the cumulative interval sums."""
        iv = np.asarray(intervals, dtype=np.float64)
        bt = start + np.concatenate([[0.0], np.cumsum(iv) / 1000.0])
        return cls(participant, bt, iv)

    @property
    def interval_times(self) -> np.ndarray:
        return self.beat_times[1:]

    def __eq__(self, other):
        if not isinstance(other, IbiSeries):
            return NotImplemented
        return (
            self.participant == other.participant
            and np.array_equal(self.beat_times, other.beat_times)
            and np.array_equal(self.intervals, other.intervals)
        )

    def __len__(self):
        return len(self.intervals)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) index ranges where ``mask`` is True."""
    if mask.size == 0:
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _rail_mask(x: np.ndarray, min_run: int) -> np.ndarray:
    out = np.zeros(x.size, dtype=bool)
    finite = np.isfinite(x)
    if not finite.any():
        return out
    lo, hi = np.min(x[finite]), np.max(x[finite])
    for rail in (lo, hi):
        at = finite & (x == rail)
        for a, b in _runs(at):
            if b - a >= min_run:
                out[a:b] = True
    return out


def _flat_run_mask(x: np.ndarray, min_len: int) -> np.ndarray:
    out = np.zeros(x.size, dtype=bool)
    if x.size < 2:
        return out
    same = np.concatenate([[False], x[1:] == x[:-1]])
    for a, b in _runs(same):
        # a run of identical differences starts one sample earlier
        if b - (a - 1) >= min_len:
            out[a - 1 : b] = True
    return out


def noisy_sample_mask(segment: PpgSegment, rules: QualityRules = QualityRules()) -> np.ndarray:
    """Samples that look like saturation or sensor dropout."""
    x = segment.samples
    min_len = max(2, int(round(rules.flat_run * segment.sample_rate)))
    return _rail_mask(x, rules.clip_min_run) | _flat_run_mask(x, min_len) | ~np.isfinite(x)


def assess_quality(segment: PpgSegment, rules: QualityRules = QualityRules()) -> QualityLabel:
    x = segment.samples
    finite = np.isfinite(x)
    xf = x[finite]
    reasons = []
    if xf.size == 0:
        return QualityLabel(NOISY, ("flatline",))

    win = max(2, int(round(rules.flat_window * segment.sample_rate)))
    n_win = xf.size // win
    if n_win == 0:
        flat_share = 1.0 if np.var(xf) < rules.flat_variance_floor else 0.0
    else:
        v = xf[: n_win * win].reshape(n_win, win).var(axis=1)
        flat_share = float(np.mean(v < rules.flat_variance_floor))
    if flat_share > rules.flat_window_fraction or np.var(xf) < rules.flat_variance_floor:
        reasons.append("flatline")

    if np.mean(_rail_mask(xf, rules.clip_min_run)) >= rules.clip_fraction:
        reasons.append("clipping")

    lo, hi = np.percentile(xf, [1, 99])
    amplitude = hi - lo
    if not rules.amplitude_min <= amplitude <= rules.amplitude_max:
        reasons.append("amplitude")

    return QualityLabel(NOISY, tuple(reasons)) if reasons else QualityLabel(CLEAN)


def repair_short_gaps(segment: PpgSegment, mask, max_gap: float = 2.0) -> PpgSegment:
    """Linearly bridge masked gaps of at most ``max_gap`` seconds.

    Longer gaps, and gaps touching either end of the segment, are set to NaN
    so downstream steps skip them.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != segment.samples.shape:
        raise ValueError("mask must match the segment's samples")
    if not mask.any():
        return segment
    x = segment.samples.astype(np.float64, copy=True)
    n = x.size
    limit = max_gap * segment.sample_rate
    for a, b in _runs(mask):
        if a == 0 or b == n or (b - a) > limit:
            x[a:b] = np.nan
            continue
        left, right = x[a - 1], x[b]
        # gap samples lie on the line through the two bracketing samples
        steps = np.arange(1, b - a + 1) / (b - a + 1)
        x[a:b] = left + (right - left) * steps
    return segment.with_samples(x)


def _bandpass(x: np.ndarray, fs: float, cfg: PeakConfig) -> np.ndarray:
    lo, hi = cfg.band
    hi = min(hi, 0.45 * fs)
    sos = signal.butter(cfg.filter_order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    padlen = min(x.size - 1, 3 * (2 * len(sos) + 1) * 2)
    return signal.sosfiltfilt(sos, x - np.mean(x), padlen=padlen)


def _select_with_refractory(cand: np.ndarray, heights: np.ndarray, min_gap: int) -> np.ndarray:
    # tallest first; equal heights resolved in time order
    order = np.lexsort((cand, -heights))
    taken = np.zeros(cand.size, dtype=bool)
    kept: list[int] = []
    for k in order:
        if taken[k]:
            continue
        kept.append(cand[k])
        near = np.abs(cand - cand[k]) < min_gap
        taken |= near
    return np.array(sorted(kept), dtype=np.int64)


def detect_peaks(segment: PpgSegment, config: PeakConfig = PeakConfig()) -> np.ndarray:
    """Systolic peak sample indices, strictly increasing.

    NaN-marked stretches split the segment; each finite run of at least
    ``min_duration`` seconds is filtered and searched independently.
    """
    fs = segment.sample_rate
    if segment.duration < config.min_duration:
        raise TooShort(f"segment lasts {segment.duration:.2f} s, need {config.min_duration} s")
    x = segment.samples
    min_gap = int(np.ceil(config.refractory * fs))
    win = max(3, int(round(config.threshold_window * fs)))
    found = []
    for a, b in _runs(np.isfinite(x)):
        if (b - a) / fs < config.min_duration:
            continue
        xs = x[a:b]
        if np.ptp(xs) == 0:
            continue
        y = _bandpass(xs, fs, config)
        env = maximum_filter1d(y, size=win, mode="nearest")
        env = np.maximum(env, config.envelope_floor * np.median(env))
        thr = config.threshold_fraction * env
        inner = np.arange(1, y.size - 1)
        is_max = (y[inner] > y[inner - 1]) & (y[inner] >= y[inner + 1])
        cand = inner[is_max & (y[inner] > 0) & (y[inner] >= thr[inner])]
        if cand.size == 0:
            continue
        found.append(a + _select_with_refractory(cand, y[cand], min_gap))
    if not found:
        return np.zeros(0, dtype=np.int64)
    peaks = np.concatenate(found)
    # refractory also holds across run boundaries
    keep = np.concatenate([[True], np.diff(peaks) >= min_gap])
    return peaks[keep]


def peaks_to_ibi(segment: PpgSegment, peaks, rules: IbiRules = IbiRules()) -> IbiSeries:
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size and np.any(np.diff(peaks) <= 0):
        raise ValueError("peaks must be strictly increasing")
    if peaks.size < rules.min_beats:
        raise InsufficientBeats(f"{peaks.size} beats, need {rules.min_beats}")
    fs = segment.sample_rate
    intervals = np.diff(peaks) / fs * 1000.0
    keep = (intervals >= rules.min_interval) & (intervals <= rules.max_interval)
    if keep.any():
        med = np.median(intervals[keep])
        keep &= np.abs(intervals - med) <= rules.ectopic_fraction * med
    idx = np.flatnonzero(keep)
    if idx.size + 1 < rules.min_beats:
        raise InsufficientBeats(f"{idx.size + 1} surviving beats, need {rules.min_beats}")
    times = segment.start + peaks / fs
    beat_times = np.concatenate([[times[idx[0]]], times[idx + 1]])
    return IbiSeries(segment.participant, beat_times, intervals[idx])


@dataclass
class SegmentOutcome:
    """What happened to one segment on its way to an IbiSeries."""

    segment_start: float
    quality: QualityLabel
    repaired: bool = False
    ibi: IbiSeries | None = None
    error: str | None = None
    notes: list[str] = field(default_factory=list)


def process_segment(
    segment: PpgSegment,
    quality_rules: QualityRules = QualityRules(),
    peak_config: PeakConfig = PeakConfig(),
    ibi_rules: IbiRules = IbiRules(),
    max_gap: float = 2.0,
) -> SegmentOutcome:
    """Quality gate, repair when needed, then peaks and intervals."""
    quality = assess_quality(segment, quality_rules)
    out = SegmentOutcome(segment.start, quality)
    work = segment
    mask = noisy_sample_mask(segment, quality_rules)
    if mask.any():
        work = repair_short_gaps(segment, mask, max_gap)
        out.repaired = True
        quality = assess_quality(work, quality_rules)
        out.quality = quality
    if not quality.clean:
        out.error = "noisy"
        return out
    try:
        peaks = detect_peaks(work, peak_config)
        out.ibi = peaks_to_ibi(work, peaks, ibi_rules)
    except (TooShort, InsufficientBeats) as exc:
        out.error = type(exc).__name__
    return out


def write_ibi_csv(series: Iterable[IbiSeries], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant", "beat_time", "interval_ms"])
        for s in series:
            for t, iv in zip(s.interval_times, s.intervals):
                w.writerow([s.participant, repr(float(t)), repr(float(iv))])
