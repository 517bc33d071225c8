"""Feature extraction across all streams into one long-format FeatureFrame.

Sources: ``ring`` (daily scores), ``ppg`` (per-segment HRV), ``phone``
(daily behavior and social counts) and ``gps`` (daily context).
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import behavior, hrv, ppg
from .align import BinaryLabel, FeatureFrame, binarize
from .behavior import FeatureRow, WindowSpec
from .model import CohortStreams, StudyClock

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractConfig:
    quality: ppg.QualityRules = ppg.QualityRules()
    peaks: ppg.PeakConfig = ppg.PeakConfig()
    ibi: ppg.IbiRules = ppg.IbiRules()
    spectral: hrv.SpectralConfig = hrv.SpectralConfig()
    max_gap: float = 2.0
    place_radius: float = 150.0
    min_dwell: float = 600.0
    timezone: str = "UTC"


@dataclass
class Extraction:
    frame: FeatureFrame
    hrv_rows: list[hrv.HrvFeatures] = field(default_factory=list)
    ibi: list[ppg.IbiSeries] = field(default_factory=list)
    behavior_rows: list[FeatureRow] = field(default_factory=list)
    context_rows: list[FeatureRow] = field(default_factory=list)
    segment_status: Counter = field(default_factory=Counter)

    def counts(self) -> dict[str, int]:
        return {
            "segments": sum(self.segment_status.values()),
            "segments_clean": self.segment_status["ok"] + sum(v for k, v in self.segment_status.items() if k not in ("ok", "noisy")),
            "hrv_rows": len(self.hrv_rows),
            "behavior_rows": len(self.behavior_rows),
            "context_rows": len(self.context_rows),
            "observations": len(self.frame),
            "features": len(self.frame.names),
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        hrv.write_hrv_csv(self.hrv_rows, out / "hrv.csv")
        ppg.write_ibi_csv(self.ibi, out / "ibi.csv")
        behavior.write_feature_csv(self.behavior_rows, out / "behavior.csv")
        behavior.write_feature_csv(self.context_rows, out / "context.csv", behavior.CONTEXT_NAMES)
        self.frame.write_csv(out / "features.csv")


def _day_range(times, clock: StudyClock) -> range:
    days = clock.day_of(times)
    return range(int(days.min()), int(days.max()) + 1)


def extract_features(streams: CohortStreams, config: ExtractConfig = ExtractConfig()) -> Extraction:
    clock = StudyClock(config.timezone)
    ext = Extraction(FeatureFrame([], {}))
    frame = ext.frame

    # Fixed column order, so every run yields the same feature list.
    for name in sorted({s.name for s in streams.daily_scores}):
        frame.add_feature(name, "ring")
    for name in hrv.FEATURE_NAMES:
        frame.add_feature(name, "ppg")
    msg_cats = sorted({e.category for e in streams.phone_events if e.kind == "message" and e.category})
    note_cats = sorted({e.category for e in streams.phone_events if e.kind == "notification" and e.category})
    if streams.phone_events:
        for name in behavior.BehaviorFeatures().flat(msg_cats, note_cats):
            frame.add_feature(name, "phone")
    if streams.location_fixes:
        for name in behavior.CONTEXT_NAMES:
            frame.add_feature(name, "gps")

    for s in streams.daily_scores:
        frame.add(s.participant, clock.day_start(clock.day_of_date(s.date)), s.name, s.value, "ring")

    for seg in streams.ppg:
        outcome = ppg.process_segment(seg, config.quality, config.peaks, config.ibi, config.max_gap)
        ext.segment_status[outcome.error or "ok"] += 1
        if outcome.ibi is None:
            continue
        ext.ibi.append(outcome.ibi)
        row = hrv.hrv_features(outcome.ibi, config.spectral)
        ext.hrv_rows.append(row)
        for name, v in row.values().items():
            frame.add(seg.participant, seg.start, name, v, "ppg")

    for pid in streams.participants:
        events = [e for e in streams.phone_events if e.participant == pid]
        if events:
            times = [e.time for e in events]
            for day in _day_range(times, clock):
                w = WindowSpec(clock.day_start(day), clock.day_start(day + 1))
                vals = behavior.behavior_features(events, w, times).flat(msg_cats, note_cats)
                ext.behavior_rows.append(FeatureRow(pid, w.start, w.end, vals))
                for name, v in vals.items():
                    frame.add(pid, w.start, name, v, "phone")

        fixes = [f for f in streams.location_fixes if f.participant == pid]
        if fixes:
            times = [f.time for f in fixes]
            places = behavior.cluster_places(fixes, config.place_radius, config.min_dwell, clock)
            for day in _day_range(times, clock):
                w = WindowSpec(clock.day_start(day), clock.day_start(day + 1))
                vals = behavior.context_features(fixes, places, w, times).flat()
                if all(v != v for k, v in vals.items() if k not in ("n_places", "travel_distance")):
                    continue  # no fixes that day
                ext.context_rows.append(FeatureRow(pid, w.start, w.end, vals))
                for name, v in vals.items():
                    frame.add(pid, w.start, name, v, "gps")
    return ext


def cohort_labels(streams: CohortStreams, timezone: str = "UTC") -> tuple[list[BinaryLabel], float]:
    return binarize(list(streams.self_reports), StudyClock(timezone))
