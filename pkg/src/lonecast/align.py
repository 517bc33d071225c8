"""Label binarization, per-feature window selection, daily alignment,
imputation, and assembly of 14-day forecasting windows.

Everything here works on integer study days (see ``StudyClock``). A label
on day ``t`` sees feature window ``[t - w, t - 1]`` when choosing and
aligning windows, and its classifier input covers days ``t - 21 .. t - 8``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import SelfReport, StudyClock

NOT_LONELY = 0
LONELY = 1
CANDIDATE_WINDOWS = (1, 2, 3, 5, 7, 14)
WINDOW_DAYS = 14
FIRST_OFFSET = 21  # day1 = t - 21
LAST_OFFSET = 8  # day14 = t - 8
MIN_PAIRS = 3
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BinaryLabel:
    participant: str
    time: float
    day: int
    score: float
    value: int
    threshold: float


def binarize(reports: Sequence[SelfReport], clock: StudyClock | None = None, threshold: float | None = None) -> tuple[list[BinaryLabel], float]:
    """Lonely iff the score is strictly above the cohort median.

    ``threshold`` overrides the median, e.g. to reuse one fitted elsewhere.
    """
    if not reports:
        raise ValueError("cannot binarize an empty report set")
    clock = clock or StudyClock()
    scores = np.array([r.loneliness for r in reports], dtype=np.float64)
    thr = float(np.median(scores)) if threshold is None else float(threshold)
    days = clock.day_of([r.time for r in reports])
    labels = [
        BinaryLabel(r.participant, r.time, int(d), r.loneliness, LONELY if r.loneliness > thr else NOT_LONELY, thr)
        for r, d in zip(reports, days)
    ]
    return labels, thr


# -- feature observations --------------------------------------------------


@dataclass
class FeatureFrame:
    """Long-format observations: one (participant, time, feature, value) per entry."""

    names: list[str]
    sources: dict[str, str]
    participant: list[str] = field(default_factory=list)
    time: list[float] = field(default_factory=list)
    feature: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def __post_init__(self):
        self._index = {n: i for i, n in enumerate(self.names)}

    def add_feature(self, name: str, source: str) -> int:
        if name not in self._index:
            self._index[name] = len(self.names)
            self.names.append(name)
            self.sources[name] = source
        return self._index[name]

    def add(self, participant: str, time: float, name: str, value: float, source: str = "") -> None:
        if value is None or not math.isfinite(value):
            return
        f = self.add_feature(name, source)
        self.participant.append(participant)
        self.time.append(float(time))
        self.feature.append(f)
        self.value.append(float(value))

    def __len__(self):
        return len(self.value)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["participant", "time", "feature", "source", "value"])
            for p, t, f, v in zip(self.participant, self.time, self.feature, self.value):
                name = self.names[f]
                w.writerow([p, repr(t), name, self.sources.get(name, ""), repr(v)])

    @classmethod
    def read_csv(cls, path: str | Path) -> "FeatureFrame":
        frame = cls([], {})
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                frame.add(row["participant"], float(row["time"]), row["feature"], float(row["value"]), row["source"])
        return frame


@dataclass
class FeatureGrid:
    """Per-participant daily sums and counts of every feature over its day span.

    ``sums[p]`` and ``counts[p]`` have shape ``(n_days, F)``; row ``k`` is
    day ``spans[p][0] + k``.
    """

    names: list[str]
    sources: dict[str, str]
    spans: dict[str, tuple[int, int]]
    sums: dict[str, np.ndarray]
    counts: dict[str, np.ndarray]

    @classmethod
    def build(cls, frame: FeatureFrame, labels: Sequence[BinaryLabel] = (), clock: StudyClock | None = None) -> "FeatureGrid":
        clock = clock or StudyClock()
        F = len(frame.names)
        pids = np.array(frame.participant, dtype=object)
        days = clock.day_of(frame.time) if len(frame) else np.zeros(0, np.int64)
        lo: dict[str, int] = {}
        hi: dict[str, int] = {}
        for p, d in zip(frame.participant, days.tolist()):
            lo[p] = min(lo.get(p, d), d)
            hi[p] = max(hi.get(p, d), d)
        for lab in labels:
            lo[lab.participant] = min(lo.get(lab.participant, lab.day), lab.day)
            hi[lab.participant] = max(hi.get(lab.participant, lab.day), lab.day)
        spans = {p: (lo[p], hi[p]) for p in sorted(lo)}
        feat = np.asarray(frame.feature, dtype=np.int64)
        vals = np.asarray(frame.value, dtype=np.float64)
        sums, counts = {}, {}
        for p, (a, b) in spans.items():
            sel = pids == p
            n = b - a + 1
            idx = (days[sel] - a) * F + feat[sel]
            sums[p] = np.bincount(idx, weights=vals[sel], minlength=n * F).reshape(n, F)
            counts[p] = np.bincount(idx, minlength=n * F).reshape(n, F).astype(np.float64)
        return cls(list(frame.names), dict(frame.sources), spans, sums, counts)

    def window_average(self, participant: str, days: np.ndarray, window: int, feature: int | None = None) -> np.ndarray:
        """Mean of observations over days ``[d - window, d - 1]`` for each anchor ``d``.

        Returns shape ``(len(days), F)`` (or ``(len(days),)`` for one
        feature); NaN where the window is empty.
        """
        a, _ = self.spans[participant]
        s = self.sums[participant] if feature is None else self.sums[participant][:, feature : feature + 1]
        c = self.counts[participant] if feature is None else self.counts[participant][:, feature : feature + 1]
        ps = np.vstack([np.zeros((1, s.shape[1])), np.cumsum(s, axis=0)])
        pc = np.vstack([np.zeros((1, c.shape[1])), np.cumsum(c, axis=0)])
        k = np.clip(np.asarray(days, dtype=np.int64) - a, 0, s.shape[0])
        k0 = np.clip(k - window, 0, s.shape[0])
        tot = ps[k] - ps[k0]
        cnt = pc[k] - pc[k0]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(cnt > 0, tot / np.where(cnt > 0, cnt, 1.0), np.nan)
        return out[:, 0] if feature is not None else out


# -- window selection ------------------------------------------------------


@dataclass(frozen=True)
class WindowChoice:
    window: int
    r: float  # NaN when uninformative
    informative: bool
    n_pairs: int


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < MIN_PAIRS:
        return math.nan
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.mean(xc * xc)), math.sqrt(np.mean(yc * yc))
    if sx <= 1e-12 * max(1.0, abs(x.mean())) or sy <= 1e-12 * max(1.0, abs(y.mean())):
        return math.nan
    return float(np.mean(xc * yc) / (sx * sy))


def _choose(pairs: Mapping[int, tuple[np.ndarray, np.ndarray]], candidates: Sequence[int]) -> WindowChoice:
    best: WindowChoice | None = None
    for w in sorted(candidates):
        x, y = pairs[w]
        r = _pearson(x, y)
        if math.isnan(r):
            continue
        if best is None or abs(r) > abs(best.r) + TIE_TOLERANCE:
            best = WindowChoice(w, r, True, int(x.size))
    return best or WindowChoice(1, math.nan, False, 0)


def select_windows(
    grid: FeatureGrid,
    labels: Sequence[BinaryLabel],
    candidates: Sequence[int] = CANDIDATE_WINDOWS,
) -> dict[str, WindowChoice]:
    """Best window per feature, by |Pearson r| against raw scores on ``labels``.

    Only the given labels are consulted, so pass training labels only.
    Ties within 1e-12 go to the smaller window; a feature with fewer than 3
    usable pairs (or zero variance) at every candidate falls back to 1 day.
    """
    by_p: dict[str, list[BinaryLabel]] = {}
    for lab in labels:
        if lab.participant in grid.spans:
            by_p.setdefault(lab.participant, []).append(lab)
    F = len(grid.names)
    avgs = {w: [] for w in candidates}
    scores = []
    for p, labs in by_p.items():
        days = np.array([lab.day for lab in labs])
        scores.append(np.array([lab.score for lab in labs]))
        for w in candidates:
            avgs[w].append(grid.window_average(p, days, w))
    out = {}
    y_all = np.concatenate(scores) if scores else np.zeros(0)
    for f, name in enumerate(grid.names):
        pairs = {}
        for w in candidates:
            x = np.concatenate([a[:, f] for a in avgs[w]]) if avgs[w] else np.zeros(0)
            ok = ~np.isnan(x)
            pairs[w] = (x[ok], y_all[ok])
        out[name] = _choose(pairs, candidates)
    return out


def select_window(series, labels: Sequence[BinaryLabel], candidates: Sequence[int] = CANDIDATE_WINDOWS, clock: StudyClock | None = None) -> WindowChoice:
    """Window choice for one feature.

    ``series`` is either a sequence of ``(timestamp, value)`` pairs, matched
    against every label regardless of participant, or a mapping from
    participant to such a sequence.
    """
    frame = FeatureFrame([], {})
    if isinstance(series, Mapping):
        for p, obs in series.items():
            for t, v in obs:
                frame.add(p, t, "x", v)
        labs = list(labels)
    else:
        for t, v in series:
            frame.add("_", t, "x", v)
        labs = [replace(lab, participant="_") for lab in labels]
    if not len(frame):
        return WindowChoice(1, math.nan, False, 0)
    grid = FeatureGrid.build(frame, labs, clock)
    return select_windows(grid, labs, candidates)["x"]


# -- aligned table ---------------------------------------------------------


@dataclass
class AlignedFeatureTable:
    """Rows are (participant, day) over each participant's span; NaN marks missing."""

    names: list[str]
    sources: dict[str, str]
    windows: dict[str, int]
    spans: dict[str, tuple[int, int]]
    cells: dict[str, np.ndarray]  # participant -> (n_days, F)
    degenerate: tuple[str, ...] = ()

    def days(self, participant: str) -> np.ndarray:
        a, b = self.spans[participant]
        return np.arange(a, b + 1)

    def row(self, participant: str, day: int) -> np.ndarray:
        return self.cells[participant][day - self.spans[participant][0]]

    def write_csv(self, path: str | Path, clock: StudyClock | None = None) -> None:
        clock = clock or StudyClock()
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["participant", "day", "date", *self.names])
            for p in sorted(self.cells):
                for day, vals in zip(self.days(p), self.cells[p]):
                    w.writerow([p, int(day), clock.date_of_day(day).isoformat(), *("" if math.isnan(v) else repr(float(v)) for v in vals)])


def align_and_aggregate(grid: FeatureGrid, labels: Sequence[BinaryLabel], windows: Mapping[str, int]) -> AlignedFeatureTable:
    """Window-average each feature at every label anchor day.

    Labels only contribute their days. Same-day anchors share the same
    calendar-snapped window, so the cell is their (common) average.
    """
    anchor_days: dict[str, set[int]] = {p: set() for p in grid.spans}
    for lab in labels:
        span = grid.spans.get(lab.participant)
        # anchors outside the grid span have no row to fill
        if span and span[0] <= lab.day <= span[1]:
            anchor_days[lab.participant].add(lab.day)
    ws = np.array([windows.get(n, 1) for n in grid.names], dtype=np.int64)
    cells = {}
    for p, (a, b) in grid.spans.items():
        table = np.full((b - a + 1, len(grid.names)), np.nan)
        days = np.array(sorted(anchor_days[p]), dtype=np.int64)
        if days.size:
            for w in np.unique(ws):
                cols = np.flatnonzero(ws == w)
                avg = grid.window_average(p, days, int(w))
                table[np.ix_(days - a, cols)] = avg[:, cols]
        cells[p] = table
    return AlignedFeatureTable(list(grid.names), dict(grid.sources), {n: int(x) for n, x in zip(grid.names, ws)}, dict(grid.spans), cells)


@dataclass(frozen=True)
class ImputationFit:
    participant_means: dict[str, np.ndarray]
    global_means: np.ndarray  # NaN where the feature has no value in scope
    degenerate: tuple[str, ...]


def fit_imputation(table: AlignedFeatureTable, fit_scope: Mapping[str, np.ndarray]) -> ImputationFit:
    """Means over the rows in ``fit_scope`` (participant -> boolean day mask)."""
    if not any(np.any(m) for m in fit_scope.values()):
        raise ValueError("imputation fit scope is empty")
    F = len(table.names)
    tot = np.zeros(F)
    cnt = np.zeros(F)
    pmeans = {}
    for p, mask in fit_scope.items():
        rows = table.cells[p][np.asarray(mask, bool)]
        valid = ~np.isnan(rows)
        s = np.where(valid, rows, 0.0).sum(axis=0)
        c = valid.sum(axis=0)
        tot += s
        cnt += c
        with np.errstate(invalid="ignore", divide="ignore"):
            pmeans[p] = np.where(c > 0, s / np.maximum(c, 1), np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        gmeans = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    degenerate = tuple(n for n, c in zip(table.names, cnt) if c == 0)
    return ImputationFit(pmeans, gmeans, degenerate)


def impute(table: AlignedFeatureTable, fit_scope: Mapping[str, np.ndarray] | ImputationFit) -> AlignedFeatureTable:
    """Fill missing cells: participant mean, else global mean, else 0 (degenerate)."""
    fit = fit_scope if isinstance(fit_scope, ImputationFit) else fit_imputation(table, fit_scope)
    fallback = np.where(np.isnan(fit.global_means), 0.0, fit.global_means)
    cells = {}
    for p, rows in table.cells.items():
        fill = fit.participant_means.get(p)
        fill = fallback if fill is None else np.where(np.isnan(fill), fallback, fill)
        cells[p] = np.where(np.isnan(rows), fill, rows)
    return replace(table, cells=cells, degenerate=fit.degenerate)


# -- labeled windows -------------------------------------------------------


def window_feature_names(names: Sequence[str]) -> list[str]:
    return [f"day{k}_{n}" for k in range(1, WINDOW_DAYS + 1) for n in names]


@dataclass(frozen=True)
class LabeledWindow:
    participant: str
    label: BinaryLabel
    days: np.ndarray  # the 14 feature days, oldest first
    features: np.ndarray  # (14, F)

    @property
    def flat(self) -> np.ndarray:
        return self.features.reshape(-1)


def build_windows(table: AlignedFeatureTable, labels: Sequence[BinaryLabel]) -> list[LabeledWindow]:
    """One window per label whose days ``t-21 .. t-8`` all fall inside its participant's span."""
    out = []
    for lab in labels:
        span = table.spans.get(lab.participant)
        if span is None:
            continue
        first, last = lab.day - FIRST_OFFSET, lab.day - LAST_OFFSET
        if first < span[0] or last > span[1]:
            continue
        rows = table.cells[lab.participant][first - span[0] : last - span[0] + 1]
        out.append(LabeledWindow(lab.participant, lab, np.arange(first, last + 1), rows.copy()))
    return out


def windows_matrix(windows: Sequence[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        return np.zeros((0, 0)), np.zeros(0, np.int64)
    X = np.vstack([w.flat for w in windows])
    y = np.array([w.label.value for w in windows], dtype=np.int64)
    return X, y


def write_windows_csv(windows: Iterable[LabeledWindow], names: Sequence[str], path: str | Path) -> None:
    cols = window_feature_names(names)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant", "label_time", "label_day", "score", "threshold", *cols, "label"])
        for win in windows:
            lab = win.label
            w.writerow([win.participant, repr(lab.time), lab.day, repr(lab.score), repr(lab.threshold), *(repr(float(v)) for v in win.flat), lab.value])


def read_windows_csv(path: str | Path) -> tuple[list[LabeledWindow], list[str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = header[5:-1]
        if len(cols) % WINDOW_DAYS:
            raise ValueError(f"{path}: {len(cols)} feature columns is not a multiple of {WINDOW_DAYS}")
        F = len(cols) // WINDOW_DAYS
        names = [c.split("_", 1)[1] for c in cols[:F]]
        out = []
        for row in reader:
            day = int(row[2])
            lab = BinaryLabel(row[0], float(row[1]), day, float(row[3]), int(row[-1]), float(row[4]))
            feats = np.array([float(v) for v in row[5:-1]]).reshape(WINDOW_DAYS, F)
            out.append(LabeledWindow(row[0], lab, np.arange(day - FIRST_OFFSET, day - LAST_OFFSET + 1), feats))
    return out, names
