"""Classification metrics and the personalized train/test protocol.

Each participant gets a personal model: its test set is the most recent
half of that participant's windows, and training uses the earlier half plus
every other participant's windows. Window selection and imputation are
refit on training rows only for every personal model.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import align, forest
from .align import BinaryLabel, FeatureGrid, LabeledWindow
from .treeshap import ExplanationMatrix, explain_dataset

logger = logging.getLogger(__name__)

CLASS_NAMES = ("Not Feel Lonely", "Feel Lonely")
MACRO_NOTE = (
    "macro = unweighted mean of per-participant metrics; pooled = metrics of "
    "the summed confusion matrix over all test windows. The two differ whenever "
    "test sizes or per-participant error rates vary, so a pooled matrix cannot "
    "reproduce macro-averaged figures."
)


class TooFewWindows(ValueError):
    """A participant has fewer than two windows, so no split exists."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with Lonely as the positive class."""

    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tn + other.tn, self.fp + other.fp, self.fn + other.fn, self.tp + other.tp)

    def flipped(self) -> "ConfusionMatrix":
        """The same predictions with NotLonely taken as positive."""
        return ConfusionMatrix(self.tp, self.fn, self.fp, self.tn)

    def table(self) -> list[list[int]]:
        """Rows = actual (NotLonely, Lonely), columns = predicted."""
        return [[self.tn, self.fp], [self.fn, self.tp]]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["actual \\ predicted", *CLASS_NAMES])
            for name, row in zip(CLASS_NAMES, self.table()):
                w.writerow([name, *row])

    def render(self) -> str:
        width = max(len(n) for n in CLASS_NAMES) + 2
        lines = ["actual \\ predicted".ljust(width) + "".join(n.rjust(width) for n in CLASS_NAMES)]
        for name, row in zip(CLASS_NAMES, self.table()):
            lines.append(name.ljust(width) + "".join(str(v).rjust(width) for v in row))
        return "\n".join(lines)


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("confusion needs at least one prediction")
    if not (np.isin(y_true, (0, 1)).all() and np.isin(y_pred, (0, 1)).all()):
        raise ValueError("labels must be 0/1")
    return ConfusionMatrix(
        int(np.sum((y_true == 0) & (y_pred == 0))),
        int(np.sum((y_true == 0) & (y_pred == 1))),
        int(np.sum((y_true == 1) & (y_pred == 0))),
        int(np.sum((y_true == 1) & (y_pred == 1))),
    )


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    kappa: float
    positive_class: str = "Lonely"
    undefined: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d


def _ratio(num: float, den: float, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics(m: ConfusionMatrix, positive: int = 1) -> MetricReport:
    """Accuracy, precision, recall, F1 and Cohen's kappa.

    Zero-denominator ratios are reported as 0 and named in ``undefined``.
    """
    if m.total == 0:
        raise ValueError("metrics of an empty confusion matrix")
    if positive == 0:
        m = m.flipped()
    elif positive != 1:
        raise ValueError("positive must be 0 or 1")
    undefined: list[str] = []
    n = m.total
    accuracy = (m.tp + m.tn) / n
    precision = _ratio(m.tp, m.tp + m.fp, "precision", undefined)
    recall = _ratio(m.tp, m.tp + m.fn, "recall", undefined)
    if "precision" in undefined or "recall" in undefined or precision + recall == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    p_e = ((m.tn + m.fp) * (m.tn + m.fn) + (m.fn + m.tp) * (m.fp + m.tp)) / (n * n)
    kappa = _ratio(accuracy - p_e, 1.0 - p_e, "kappa", undefined)
    return MetricReport(accuracy, precision, recall, f1, kappa, "Lonely" if positive == 1 else "NotLonely", tuple(undefined))


def macro_average(reports: Sequence[MetricReport]) -> MetricReport:
    """Unweighted mean over reports; undefined entries count with their reported 0."""
    if not reports:
        raise ValueError("macro average of no reports")
    mean = lambda name: float(np.mean([getattr(r, name) for r in reports]))
    undefined = tuple(sorted({u for r in reports for u in r.undefined}))
    return MetricReport(mean("accuracy"), mean("precision"), mean("recall"), mean("f1"), mean("kappa"), reports[0].positive_class, undefined)


# -- split -------------------------------------------------------------------


def _label_key(w: LabeledWindow):
    return (w.label.time, w.label.day)


def personalized_split(windows: Sequence[LabeledWindow], participant: str) -> tuple[list[LabeledWindow], list[LabeledWindow]]:
    """Test = the participant's most recent ceil(n/2) windows; train = the rest plus all others."""
    own = sorted((w for w in windows if w.participant == participant), key=_label_key)
    if len(own) < 2:
        raise TooFewWindows(f"participant {participant!r} has {len(own)} window(s); need >= 2")
    n_test = math.ceil(len(own) / 2)
    test = own[len(own) - n_test :]
    train = own[: len(own) - n_test] + [w for w in windows if w.participant != participant]
    return train, test


def eligible_labels(grid: FeatureGrid, labels: Sequence[BinaryLabel]) -> list[BinaryLabel]:
    """Labels whose 14 window days fall inside the participant's span."""
    out = []
    for lab in labels:
        span = grid.spans.get(lab.participant)
        if span and lab.day - align.FIRST_OFFSET >= span[0] and lab.day - align.LAST_OFFSET <= span[1]:
            out.append(lab)
    return out


# -- protocol ----------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    candidates: tuple[int, ...] = align.CANDIDATE_WINDOWS
    shuffle_labels: bool = False
    shuffle_seed: int = 0
    explain: bool = True
    n_jobs: int = 1


@dataclass
class ParticipantResult:
    participant: str
    n_windows: int
    n_train: int = 0
    n_test: int = 0
    confusion: ConfusionMatrix | None = None
    report: MetricReport | None = None
    error: str | None = None
    test_label_times: list[float] = field(default_factory=list)
    train_own_label_times: list[float] = field(default_factory=list)
    chosen_windows: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ProtocolResult:
    participants: list[ParticipantResult]
    threshold: float
    feature_names: list[str]
    explanation: ExplanationMatrix | None = None

    @property
    def succeeded(self) -> list[ParticipantResult]:
        return [p for p in self.participants if p.ok]

    @property
    def failed(self) -> list[ParticipantResult]:
        return [p for p in self.participants if not p.ok]

    @property
    def pooled(self) -> ConfusionMatrix:
        total = ConfusionMatrix(0, 0, 0, 0)
        for p in self.succeeded:
            total = total + p.confusion
        return total

    @property
    def macro(self) -> MetricReport:
        return macro_average([p.report for p in self.succeeded])

    def to_dict(self) -> dict:
        pooled = self.pooled
        ok = bool(self.succeeded)
        return {
            "n_models": len(self.succeeded),
            "n_failed": len(self.failed),
            "threshold": self.threshold,
            "positive_class": "Lonely",
            "macro": self.macro.to_dict() if ok else None,
            "pooled": metrics(pooled).to_dict() if ok and pooled.total else None,
            "pooled_confusion": {"tn": pooled.tn, "fp": pooled.fp, "fn": pooled.fn, "tp": pooled.tp, "total": pooled.total},
            "note": MACRO_NOTE,
            "participants": [
                {
                    "participant": p.participant,
                    "n_windows": p.n_windows,
                    "n_train": p.n_train,
                    "n_test": p.n_test,
                    "error": p.error,
                    "metrics": p.report.to_dict() if p.report else None,
                    "confusion": asdict(p.confusion) if p.confusion else None,
                    "chosen_windows": p.chosen_windows,
                }
                for p in self.participants
            ],
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "metrics.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        self.pooled.write_csv(out / "confusion.csv")
        with (out / "participants.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["participant", "n_windows", "n_train", "n_test", "tn", "fp", "fn", "tp", "accuracy", "precision", "recall", "f1", "kappa", "undefined", "error"])
            for p in self.participants:
                c = p.confusion
                r = p.report
                w.writerow(
                    [p.participant, p.n_windows, p.n_train, p.n_test]
                    + ([c.tn, c.fp, c.fn, c.tp] if c else [""] * 4)
                    + ([repr(r.accuracy), repr(r.precision), repr(r.recall), repr(r.f1), repr(r.kappa), ";".join(r.undefined)] if r else [""] * 6)
                    + [p.error or ""]
                )

    def render(self) -> str:
        lines = [f"personal models: {len(self.succeeded)} succeeded, {len(self.failed)} failed"]
        for p in self.failed:
            lines.append(f"  {p.participant}: {p.error}")
        if self.succeeded:
            fmt = lambda r: f"accuracy {r.accuracy:.3f}  precision {r.precision:.3f}  recall {r.recall:.3f}  f1 {r.f1:.3f}  kappa {r.kappa:.3f}"
            lines.append("macro  " + fmt(self.macro))
            lines.append("pooled " + fmt(metrics(self.pooled)))
            lines.append(MACRO_NOTE)
            lines.append(f"pooled confusion matrix ({self.pooled.total} test windows):")
            lines.append(self.pooled.render())
        return "\n".join(lines)


def shuffle_within_participants(labels: Sequence[BinaryLabel], seed: int) -> list[BinaryLabel]:
    """Permute (score, value) pairs among each participant's own labels."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    by_p: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_p.setdefault(lab.participant, []).append(i)
    out = list(labels)
    for p in sorted(by_p):
        idx = by_p[p]
        perm = rng.permutation(len(idx))
        for dst, src in zip(idx, perm):
            a, b = labels[dst], labels[idx[src]]
            out[dst] = BinaryLabel(a.participant, a.time, a.day, b.score, b.value, a.threshold)
    return out


def _fit_participant(
    participant: str,
    grid: FeatureGrid,
    labels: list[BinaryLabel],
    eligible: list[BinaryLabel],
    params: forest.ForestParams,
    config: ProtocolConfig,
) -> tuple[ParticipantResult, ExplanationMatrix | None]:
    own = sorted((lab for lab in eligible if lab.participant == participant), key=lambda lab: (lab.time, lab.day))
    res = ParticipantResult(participant, len(own))
    if len(own) < 2:
        raise TooFewWindows(f"participant {participant!r} has {len(own)} window(s); need >= 2")
    n_test = math.ceil(len(own) / 2)
    first_test = own[len(own) - n_test]

    # Everything fitted below sees training data only: other participants in
    # full, and this participant strictly before its first test label.
    train_labels = [lab for lab in labels if lab.participant != participant or lab.time < first_test.time]
    chosen = align.select_windows(grid, train_labels, config.candidates)
    windows = {n: c.window for n, c in chosen.items()}
    table = align.align_and_aggregate(grid, labels, windows)
    scope = {p: np.ones(len(table.days(p)), bool) for p in table.spans}
    scope[participant] = table.days(participant) < first_test.day
    table = align.impute(table, scope)

    all_windows = align.build_windows(table, eligible)
    train, test = personalized_split(all_windows, participant)
    X_train, y_train = align.windows_matrix(train)
    X_test, y_test = align.windows_matrix(test)
    names = align.window_feature_names(grid.names)
    model = forest.fit(X_train, y_train, params, names, n_jobs=config.n_jobs)
    y_pred = forest.predict(model, X_test)
    m = confusion(y_test, y_pred)

    res.n_train = len(train)
    res.n_test = len(test)
    res.confusion = m
    res.report = metrics(m)
    res.test_label_times = [w.label.time for w in test]
    res.train_own_label_times = [w.label.time for w in train if w.participant == participant]
    res.chosen_windows = windows
    expl = None
    if config.explain:
        ids = [f"{participant}#{k}" for k in range(len(test))]
        expl = explain_dataset(model, X_test, ids, n_jobs=config.n_jobs)
    return res, expl


def run_protocol(
    grid: FeatureGrid,
    labels: Sequence[BinaryLabel],
    params: forest.ForestParams | None = None,
    config: ProtocolConfig = ProtocolConfig(),
) -> ProtocolResult:
    """One personal model per participant, in participant order.

    A participant that cannot be split or fitted is reported with its error
    and excluded from the aggregates.
    """
    params = params or forest.ForestParams()
    labels = sorted(labels, key=lambda lab: (lab.participant, lab.time))
    if len({lab.participant for lab in labels}) < 2:
        raise ValueError("the personalized protocol needs at least 2 participants")
    if config.shuffle_labels:
        labels = shuffle_within_participants(labels, config.shuffle_seed)
    eligible = eligible_labels(grid, labels)
    threshold = labels[0].threshold
    results, parts = [], []
    for p in sorted({lab.participant for lab in labels}):
        try:
            res, expl = _fit_participant(p, grid, labels, eligible, params, config)
        except (TooFewWindows, forest.DegenerateLabels, ValueError) as exc:
            logger.warning("participant %s skipped: %s", p, exc)
            n = sum(1 for lab in eligible if lab.participant == p)
            results.append(ParticipantResult(p, n, error=str(exc)))
            continue
        results.append(res)
        if expl is not None:
            parts.append(expl)
    explanation = ExplanationMatrix.concat(parts) if parts else None
    return ProtocolResult(results, threshold, align.window_feature_names(grid.names), explanation)
