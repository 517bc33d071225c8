"""Path-dependent TreeSHAP for the forest, plus dataset-level explanations.

Attributions explain the probability output. Conditional expectations
follow each tree's own node covers, so no background data is needed.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .forest import ForestModel, Tree, predict_proba

DEFAULT_TOP_K = 20
BEESWARM_COLUMNS = ("sample_id", "feature", "feature_value", "phi")


class CorruptModel(ValueError):
    """A tree whose covers cannot support path-dependent attribution."""


def validate_tree(tree: Tree, rtol: float = 1e-9) -> None:
    if tree.n_nodes == 0:
        raise CorruptModel("tree has no nodes")
    if not np.all(tree.cover > 0):
        bad = int(np.flatnonzero(~(tree.cover > 0))[0])
        raise CorruptModel(f"node {bad} has cover {tree.cover[bad]!r}")
    internal = np.flatnonzero(tree.feature >= 0)
    kids = tree.cover[tree.left[internal]] + tree.cover[tree.right[internal]]
    off = np.abs(kids - tree.cover[internal]) > rtol * tree.cover[internal]
    if np.any(off):
        bad = int(internal[np.flatnonzero(off)[0]])
        raise CorruptModel(f"node {bad}: cover does not equal the sum of its children")


def _single(tree: Tree):
    offsets = np.array([0, tree.n_nodes], np.int64)
    return offsets, _kernels.tree_depths(offsets, tree.left, tree.right)


def tree_shap(tree: Tree, x) -> np.ndarray:
    """Exact path-dependent Shapley values of one tree at ``x``."""
    validate_tree(tree)
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    offsets, depths = _single(tree)
    phi = _kernels.shap_forest(x, offsets, depths, tree.feature, tree.threshold, tree.left, tree.right, tree.cover, tree.value)
    return phi[0]


@dataclass(frozen=True)
class Attribution:
    phi: np.ndarray
    base_value: float
    prediction: float
    sample: int | str | None = None

    @property
    def residual(self) -> float:
        """Local-accuracy gap, ``base + sum(phi) - prediction``."""
        return float(self.base_value + self.phi.sum() - self.prediction)


def _validate_model(model: ForestModel) -> None:
    for i, t in enumerate(model.trees):
        try:
            validate_tree(t)
        except CorruptModel as exc:
            raise CorruptModel(f"tree {i}: {exc}") from None


def _forest_phi(model: ForestModel, X: np.ndarray, n_jobs: int = 1) -> np.ndarray:
    offsets, feature, threshold, left, right, cover, value = model.packed()
    depths = _kernels.tree_depths(offsets, left, right)
    run = lambda rows: _kernels.shap_forest(rows, offsets, depths, feature, threshold, left, right, cover, value)
    if n_jobs <= 1 or len(X) < 2 * n_jobs:
        return run(X)
    chunks = np.array_split(np.arange(len(X)), n_jobs)
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(lambda idx: run(np.ascontiguousarray(X[idx])), chunks))
    return np.vstack(parts)


def forest_shap(model: ForestModel, x, sample: int | str | None = None) -> Attribution:
    _validate_model(model)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ValueError(f"expected {model.n_features} features, got shape {x.shape}")
    phi = _forest_phi(model, np.ascontiguousarray(x[None, :]))[0]
    return Attribution(phi, model.base_value, predict_proba(model, x), sample)


@dataclass
class ExplanationMatrix:
    feature_names: list[str]
    phi: np.ndarray  # (n, d)
    values: np.ndarray  # (n, d) feature values
    base_values: np.ndarray  # (n,) one per row, as rows may come from different models
    sample_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.phi.shape[0] == 0:
            raise ValueError("explanation matrix needs at least one sample")
        if not self.sample_ids:
            self.sample_ids = [str(i) for i in range(self.phi.shape[0])]

    @property
    def mean_abs(self) -> np.ndarray:
        return np.mean(np.abs(self.phi), axis=0)

    @property
    def ranking(self) -> list[str]:
        """Features by mean |phi| descending, ties by name."""
        m = self.mean_abs
        order = sorted(range(len(self.feature_names)), key=lambda j: (-m[j], self.feature_names[j]))
        return [self.feature_names[j] for j in order]

    def top(self, k: int = DEFAULT_TOP_K) -> list[str]:
        return self.ranking[: max(k, 0)]

    @classmethod
    def concat(cls, parts: Sequence["ExplanationMatrix"]) -> "ExplanationMatrix":
        names = parts[0].feature_names
        if any(p.feature_names != names for p in parts):
            raise ValueError("explanation matrices disagree on feature names")
        return cls(
            list(names),
            np.vstack([p.phi for p in parts]),
            np.vstack([p.values for p in parts]),
            np.concatenate([p.base_values for p in parts]),
            [s for p in parts for s in p.sample_ids],
        )


def explain_dataset(model: ForestModel, X, sample_ids: Sequence[str] | None = None, n_jobs: int = 1) -> ExplanationMatrix:
    """Attributions for every row; identical rows are computed once."""
    _validate_model(model)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("explain_dataset needs a nonempty 2-d test set")
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    Xu, inverse = np.unique(X, axis=0, return_inverse=True)
    phi = _forest_phi(model, np.ascontiguousarray(Xu), n_jobs)[inverse.reshape(-1)]
    return ExplanationMatrix(
        list(model.feature_names),
        phi,
        X.copy(),
        np.full(X.shape[0], model.base_value),
        list(sample_ids) if sample_ids is not None else [],
    )


def summary(matrix: ExplanationMatrix, k: int = DEFAULT_TOP_K) -> dict:
    m = matrix.mean_abs
    index = {n: j for j, n in enumerate(matrix.feature_names)}
    ranking = matrix.ranking
    return {
        "n_samples": int(matrix.phi.shape[0]),
        "top_k": int(max(k, 0)),
        "top": [{"feature": n, "mean_abs_phi": float(m[index[n]])} for n in ranking[: max(k, 0)]],
        "ranking": ranking,
        "mean_abs_phi": {n: float(m[index[n]]) for n in ranking},
    }


def export_beeswarm(matrix: ExplanationMatrix, path: str | Path, summary_path: str | Path | None = None, k: int = DEFAULT_TOP_K) -> tuple[Path, Path]:
    """Long-format CSV of the top-k features plus a JSON ranking summary.

    The summary defaults to ``shap_summary.json`` beside the CSV.
    """
    path = Path(path)
    summary_path = Path(summary_path) if summary_path is not None else path.with_name("shap_summary.json")
    top = matrix.top(k)
    index = {n: j for j, n in enumerate(matrix.feature_names)}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BEESWARM_COLUMNS)
        for name in top:
            j = index[name]
            for i, sid in enumerate(matrix.sample_ids):
                w.writerow([sid, name, repr(float(matrix.values[i, j])), repr(float(matrix.phi[i, j]))])
    summary_path.write_text(json.dumps(summary(matrix, k), indent=2) + "\n", encoding="utf-8")
    return path, summary_path
