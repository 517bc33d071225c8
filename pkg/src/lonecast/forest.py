"""Random-forest binary classifier built from CART trees.

Trees are grown with Gini impurity on bootstrap samples, evaluating a random
subset of features at every node. Leaves hold the class-1 fraction of the
training rows reaching them, and every node keeps its cover (bootstrap
weighted row count), which is what path-dependent TreeSHAP walks over.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import _kernels

FORMAT_VERSION = 1


class DegenerateLabels(ValueError):
    """Training labels contain a single class."""


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 400
    max_depth: int = 15
    min_samples_split: int = 2
    mtry: int | None = None  # None -> ceil(sqrt(d))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolve_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(n_features))
        if not 1 <= mtry <= n_features:
            raise ValueError(f"mtry={mtry} outside [1, {n_features}]")
        return mtry


@dataclass(frozen=True)
class TreeNode:
    """One node as seen from outside the flat arrays."""

    cover: float
    feature: int | None = None
    threshold: float | None = None
    left: int | None = None
    right: int | None = None
    probability: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    cover: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def node(self, i: int) -> TreeNode:
        if self.feature[i] < 0:
            return TreeNode(cover=float(self.cover[i]), probability=float(self.value[i]))
        return TreeNode(
            cover=float(self.cover[i]),
            feature=int(self.feature[i]),
            threshold=float(self.threshold[i]),
            left=int(self.left[i]),
            right=int(self.right[i]),
        )

    def expected_value(self) -> float:
        leaves = self.feature < 0
        return float(np.sum(self.cover[leaves] * self.value[leaves]) / self.cover[0])

    def depth(self) -> int:
        offsets = np.array([0, self.n_nodes], dtype=np.int64)
        return int(_kernels.tree_depths(offsets, self.left, self.right)[0])

    @classmethod
    def leaf(cls, probability: float, cover: float = 1.0) -> "Tree":
        return cls.from_nodes([{"cover": cover, "value": probability}])

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict]) -> "Tree":
        """Build from preorder dicts: leaves ``{cover, value}``, internal nodes
        ``{feature, threshold, left, right, cover}`` (``value`` optional)."""
        n = len(nodes)
        feature = np.full(n, -1, np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, np.int64)
        right = np.full(n, -1, np.int64)
        cover = np.zeros(n)
        value = np.zeros(n)
        for i, nd in enumerate(nodes):
            cover[i] = nd["cover"]
            value[i] = nd.get("value", 0.0)
            if "feature" in nd:
                feature[i] = nd["feature"]
                threshold[i] = nd["threshold"]
                left[i] = nd["left"]
                right[i] = nd["right"]
        return cls(feature, threshold, left, right, cover, value)


@dataclass
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    feature_names: list[str]
    base_value: float | None = None  # derived from the trees when not given

    def __post_init__(self):
        self._packed = None
        if self.base_value is None:
            self.base_value = float(np.mean([t.expected_value() for t in self.trees]))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def packed(self):
        """Concatenated node arrays plus per-tree offsets, built once."""
        if self._packed is None:
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.zeros(len(sizes) + 1, np.int64)
            offsets[1:] = np.cumsum(sizes)
            cat = lambda name: np.ascontiguousarray(
                np.concatenate([getattr(t, name) for t in self.trees])
            )
            self._packed = (
                offsets,
                cat("feature"),
                cat("threshold"),
                cat("left"),
                cat("right"),
                cat("cover"),
                cat("value"),
            )
        return self._packed

    def to_dict(self) -> dict:
        trees = []
        for t in self.trees:
            trees.append(
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "cover": t.cover.tolist(),
                    "value": t.value.tolist(),
                }
            )
        return {
            "format": "lonecast-forest",
            "version": FORMAT_VERSION,
            "params": asdict(self.params),
            "feature_names": list(self.feature_names),
            "base_value": self.base_value,
            "trees": trees,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "ForestModel":
        if data.get("format") != "lonecast-forest":
            raise ValueError("not a serialized forest")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {data.get('version')}")
        trees = [
            Tree(
                np.asarray(t["feature"], np.int64),
                np.asarray(t["threshold"], np.float64),
                np.asarray(t["left"], np.int64),
                np.asarray(t["right"], np.int64),
                np.asarray(t["cover"], np.float64),
                np.asarray(t["value"], np.float64),
            )
            for t in data["trees"]
        ]
        return cls(trees, ForestParams(**data["params"]), list(data["feature_names"]), data["base_value"])

    @classmethod
    def loads(cls, text: str) -> "ForestModel":
        return cls.from_dict(json.loads(text))


def gini(class_counts: tuple[float, float]) -> float:
    n0, n1 = class_counts
    if n0 < 0 or n1 < 0:
        raise ValueError("class counts must be non-negative")
    total = n0 + n1
    if total == 0:
        raise ValueError("gini of an empty node is undefined")
    p0, p1 = n0 / total, n1 / total
    return 1.0 - (p0 * p0 + p1 * p1)


def _tree_seeds(seed: int, index: int) -> tuple[np.random.Generator, int]:
    ss = np.random.SeedSequence([seed, index])
    boot_ss, split_ss = ss.spawn(2)
    split_seed = int(split_ss.generate_state(1, dtype=np.uint64)[0])
    return np.random.default_rng(boot_ss), split_seed


def bootstrap_counts(seed: int, index: int, n: int) -> np.ndarray:
    """In-bag multiplicity of each training row for tree ``index``."""
    rng, _ = _tree_seeds(seed, index)
    return np.bincount(rng.integers(0, n, size=n), minlength=n)


def _fit_tree(XuT, inverse, y, params: ForestParams, mtry: int, index: int) -> Tree:
    # XuT holds the distinct rows of X, feature-major; inverse maps each original row to its
    # distinct row. Identical rows always share a leaf, so growing on merged
    # weights gives the same tree as growing on the raw bootstrap.
    n = len(inverse)
    _, split_seed = _tree_seeds(params.seed, index)
    counts = bootstrap_counts(params.seed, index, n).astype(np.float64)
    weight = np.bincount(inverse, weights=counts, minlength=XuT.shape[1])
    pos_weight = np.bincount(inverse, weights=counts * y, minlength=XuT.shape[1])
    samples = np.flatnonzero(weight).astype(np.int64)
    arrays = _kernels.grow_tree(
        XuT,
        weight,
        pos_weight,
        samples,
        mtry,
        params.max_depth,
        params.min_samples_split,
        np.uint64(split_seed),
    )
    return Tree(*arrays)


def _as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values; impute before fitting")
    return X


def fit(
    X,
    y,
    params: ForestParams | None = None,
    feature_names: Sequence[str] | None = None,
    n_jobs: int = 1,
) -> ForestModel:
    params = params or ForestParams()
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if y.shape != (n,):
        raise ValueError("y must have one label per row of X")
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise DegenerateLabels("training labels contain a single class")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(d)]
    if len(feature_names) != d:
        raise ValueError("feature_names length does not match X")
    mtry = params.resolve_mtry(d)
    Xu, inverse = np.unique(X, axis=0, return_inverse=True)
    XuT = np.ascontiguousarray(Xu.T)
    inverse = inverse.reshape(-1)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(lambda i: _fit_tree(XuT, inverse, y, params, mtry, i), range(params.n_trees)))
    else:
        trees = [_fit_tree(XuT, inverse, y, params, mtry, i) for i in range(params.n_trees)]

    return ForestModel(trees, params, list(feature_names))


def predict_proba(model: ForestModel, X) -> np.ndarray | float:
    """Mean over trees of the leaf class-1 probability; scalar for a 1-d input."""
    arr = np.asarray(X, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.ascontiguousarray(np.atleast_2d(arr))
    if arr.ndim != 2 or arr.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {np.shape(X)}")
    offsets, feature, threshold, left, right, _, value = model.packed()
    out = _kernels.predict_forest(arr, offsets, feature, threshold, left, right, value)
    return float(out[0]) if single else out


def predict(model: ForestModel, X) -> np.ndarray | int:
    """1 (Lonely) iff probability >= 0.5."""
    proba = predict_proba(model, X)
    if np.ndim(proba) == 0:
        return int(proba >= 0.5)
    return (proba >= 0.5).astype(np.int64)


def oob_tree_counts(model: ForestModel, n: int) -> np.ndarray:
    """Number of trees for which each of the ``n`` training rows was out of bag."""
    out = np.zeros(n, np.int64)
    for i in range(len(model.trees)):
        out += bootstrap_counts(model.params.seed, i, n) == 0
    return out
