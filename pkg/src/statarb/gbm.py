"""
Stochastic gradient boosted classification trees.

Bernoulli deviance, shrinkage, per-tree row subsampling without replacement
and least-squares regression trees on the negative gradient, with one-step
Newton leaf values. Numeric splits scan sorted values; categorical splits
order levels by mean residual and scan that ordering.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyPanel, InvalidConfig, MissingVariable, SingleClassTrainingSet

FORMAT_VERSION = 1
LEAF_CLAMP = 8.0


@dataclass(frozen=True)
class GbmConfig:
    n_trees: int = 500
    shrinkage: float = 0.02
    interaction_depth: int = 4
    bag_fraction: float = 0.5
    min_node: int = 10
    seed: int = 0
    depth_mode: str = "depth"  # "depth": max splits along a path; "splits": splits per tree
    col_fraction: float = 1.0

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 1:
            raise InvalidConfig(f"n_trees must be a positive integer, got {self.n_trees}")
        if not 0 < self.shrinkage <= 1:
            raise InvalidConfig(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        if int(self.interaction_depth) != self.interaction_depth or self.interaction_depth < 1:
            raise InvalidConfig(f"interaction_depth must be a positive integer, got {self.interaction_depth}")
        if not 0 < self.bag_fraction <= 1:
            raise InvalidConfig(f"bag_fraction must be in (0, 1], got {self.bag_fraction}")
        if not 0 < self.col_fraction <= 1:
            raise InvalidConfig(f"col_fraction must be in (0, 1], got {self.col_fraction}")
        if int(self.min_node) != self.min_node or self.min_node < 1:
            raise InvalidConfig(f"min_node must be a positive integer, got {self.min_node}")
        if self.depth_mode not in ("depth", "splits"):
            raise InvalidConfig(f"depth_mode must be 'depth' or 'splits', got {self.depth_mode!r}")

    def replace(self, **changes) -> "GbmConfig":
        return GbmConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class Variable:
    name: str
    levels: tuple[str, ...] | None = None  # None for numeric

    @property
    def is_categorical(self) -> bool:
        return self.levels is not None


@dataclass
class DecisionTree:
    """Flat array tree. ``feature == -1`` marks a leaf.

    For categorical splits ``cat_left[node]`` is a bool per level plus a last
    slot for levels never seen in training; ``threshold`` is unused.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_train: np.ndarray
    improvement: np.ndarray
    cat_left: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] >= 0:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
            else:
                best = max(best, d)
        return best

    def _routing_table(self):
        width = max(t.size for t in self.cat_left.values())
        table = np.zeros((self.n_nodes, width), dtype=bool)
        is_cat = np.zeros(self.n_nodes, dtype=bool)
        for node, levels in self.cat_left.items():
            L = levels.size - 1
            table[node, :L] = levels[:L]
            table[node, L:] = levels[L]
            is_cat[node] = True
        return table, is_cat

    def apply(self, Z: np.ndarray) -> np.ndarray:
        """Leaf index for every row of the encoded matrix ``Z``."""
        table, is_cat = self._routing_table() if self.cat_left else (None, None)
        node = np.zeros(Z.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            x = Z[active, self.feature[nd]]
            go_left = x <= self.threshold[nd]
            if table is not None:
                cat = is_cat[nd]
                if cat.any():
                    codes = x[cat]
                    codes = np.where((codes >= 0) & (codes < table.shape[1] - 1), codes, table.shape[1] - 1)
                    go_left[cat] = table[nd[cat], codes.astype(np.int64)]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return self.value[self.apply(Z)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_train": self.n_train.tolist(),
            "improvement": self.improvement.tolist(),
            "cat_left": {str(k): v.astype(int).tolist() for k, v in sorted(self.cat_left.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DecisionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            n_train=np.asarray(d["n_train"], dtype=np.int64),
            improvement=np.asarray(d["improvement"], dtype=float),
            cat_left={int(k): np.asarray(v, dtype=bool) for k, v in d["cat_left"].items()},
        )


# --------------------------------------------------------------------------- encoding


def infer_variables(X: pd.DataFrame, columns: Sequence[str] | None = None) -> list[Variable]:
    out = []
    for name in columns if columns is not None else X.columns:
        col = X[name]
        if isinstance(col.dtype, pd.CategoricalDtype):
            out.append(Variable(name, tuple(str(c) for c in col.cat.categories)))
        elif col.dtype == object or pd.api.types.is_string_dtype(col.dtype) or pd.api.types.is_bool_dtype(col.dtype):
            out.append(Variable(name, tuple(sorted(str(v) for v in col.dropna().unique()))))
        else:
            out.append(Variable(name))
    return out


def encode(X: pd.DataFrame | Mapping, variables: Sequence[Variable]) -> np.ndarray:
    """Float matrix with categorical columns as level codes (-1 for unseen levels)."""
    if not isinstance(X, pd.DataFrame):
        X = pd.DataFrame([dict(X)])
    missing = [v.name for v in variables if v.name not in X.columns]
    if missing:
        raise MissingVariable(missing)
    Z = np.empty((len(X), len(variables)), dtype=float)
    for j, var in enumerate(variables):
        col = X[var.name]
        if var.is_categorical:
            if isinstance(col.dtype, pd.CategoricalDtype):
                col = col.astype(object)
            Z[:, j] = pd.Categorical(col.map(lambda v: None if pd.isna(v) else str(v)), categories=list(var.levels)).codes
        else:
            Z[:, j] = pd.to_numeric(col, errors="raise").to_numpy(float)
    return Z


# --------------------------------------------------------------------------- tree growing


@dataclass
class _Split:
    gain: float
    feature: int
    threshold: float
    left_levels: np.ndarray | None  # level codes sent left, categorical only
    left_mask: np.ndarray  # over the node's rows, in row order


def _scan(zs: np.ndarray, rs: np.ndarray, total: float, min_node: int) -> np.ndarray:
    """Split gains for every cut of pre-sorted columns; shape (k, n - 1), -inf where invalid."""
    n = zs.shape[1]
    left_sum = np.cumsum(rs, axis=1)[:, :-1]
    n_left = np.arange(1, n, dtype=float)
    gain = left_sum**2 / n_left + (total - left_sum) ** 2 / (n - n_left) - total**2 / n
    valid = zs[:, :-1] < zs[:, 1:]
    valid[:, : min_node - 1] = False
    valid[:, n - min_node :] = False
    return np.where(valid, gain, -np.inf)


def _best_split(
    Z: np.ndarray,
    resid: np.ndarray,
    rows: np.ndarray,
    sorted_rows: np.ndarray,
    num_features: np.ndarray,
    cat_features: np.ndarray,
    n_levels: np.ndarray,
    min_node: int,
) -> _Split | None:
    """Best least-squares split of a node.

    ``rows`` holds the node's row ids in increasing order and ``sorted_rows``
    (one line per numeric feature) the same ids ordered by feature value,
    ties by row id. Ties in gain go to the lowest feature id, then the
    lowest cut.
    """
    n = rows.size
    if n < 2 * min_node:
        return None
    rn = resid[rows]
    total = rn.sum()
    candidates = []  # (gain, feature, cut position, kind, extra)
    if num_features.size:
        zs = Z[sorted_rows, num_features[:, None]]
        gain = _scan(zs, resid[sorted_rows], total, min_node)
        pos = np.argmax(gain, axis=1)
        for k, j in enumerate(num_features):
            candidates.append((gain[k, pos[k]], int(j), int(pos[k]), "num", k))
    if cat_features.size:
        codes_all = Z[np.ix_(rows, cat_features)].astype(np.int64)
        for k, j in enumerate(cat_features):
            L = int(n_levels[j])
            codes = codes_all[:, k]
            cnt = np.bincount(codes, minlength=L)
            sums = np.bincount(codes, weights=rn, minlength=L)
            present = np.flatnonzero(cnt)
            order = present[np.argsort(sums[present] / cnt[present], kind="stable")]
            rank = np.zeros(L)
            rank[order] = np.arange(order.size)
            ranked = rank[codes]
            perm = np.argsort(ranked, kind="stable")
            gain = _scan(ranked[perm][None, :], rn[perm][None, :], total, min_node)[0]
            p = int(np.argmax(gain))
            candidates.append((gain[p], int(j), p, "cat", (order, ranked, perm)))
    if not candidates:
        return None
    candidates.sort(key=lambda c: c[1])
    best = max(candidates, key=lambda c: c[0])  # first maximum = lowest feature id
    best_gain = float(best[0])
    if not np.isfinite(best_gain) or best_gain <= 1e-12 * float(np.dot(rn, rn)):
        return None
    _, j, i, kind, extra = best
    if kind == "num":
        line = sorted_rows[extra]
        lo, hi = Z[line[i], j], Z[line[i + 1], j]
        threshold = (lo + hi) / 2.0
        if not lo <= threshold < hi:
            threshold = lo
        left_mask = Z[rows, j] <= threshold
        return _Split(best_gain, j, threshold, None, left_mask)
    order, ranked, perm = extra
    cut = ranked[perm[i]]
    left_levels = np.sort(order[: int(cut) + 1])
    return _Split(best_gain, j, math.nan, left_levels, ranked <= cut)


def grow_tree(
    Z: np.ndarray,
    residuals: np.ndarray,
    config: GbmConfig,
    hessian: np.ndarray | None = None,
    rows: np.ndarray | None = None,
    n_levels: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> DecisionTree:
    """Grow one least-squares tree on ``residuals`` best-first.

    Args:
        Z: encoded predictor matrix (see :func:`encode`).
        residuals: per-row target of the regression tree.
        config: depth / min-node / column-subsampling settings.
        hessian: per-row second derivative; when given, leaf values are the
            Newton step ``sum(residual) / sum(hessian)`` clamped to +-8,
            otherwise leaf means.
        rows: row indices to grow on (default all).
        n_levels: number of levels per column, 0 for numeric.
        rng: stream for column subsampling.
    """
    Z = np.asarray(Z, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    rows = np.arange(Z.shape[0]) if rows is None else np.sort(np.asarray(rows))
    n_levels = np.zeros(Z.shape[1], dtype=np.int64) if n_levels is None else np.asarray(n_levels)
    features = np.arange(Z.shape[1])
    if config.col_fraction < 1.0:
        k = max(1, int(round(config.col_fraction * Z.shape[1])))
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        features = np.sort(rng.choice(Z.shape[1], size=k, replace=False))
    num_features = features[n_levels[features] == 0]
    cat_features = features[n_levels[features] > 0]
    if num_features.size:
        # rows are increasing, so a stable sort breaks value ties by row id
        root_sorted = rows[np.argsort(Z[rows][:, num_features].T, axis=1, kind="stable")]
    else:
        root_sorted = np.empty((0, rows.size), dtype=np.int64)

    feature, threshold, left, right, n_train, improvement, depth_of, node_rows, node_sorted = ([] for _ in range(9))
    cat_left: dict[int, np.ndarray] = {}

    def new_node(idx: np.ndarray, srt: np.ndarray, depth: int) -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        n_train.append(int(idx.size))
        improvement.append(0.0)
        depth_of.append(depth)
        node_rows.append(idx)
        node_sorted.append(srt)
        return len(feature) - 1

    max_depth = config.interaction_depth if config.depth_mode == "depth" else None
    max_splits = config.interaction_depth if config.depth_mode == "splits" else None
    heap: list = []

    def consider(node: int) -> None:
        if max_depth is not None and depth_of[node] >= max_depth:
            return
        split = _best_split(
            Z, residuals, node_rows[node], node_sorted[node], num_features, cat_features, n_levels, config.min_node
        )
        if split is not None:
            heapq.heappush(heap, (-split.gain, node, split))

    consider(new_node(rows, root_sorted, 0))
    n_done = 0
    while heap and (max_splits is None or n_done < max_splits):
        _, node, split = heapq.heappop(heap)
        idx, srt = node_rows[node], node_sorted[node]
        feature[node] = split.feature
        threshold[node] = split.threshold
        improvement[node] = split.gain
        go_left = np.zeros(Z.shape[0], dtype=bool)
        go_left[idx[split.left_mask]] = True
        n_left = int(split.left_mask.sum())
        sel = go_left[srt]
        left_sorted = srt[sel].reshape(srt.shape[0], n_left)
        right_sorted = srt[~sel].reshape(srt.shape[0], idx.size - n_left)
        lch = new_node(idx[split.left_mask], left_sorted, depth_of[node] + 1)
        rch = new_node(idx[~split.left_mask], right_sorted, depth_of[node] + 1)
        left[node], right[node] = lch, rch
        if split.left_levels is not None:
            L = int(n_levels[split.feature])
            table = np.zeros(L + 1, dtype=bool)
            present = np.unique(Z[idx, split.feature].astype(np.int64))
            table[:] = n_left >= idx.size - n_left  # absent and unseen levels follow the larger child
            table[present] = np.isin(present, split.left_levels)
            cat_left[node] = table
        node_sorted[node] = None
        n_done += 1
        consider(lch)
        consider(rch)

    values = np.zeros(len(feature))
    for node, idx in enumerate(node_rows):
        if feature[node] >= 0 or idx.size == 0:
            continue
        num = residuals[idx].sum()
        if hessian is None:
            values[node] = num / idx.size
        else:
            den = hessian[idx].sum()
            values[node] = float(np.clip(num / den, -LEAF_CLAMP, LEAF_CLAMP)) if den > 0 else 0.0
    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=values,
        n_train=np.asarray(n_train, dtype=np.int64),
        improvement=np.asarray(improvement, dtype=float),
        cat_left=cat_left,
    )


# --------------------------------------------------------------------------- boosting


_P_MIN = np.finfo(float).tiny
_P_MAX = np.nextafter(1.0, 0.0)


def logistic(f):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(f, dtype=float)))


def bernoulli_deviance(y: np.ndarray, f: np.ndarray) -> float:
    """Mean Bernoulli deviance ``-2 * mean(y*f - log(1 + e^f))``."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    return float(-2.0 * np.mean(y * f - np.logaddexp(0.0, f)))


@dataclass
class BoostedModel:
    f0: float
    trees: list[DecisionTree]
    config: GbmConfig
    variables: list[Variable]
    raw_importance: np.ndarray = None
    total_improvement: float = 0.0
    train_deviance: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.raw_importance is None:
            self.raw_importance = np.zeros(len(self.variables))

    @property
    def variable_names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def n_levels(self) -> np.ndarray:
        return np.array([len(v.levels) if v.is_categorical else 0 for v in self.variables], dtype=np.int64)

    def decision_function(self, X, n_trees: int | None = None) -> np.ndarray:
        Z = encode(X, self.variables)
        f = np.full(Z.shape[0], self.f0)
        for tree in self.trees[:n_trees]:
            f += self.config.shrinkage * tree.predict(Z)
        return f

    def predict_proba(self, X, n_trees: int | None = None):
        # saturated scores still map strictly inside (0, 1)
        p = np.clip(logistic(self.decision_function(X, n_trees)), _P_MIN, _P_MAX)
        return float(p[0]) if not isinstance(X, pd.DataFrame) else p

    def variable_importance(self) -> dict[str, float]:
        return variable_importance(self)

    # serialization -----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": "statarb-gbm",
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "f0": self.f0,
            "variables": [{"name": v.name, "levels": list(v.levels) if v.is_categorical else None} for v in self.variables],
            "raw_importance": self.raw_importance.tolist(),
            "total_improvement": self.total_improvement,
            "train_deviance": list(self.train_deviance),
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, separators=(",", ":"), allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "BoostedModel":
        doc = json.loads(text)
        if doc.get("format") != "statarb-gbm":
            raise ValueError("not a serialized boosted model")
        if doc["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {doc['version']}")
        return cls(
            f0=doc["f0"],
            trees=[DecisionTree.from_dict(t) for t in doc["trees"]],
            config=GbmConfig(**doc["config"]),
            variables=[Variable(v["name"], None if v["levels"] is None else tuple(v["levels"])) for v in doc["variables"]],
            raw_importance=np.asarray(doc["raw_importance"], dtype=float),
            total_improvement=doc["total_improvement"],
            train_deviance=list(doc["train_deviance"]),
        )


def fit(
    X: pd.DataFrame,
    y,
    config: GbmConfig,
    columns: Sequence[str] | None = None,
    track_deviance: bool = False,
) -> BoostedModel:
    """Fit a boosted classifier.

    Args:
        X: predictor frame; categorical dtype or string columns are factors.
        y: binary labels aligned with ``X``.
        config: boosting parameters, including the seed for row subsampling.
        columns: predictors to use (default all columns of ``X``).
        track_deviance: record the full-sample training deviance after every
            iteration in ``model.train_deviance``.
    """
    if len(X) == 0:
        raise EmptyPanel("no training rows")
    y = np.asarray(y, dtype=float)
    if y.shape[0] != len(X):
        raise ValueError("X and y lengths differ")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    p_bar = y.mean()
    if len(X) < 2 or p_bar in (0.0, 1.0):
        raise SingleClassTrainingSet(f"training labels are all {int(p_bar)}")
    variables = infer_variables(X, columns)
    Z = encode(X, variables)
    if np.isnan(Z[:, [not v.is_categorical for v in variables]]).any():
        raise ValueError("numeric predictors contain NaN")
    n_levels = np.array([len(v.levels) if v.is_categorical else 0 for v in variables], dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = Z.shape[0]
    n_bag = n if config.bag_fraction >= 1.0 else max(1, int(math.floor(config.bag_fraction * n)))
    f0 = math.log(p_bar / (1.0 - p_bar))
    f = np.full(n, f0)
    trees: list[DecisionTree] = []
    raw_importance = np.zeros(len(variables))
    total_improvement = 0.0
    deviance = [bernoulli_deviance(y, f)] if track_deviance else []
    for _ in range(config.n_trees):
        p = logistic(f)
        resid = y - p
        hess = p * (1.0 - p)
        rows = np.arange(n) if n_bag == n else np.sort(rng.choice(n, size=n_bag, replace=False))
        tree = grow_tree(Z, resid, config, hessian=hess, rows=rows, n_levels=n_levels, rng=rng)
        for node in np.flatnonzero(tree.feature >= 0):
            raw_importance[tree.feature[node]] += tree.improvement[node]
            total_improvement += tree.improvement[node]
        f += config.shrinkage * tree.predict(Z)
        trees.append(tree)
        if track_deviance:
            deviance.append(bernoulli_deviance(y, f))
    return BoostedModel(f0, trees, config, variables, raw_importance, total_improvement, deviance)


def predict_proba(model: BoostedModel, row):
    return model.predict_proba(row)


def variable_importance(model: BoostedModel) -> dict[str, float]:
    """Split improvements per variable, averaged over trees, rescaled to a maximum of 100."""
    avg = model.raw_importance / max(len(model.trees), 1)
    top = avg.max() if avg.size else 0.0
    scaled = avg * (100.0 / top) if top > 0 else np.zeros_like(avg)
    return {v.name: float(s) for v, s in zip(model.variables, scaled)}
