"""Class-weighted random forest for illicit-probability scoring.

Trees are grown on bootstrap samples with Gini impurity on weighted class
mass. A bootstrap draw is represented by per-row multiplicities rather than
duplicated rows; row weight = multiplicity * class weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from fraudkit.errors import ConfigError, ContractError, DataError
from fraudkit.matrix import FeatureMatrix, schema_hash

FORMAT = "fraudkit-forest/1"


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 400
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: str | float = "sqrt"
    class_weighting: str = "balanced"
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be positive or None")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be positive")
        fps = self.features_per_split
        if isinstance(fps, str):
            if fps not in ("sqrt", "all"):
                raise ConfigError(f"features_per_split must be 'sqrt', 'all' or a fraction, got {fps!r}")
        elif not 0.0 < float(fps) <= 1.0:
            raise ConfigError("features_per_split fraction must lie in (0, 1]")
        if self.class_weighting not in ("balanced", "none"):
            raise ConfigError("class_weighting must be 'balanced' or 'none'")

    def n_candidates(self, n_features: int) -> int:
        fps = self.features_per_split
        if fps == "sqrt":
            k = int(math.sqrt(n_features))
        elif fps == "all":
            k = n_features
        else:
            k = int(float(fps) * n_features)
        return min(max(k, 1), n_features)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] < 0`` marks a leaf.

    ``value`` holds the weighted illicit fraction at each node; the licit
    fraction is ``1 - value``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        active = np.arange(len(x))
        while len(active):
            f = self.feature[node[active]]
            inner = f >= 0
            active, f = active[inner], f[inner]
            if not len(active):
                break
            nd = node[active]
            go_left = x[active, f] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], np.float64),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], np.float64))


def gini(y: np.ndarray, w: np.ndarray) -> float:
    """Weighted Gini impurity of a binary label vector."""
    tot = float(np.sum(w))
    if tot == 0:
        return 0.0
    p1 = float(np.sum(w * y)) / tot
    return 1.0 - p1 * p1 - (1.0 - p1) ** 2


def split_impurity(x, y, w, threshold) -> float:
    """Weight-averaged child Gini for the split ``x <= threshold``."""
    x, y, w = map(np.asarray, (x, y, w))
    left = x <= threshold
    tot = float(np.sum(w))
    wl, wr = float(np.sum(w[left])), float(np.sum(w[~left]))
    return (wl * gini(y[left], w[left]) + wr * gini(y[~left], w[~left])) / tot


def class_weights(y: np.ndarray, counts: np.ndarray, mode: str) -> np.ndarray:
    """Per-class weights; balanced gives n_total / (2 * n_c) on the sample."""
    if mode == "none":
        return np.ones(2)
    n1 = float(counts[y == 1].sum())
    n0 = float(counts[y == 0].sum())
    n = n0 + n1
    return np.array([n / (2 * n0) if n0 else 0.0, n / (2 * n1) if n1 else 0.0])


def _scan_columns(sub, y, w, c, msl):
    """Best split per column of ``sub`` (node rows x candidate columns).

    Returns (impurity, threshold, non_constant) arrays, one entry per column;
    impurity is inf where the column admits no valid split.
    """
    m, b = sub.shape
    order = np.argsort(sub, axis=0)
    xs = np.take_along_axis(sub, order, axis=0)
    non_constant = xs[0] != xs[-1]
    wy = w * y
    W, W1, C = w.sum(), wy.sum(), c.sum()
    cw = np.cumsum(w[order], axis=0)[:-1]
    cw1 = np.cumsum(wy[order], axis=0)[:-1]
    cc = np.cumsum(c[order], axis=0)[:-1]
    valid = (xs[:-1] < xs[1:]) & (cc >= msl) & (C - cc >= msl)
    wr, r1 = W - cw, W1 - cw1
    l0, r0 = cw - cw1, wr - r1
    with np.errstate(divide="ignore", invalid="ignore"):
        # one term per child so mirrored splits tie exactly
        gl = cw - (cw1 * cw1 + l0 * l0) / cw
        gr = wr - (r1 * r1 + r0 * r0) / wr
        imp = (gl + gr) / W
    imp = np.where(valid, imp, np.inf)
    pos = np.argmin(imp, axis=0)
    cols = np.arange(b)
    best = imp[pos, cols]
    lo, hi = xs[pos, cols], xs[np.minimum(pos + 1, m - 1), cols]
    thr = lo + (hi - lo) / 2.0
    thr = np.where((lo <= thr) & (thr < hi), thr, lo)
    return best, thr, non_constant


def _best_split(x, idx, y, w, c, order_feats, k, msl):
    """Scan candidate features; return (impurity, column, threshold) or None.

    Features are visited in ``order_feats`` order until ``k`` non-constant
    ones have been examined. Ties go to the lowest column, then the lowest
    threshold.
    """
    best = None
    start, need = 0, k
    while need > 0 and start < len(order_feats):
        cols = order_feats[start:start + need]
        start += need
        imp, thr, nc = _scan_columns(x[np.ix_(idx, cols)], y, w, c, msl)
        # constant columns do not count towards k
        need -= int(nc.sum())
        for i in np.flatnonzero(np.isfinite(imp)):
            cand = (float(imp[i]), int(cols[i]), float(thr[i]))
            if best is None or cand < best:
                best = cand
    return best


def _grow_tree(x, y, counts, cfg: TrainConfig, rng) -> Tree:
    rows = np.flatnonzero(counts)
    cw = class_weights(y[rows], counts[rows], cfg.class_weighting)
    n_feat = x.shape[1]
    k = cfg.n_candidates(n_feat)
    msl = cfg.min_samples_leaf

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(v):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(v)
        return len(feature) - 1

    ys = y[rows]
    ws = counts[rows] * cw[ys]
    root_val = float((ws * ys).sum() / ws.sum())
    stack = [(new_node(root_val), rows, 0)]
    while stack:
        nid, idx, depth = stack.pop()
        yi = y[idx]
        ci = counts[idx].astype(np.float64)
        wi = ci * cw[yi]
        w1 = float((wi * yi).sum())
        wt = float(wi.sum())
        if (w1 == 0.0 or w1 == wt or ci.sum() < 2 * msl
                or (cfg.max_depth is not None and depth >= cfg.max_depth)):
            continue
        best = _best_split(x, idx, yi.astype(np.float64), wi, ci, rng.permutation(n_feat), k, msl)
        if best is None:
            continue
        _, f, thr = best
        go_left = x[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        vals = []
        for part in (li, ri):
            wp = counts[part] * cw[y[part]]
            vals.append(float((wp * y[part]).sum() / wp.sum()))
        lid, rid = new_node(vals[0]), new_node(vals[1])
        feature[nid], threshold[nid], left[nid], right[nid] = f, thr, lid, rid
        # right pushed first so the left subtree is numbered first
        stack.append((rid, ri, depth + 1))
        stack.append((lid, li, depth + 1))
    return Tree(np.asarray(feature, np.int64), np.asarray(threshold, np.float64),
                np.asarray(left, np.int64), np.asarray(right, np.int64),
                np.asarray(value, np.float64))


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), index]))


def _fit_one(x, y, cfg: TrainConfig, index: int) -> Tree:
    rng = _tree_rng(cfg.seed, index)
    n = len(y)
    if cfg.bootstrap:
        counts = np.bincount(rng.integers(0, n, n), minlength=n)
    else:
        counts = np.ones(n, dtype=np.int64)
    return _grow_tree(x, y, counts, cfg, rng)


@dataclass
class ForestModel:
    trees: list[Tree]
    columns: tuple[str, ...]
    config: TrainConfig

    @property
    def fingerprint(self) -> dict:
        return {"columns": list(self.columns), "sha256": schema_hash(self.columns)}

    def predict_proba(self, rows: FeatureMatrix) -> np.ndarray:
        return predict_proba(self, rows)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "schema": self.fingerprint,
            "config": self.config.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != FORMAT:
            raise ContractError(f"unsupported model format {d.get('format')!r}")
        cols = tuple(d["schema"]["columns"])
        if schema_hash(cols) != d["schema"]["sha256"]:
            raise ContractError("model schema hash does not match its column list")
        model = cls([Tree.from_dict(t) for t in d["trees"]], cols,
                    TrainConfig.from_dict(d["config"]))
        for t in model.trees:
            if (t.feature >= len(cols)).any():
                raise ContractError("tree references a column outside the schema")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_training(matrix: FeatureMatrix, labels) -> np.ndarray:
    y = np.asarray(labels)
    if len(y) != len(matrix):
        raise ContractError(f"{len(y)} labels for {len(matrix)} rows")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise DataError("training set contains a single class")
    bad = ~np.isfinite(matrix.values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"non-finite value at row {int(matrix.row_ids[r])} column {matrix.columns[c]!r}")
    return y.astype(np.int64)


def fit(train: FeatureMatrix, labels, config: TrainConfig = TrainConfig(),
        n_jobs: int = 1) -> ForestModel:
    """Grow ``config.n_trees`` trees; output is independent of ``n_jobs``."""
    y = _check_training(train, labels)
    x = np.ascontiguousarray(train.values)
    if n_jobs == 1:
        trees = [_fit_one(x, y, config, i) for i in range(config.n_trees)]
    else:
        trees = Parallel(n_jobs=n_jobs)(
            delayed(_fit_one)(x, y, config, i) for i in range(config.n_trees)
        )
    return ForestModel(list(trees), train.columns, config)


def _aligned(model: ForestModel, rows: FeatureMatrix) -> np.ndarray:
    missing = [c for c in model.columns if c not in rows.columns]
    if missing:
        raise ContractError(f"input lacks model columns: {missing[:10]}")
    if rows.columns == model.columns:
        return rows.values
    return rows.select(model.columns).values


def predict_proba(model: ForestModel, rows: FeatureMatrix) -> np.ndarray:
    """Mean of per-tree leaf illicit probabilities; columns matched by name."""
    return _predict_array(model, _aligned(model, rows))


def _predict_array(model: ForestModel, x: np.ndarray) -> np.ndarray:
    acc = np.zeros(len(x))
    for t in model.trees:
        acc += t.predict(x)
    return acc / len(model.trees)


def permutation_importance(model: ForestModel, rows: FeatureMatrix, labels,
                           metric: str = "roc_auc", repeats: int = 5,
                           seed: int = 0) -> dict[str, tuple[float, float]]:
    """Mean and std of the metric drop when one column is shuffled."""
    from fraudkit import metrics as mt

    scorer = {"roc_auc": mt.roc_auc, "ap": mt.average_precision}.get(metric)
    if scorer is None:
        raise ConfigError(f"metric must be 'roc_auc' or 'ap', got {metric!r}")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    y = np.asarray(labels)
    if len(np.unique(y)) < 2:
        raise DataError("permutation importance needs both classes")
    x = _aligned(model, rows)
    base = scorer(_predict_array(model, x), y)
    rng = np.random.default_rng(seed)
    out = {}
    xp = x.copy()
    for j, name in enumerate(model.columns):
        drops = []
        for _ in range(repeats):
            xp[:, j] = x[rng.permutation(len(x)), j]
            drops.append(base - scorer(_predict_array(model, xp), y))
        xp[:, j] = x[:, j]
        out[name] = (float(np.mean(drops)), float(np.std(drops)))
    return out
