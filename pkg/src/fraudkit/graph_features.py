"""Structural node descriptors on temporal snapshots.

Two extraction modes are provided. Causal mode computes each node's
descriptors on the snapshot at the node's own timestep, so no edge observed
later can influence them. Full mode computes everything once on the union
graph and serves as the leaky baseline for :func:`leakage_audit`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from fraudkit.errors import ConfigError, ContractError, DataError
from fraudkit.matrix import FeatureMatrix
from fraudkit.temporal_graph import SnapshotView, TemporalGraph, UndirectedView

logger = logging.getLogger(__name__)

BASE_DESCRIPTORS = (
    "in_degree",
    "out_degree",
    "total_degree",
    "pagerank",
    "hub",
    "authority",
    "kcore",
    "nbr_deg_mean",
    "nbr_deg_max",
    "two_hop_reach",
)
# Degree- and reach-based descriptors that get a log1p companion.
LOG1P_TARGETS = (
    "in_degree",
    "out_degree",
    "total_degree",
    "nbr_deg_mean",
    "nbr_deg_max",
    "two_hop_reach",
)
DEFAULT_NAMES = BASE_DESCRIPTORS + tuple(f"log1p_{n}" for n in LOG1P_TARGETS)

__all__ = [
    "DescriptorSpec",
    "FeatureMatrix",
    "LeakageAuditReport",
    "ScoreResult",
    "HitsResult",
    "degrees",
    "pagerank",
    "hits",
    "kcore",
    "neighbor_degree_stats",
    "two_hop_reach",
    "apply_log1p",
    "compute_descriptors",
    "extract_causal",
    "extract_full",
    "leakage_audit",
]


@dataclass(frozen=True)
class DescriptorSpec:
    names: tuple[str, ...] = DEFAULT_NAMES
    pagerank_damping: float = 0.85
    pagerank_tol: float = 1e-9
    pagerank_max_iter: int = 200
    hits_tol: float = 1e-9
    hits_max_iter: int = 200

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ConfigError("descriptor names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate descriptor names in {self.names}")
        allowed = set(DEFAULT_NAMES)
        unknown = [n for n in self.names if n not in allowed]
        if unknown:
            raise ConfigError(f"unknown descriptors: {unknown}")
        if not 0.0 < self.pagerank_damping < 1.0:
            raise ConfigError("pagerank_damping must lie in (0, 1)")
        if self.pagerank_tol <= 0 or self.hits_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.pagerank_max_iter < 1 or self.hits_max_iter < 1:
            raise ConfigError("iteration limits must be positive")

    @property
    def base_names(self) -> tuple[str, ...]:
        """Raw descriptors needed to produce :attr:`names`, canonical order."""
        need = {n.removeprefix("log1p_") for n in self.names}
        return tuple(n for n in BASE_DESCRIPTORS if n in need)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["names"] = list(self.names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DescriptorSpec":
        return cls(**d)


@dataclass
class ScoreResult:
    node_ids: np.ndarray
    scores: np.ndarray
    converged: bool
    iterations: int

    def as_dict(self) -> dict:
        return dict(zip(self.node_ids.tolist(), self.scores.tolist()))

    def __getitem__(self, node_id):
        return float(self.scores[np.flatnonzero(self.node_ids == node_id)[0]])


@dataclass
class HitsResult:
    node_ids: np.ndarray
    hub: np.ndarray
    authority: np.ndarray
    converged: bool
    iterations: int

    def as_dict(self) -> dict:
        return {k: (h, a) for k, h, a in
                zip(self.node_ids.tolist(), self.hub.tolist(), self.authority.tolist())}

    def __getitem__(self, node_id):
        i = np.flatnonzero(self.node_ids == node_id)[0]
        return float(self.hub[i]), float(self.authority[i])


# -- array-level kernels -----------------------------------------------------
# Each kernel takes a sparse adjacency over local indices 0..n-1 with sorted
# column indices. Results depend only on the matrix, never on edge order.


def _pagerank_arrays(a: sp.csr_matrix, damping, tol, max_iter):
    n = a.shape[0]
    outdeg = np.diff(a.indptr).astype(np.float64)
    dangling = outdeg == 0
    inv = np.zeros(n)
    inv[~dangling] = 1.0 / outdeg[~dangling]
    # column-stochastic transition matrix
    m = sp.csr_matrix(sp.diags(inv) @ a).T.tocsr()
    m.sort_indices()
    x = np.full(n, 1.0 / n)
    teleport = (1.0 - damping) / n
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = damping * (m @ x + x[dangling].sum() / n) + teleport
        new /= new.sum()
        err = np.abs(new - x).sum()
        x = new
        if err < tol:
            converged = True
            break
    return x, converged, it


def _hits_arrays(a: sp.csr_matrix, tol, max_iter):
    n = a.shape[0]
    if a.nnz == 0:
        return np.zeros(n), np.zeros(n), True, 0
    at = a.T.tocsr()
    at.sort_indices()
    hub = np.full(n, 1.0 / np.sqrt(n))
    auth = np.zeros(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_auth = at @ hub
        new_auth /= np.linalg.norm(new_auth)
        new_hub = a @ new_auth
        new_hub /= np.linalg.norm(new_hub)
        err = max(np.abs(new_auth - auth).sum(), np.abs(new_hub - hub).sum())
        hub, auth = new_hub, new_auth
        if err < tol:
            converged = True
            break
    return hub, auth, converged, it


def _core_numbers(u: sp.csr_matrix) -> np.ndarray:
    """Bucket-based O(n + m) core decomposition (Batagelj-Zaversnik)."""
    n = u.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    indptr = u.indptr.tolist()
    indices = u.indices.tolist()
    deg = np.diff(u.indptr).tolist()
    md = max(deg)
    bin_ = [0] * (md + 1)
    for d in deg:
        bin_[d] += 1
    start = 0
    for d in range(md + 1):
        bin_[d], start = start, start + bin_[d]
    pos = [0] * n
    vert = [0] * n
    for v in range(n):
        pos[v] = bin_[deg[v]]
        vert[pos[v]] = v
        bin_[deg[v]] += 1
    for d in range(md, 0, -1):
        bin_[d] = bin_[d - 1]
    bin_[0] = 0
    for i in range(n):
        v = vert[i]
        dv = deg[v]
        for j in range(indptr[v], indptr[v + 1]):
            w = indices[j]
            dw = deg[w]
            if dw > dv:
                pw = pos[w]
                ps = bin_[dw]
                s = vert[ps]
                if s != w:
                    pos[w], pos[s] = ps, pw
                    vert[ps], vert[pw] = w, s
                bin_[dw] += 1
                deg[w] = dw - 1
    return np.asarray(deg, dtype=np.int64)


def _neighbor_stats(u: sp.csr_matrix, rows: np.ndarray):
    deg = np.diff(u.indptr).astype(np.float64)
    sub = u[rows]
    k = np.diff(sub.indptr)
    if not len(rows):
        return np.zeros(0), np.zeros(0)
    # trailing sentinel keeps every segment start in range without clipping
    nbr_deg = np.append(deg[sub.indices], 0.0)
    starts = sub.indptr[:-1]
    total = np.add.reduceat(nbr_deg, starts)
    mx = np.maximum.reduceat(nbr_deg, starts)
    # reduceat is meaningless for empty segments
    empty = k == 0
    total = np.where(empty, 0.0, total)
    mx = np.where(empty, 0.0, mx)
    mean = np.divide(total, k, out=np.zeros(len(rows)), where=~empty)
    return mean, mx


def _two_hop_counts(u: sp.csr_matrix, rows: np.ndarray) -> np.ndarray:
    sub = u[rows]
    reach = (sub @ u + sub).tocsr()
    reach.eliminate_zeros()
    counts = np.diff(reach.indptr).astype(np.int64)
    # v reaches itself through any neighbor; drop that entry
    self_hit = np.asarray(reach[np.arange(len(rows)), rows]).ravel() != 0
    return counts - self_hit


# -- per-view public API ---------------------------------------------------


def _snapshot(view) -> SnapshotView:
    return view.view if isinstance(view, UndirectedView) else view


def degrees(view, v) -> tuple[int, int, int]:
    """(in, out, total) degree; total counts distinct undirected neighbors."""
    snap = _snapshot(view)
    if v not in snap:
        raise ContractError(f"node {v} not present at horizon {snap.horizon}")
    outs = snap.out_neighbors(v)
    ins = snap.in_neighbors(v)
    return len(ins), len(outs), len(UndirectedView(snap).neighbors(v))


def pagerank(view: SnapshotView, spec: DescriptorSpec = DescriptorSpec()) -> ScoreResult:
    view = _snapshot(view)
    if view.node_count == 0:
        raise ContractError("pagerank on an empty view")
    x, ok, it = _pagerank_arrays(view.adjacency(), spec.pagerank_damping,
                                 spec.pagerank_tol, spec.pagerank_max_iter)
    if not ok:
        logger.warning("pagerank did not converge in %d iterations", it)
    return ScoreResult(view.node_ids, x, ok, it)


def hits(view: SnapshotView, spec: DescriptorSpec = DescriptorSpec()) -> HitsResult:
    view = _snapshot(view)
    if view.node_count == 0:
        raise ContractError("hits on an empty view")
    h, a, ok, it = _hits_arrays(view.adjacency(), spec.hits_tol, spec.hits_max_iter)
    if not ok:
        logger.warning("HITS did not converge in %d iterations", it)
    return HitsResult(view.node_ids, h, a, ok, it)


def kcore(view) -> dict:
    if isinstance(view, SnapshotView):
        view = UndirectedView(view)
    cores = _core_numbers(view.adjacency())
    return dict(zip(view.node_ids.tolist(), cores.tolist()))


def neighbor_degree_stats(view, v) -> tuple[float, int]:
    if isinstance(view, SnapshotView):
        view = UndirectedView(view)
    nbrs = view.neighbors(v)
    if len(nbrs) == 0:
        return 0.0, 0
    degs = [view.degree(int(w)) for w in nbrs]
    return sum(degs) / len(degs), max(degs)


def two_hop_reach(view, v) -> int:
    if isinstance(view, SnapshotView):
        view = UndirectedView(view)
    first = set(view.neighbors(v).tolist())
    reach = set(first)
    for w in first:
        reach.update(view.neighbors(w).tolist())
    reach.discard(v)
    return len(reach)


def compute_descriptors(view: SnapshotView, spec: DescriptorSpec,
                        targets: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Raw descriptors for ``targets`` (dense base indices, default all visible).

    Returns arrays aligned with ``targets`` for every name in
    ``spec.base_names``.
    """
    if targets is None:
        targets = view.nodes
    rows = view.local_index(targets)
    need = set(spec.base_names)
    out: dict[str, np.ndarray] = {}
    if view.node_count == 0 or len(targets) == 0:
        return {n: np.zeros(len(targets)) for n in spec.base_names}
    a = view.adjacency()
    u = None
    if need & {"total_degree", "kcore", "nbr_deg_mean", "nbr_deg_max", "two_hop_reach"}:
        u = UndirectedView(view).adjacency()
    if "in_degree" in need:
        out["in_degree"] = np.bincount(a.indices, minlength=a.shape[0])[rows].astype(float)
    if "out_degree" in need:
        out["out_degree"] = np.diff(a.indptr)[rows].astype(float)
    if "total_degree" in need:
        out["total_degree"] = np.diff(u.indptr)[rows].astype(float)
    if "pagerank" in need:
        x, ok, it = _pagerank_arrays(a, spec.pagerank_damping, spec.pagerank_tol,
                                     spec.pagerank_max_iter)
        if not ok:
            logger.warning("pagerank at horizon %d did not converge", view.horizon)
        out["pagerank"] = x[rows]
    if need & {"hub", "authority"}:
        h, au, ok, it = _hits_arrays(a, spec.hits_tol, spec.hits_max_iter)
        if not ok:
            logger.warning("HITS at horizon %d did not converge", view.horizon)
        if "hub" in need:
            out["hub"] = h[rows]
        if "authority" in need:
            out["authority"] = au[rows]
    if "kcore" in need:
        out["kcore"] = _core_numbers(u)[rows].astype(float)
    if need & {"nbr_deg_mean", "nbr_deg_max"}:
        mean, mx = _neighbor_stats(u, rows)
        if "nbr_deg_mean" in need:
            out["nbr_deg_mean"] = mean
        if "nbr_deg_max" in need:
            out["nbr_deg_max"] = mx
    if "two_hop_reach" in need:
        out["two_hop_reach"] = _two_hop_counts(u, rows).astype(float)
    return {n: out[n] for n in spec.base_names}


def apply_log1p(matrix: FeatureMatrix, spec: DescriptorSpec) -> FeatureMatrix:
    """Append ``log1p_<name>`` for each requested degree/reach column."""
    wanted = [n.removeprefix("log1p_") for n in spec.names if n.startswith("log1p_")]
    targets = [n for n in wanted if n in matrix.columns and f"log1p_{n}" not in matrix.columns]
    if not targets:
        return matrix
    new_cols, new_vals = [], []
    for name in targets:
        col = matrix.column(name)
        neg = np.flatnonzero(col < 0)
        if len(neg):
            raise DataError(
                f"negative value {col[neg[0]]!r} in column {name!r} "
                f"at row {int(matrix.row_ids[neg[0]])}; log1p needs x >= 0"
            )
        new_cols.append(f"log1p_{name}")
        new_vals.append(np.log1p(col))
    return FeatureMatrix(matrix.row_ids, matrix.columns + tuple(new_cols),
                         np.column_stack([matrix.values] + new_vals),
                         matrix.provenance, matrix.timesteps)


def _assemble(graph: TemporalGraph, raw: dict[str, np.ndarray], spec, provenance):
    cols = spec.base_names
    values = np.column_stack([raw[c] for c in cols]) if cols else np.zeros((graph.node_count, 0))
    m = FeatureMatrix(graph.node_ids, cols, values, provenance, graph.node_times)
    return apply_log1p(m, spec).select(spec.names)


def extract_causal(graph: TemporalGraph, spec: DescriptorSpec = DescriptorSpec(),
                   n_jobs: int = 1) -> FeatureMatrix:
    """Descriptors for each node computed on the snapshot at its own timestep."""
    graph.finalize()
    steps = graph.timesteps().tolist()

    def one(t):
        targets = np.flatnonzero(graph.node_times == t)
        return targets, compute_descriptors(graph.snapshot_at(t), spec, targets)

    if n_jobs > 1 and len(steps) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(one, steps))
    else:
        parts = [one(t) for t in steps]

    raw = {n: np.zeros(graph.node_count) for n in spec.base_names}
    for targets, desc in parts:
        for n, vals in desc.items():
            raw[n][targets] = vals
    return _assemble(graph, raw, spec, "causal")


def extract_full(graph: TemporalGraph, spec: DescriptorSpec = DescriptorSpec()) -> FeatureMatrix:
    """Descriptors computed once on the union graph (look-ahead baseline)."""
    graph.finalize()
    view = graph.full_view()
    raw = compute_descriptors(view, spec, view.nodes)
    return _assemble(graph, raw, spec, "full")


@dataclass
class LeakageAuditReport:
    columns: tuple[str, ...]
    tol: float
    n_rows: int
    frac_differing: dict[str, float]
    mean_abs_diff: dict[str, float]
    # timestep -> column -> (fraction differing, mean |diff|, rows)
    by_timestep: dict[int, dict[str, tuple[float, float, int]]] = field(default_factory=dict)

    def column_rows(self) -> list[dict]:
        return [{"column": c, "frac_differing": self.frac_differing[c],
                 "mean_abs_diff": self.mean_abs_diff[c]} for c in self.columns]

    def timestep_rows(self) -> list[dict]:
        out = []
        for t in sorted(self.by_timestep):
            for c in self.columns:
                frac, mad, n = self.by_timestep[t][c]
                out.append({"timestep": t, "column": c, "n_rows": n,
                            "frac_differing": frac, "mean_abs_diff": mad})
        return out


def leakage_audit(causal: FeatureMatrix, full: FeatureMatrix, tol: float = 1e-9) -> LeakageAuditReport:
    """Compare causal against full-graph descriptors column by column."""
    if causal.columns != full.columns:
        mismatched = sorted(set(causal.columns) ^ set(full.columns))
        if not mismatched:
            mismatched = [f"{a}!={b}" for a, b in zip(causal.columns, full.columns) if a != b]
        raise ContractError(f"column schema mismatch: {mismatched}")
    if len(causal) != len(full) or set(causal.row_ids.tolist()) != set(full.row_ids.tolist()):
        raise ContractError("causal and full matrices cover different rows")
    full = full.take(full.rows_for(causal.row_ids))
    diff = np.abs(causal.values - full.values)
    differs = diff > tol
    n = len(causal)
    frac = {c: float(differs[:, j].mean()) if n else 0.0 for j, c in enumerate(causal.columns)}
    mad = {c: float(diff[:, j].mean()) if n else 0.0 for j, c in enumerate(causal.columns)}
    by_t = {}
    ts = causal.timesteps if causal.timesteps is not None else full.timesteps
    if ts is not None:
        for t in np.unique(ts).tolist():
            m = ts == t
            k = int(m.sum())
            by_t[t] = {c: (float(differs[m, j].mean()), float(diff[m, j].mean()), k)
                       for j, c in enumerate(causal.columns)}
    return LeakageAuditReport(causal.columns, tol, n, frac, mad, by_t)
