"""Directed temporal transaction graph with historical snapshot views.

Nodes carry the timestep at which they appear. An edge is observable once
both endpoints exist, so its observation time is the later endpoint
timestep. Snapshots are horizon filters over one frozen base graph.
"""

from __future__ import annotations

import logging
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from fraudkit.errors import ContractError, DataError

logger = logging.getLogger(__name__)


def _csr_from_pairs(n, rows, cols, etime):
    """Row-compressed adjacency with neighbors sorted by index."""
    order = np.lexsort((cols, rows))
    rows, cols, etime = rows[order], cols[order], etime[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, cols.astype(np.int64), etime.astype(np.int64)


class TemporalGraph:
    """Directed graph whose nodes carry timesteps.

    Build with :meth:`add_node` / :meth:`add_edge`, then :meth:`finalize`.
    After finalization the graph is immutable and views may be shared
    freely across threads.
    """

    def __init__(self):
        self._index: dict[int, int] = {}
        self._ids: list[int] = []
        self._times: list[int] = []
        self._edge_keys: set[tuple[int, int]] = set()
        self._src: list[int] = []
        self._dst: list[int] = []
        self.self_loop_warnings = 0
        self.duplicate_edges = 0
        self._finalized = False

    # -- build phase -------------------------------------------------------

    def add_node(self, node_id: int, t: int) -> None:
        self._check_mutable()
        if isinstance(node_id, bool) or not isinstance(node_id, (int, np.integer)) or node_id < 0:
            raise ContractError(f"node id must be a non-negative integer, got {node_id!r}")
        node_id = int(node_id)
        if node_id in self._index:
            raise ContractError(f"duplicate node id {node_id!r}")
        t = int(t)
        if t < 1:
            raise DataError(f"node {node_id!r}: timestep must be >= 1, got {t}")
        self._index[node_id] = len(self._ids)
        self._ids.append(node_id)
        self._times.append(t)

    def add_edge(self, src: int, dst: int) -> None:
        self._check_mutable()
        try:
            u = self._index[src]
        except KeyError:
            raise DataError(f"edge references unknown node id {src}") from None
        try:
            v = self._index[dst]
        except KeyError:
            raise DataError(f"edge references unknown node id {dst}") from None
        if u == v:
            self.self_loop_warnings += 1
            logger.debug("ignoring self-loop on node %r", src)
            return
        key = (u, v)
        if key in self._edge_keys:
            self.duplicate_edges += 1
            return
        self._edge_keys.add(key)
        self._src.append(u)
        self._dst.append(v)

    def _check_mutable(self):
        if self._finalized:
            raise ContractError("graph is finalized and can no longer be modified")

    def finalize(self) -> "TemporalGraph":
        if self._finalized:
            return self
        n = len(self._ids)
        self.node_ids = np.asarray(self._ids, dtype=np.int64)
        self.node_times = np.asarray(self._times, dtype=np.int64)
        self.src = np.asarray(self._src, dtype=np.int64)
        self.dst = np.asarray(self._dst, dtype=np.int64)
        self.etime = np.maximum(self.node_times[self.src], self.node_times[self.dst])
        for arr in (self.node_ids, self.node_times, self.src, self.dst, self.etime):
            arr.flags.writeable = False

        self._out = _csr_from_pairs(n, self.src, self.dst, self.etime)
        self._in = _csr_from_pairs(n, self.dst, self.src, self.etime)
        # Both directions of a pair share the same etime, so the undirected
        # projection can carry it unchanged.
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        et = np.concatenate([self.etime, self.etime])
        if len(rows):
            keys = np.unique(rows * n + cols, return_index=True)[1]
            rows, cols, et = rows[keys], cols[keys], et[keys]
        self._und = _csr_from_pairs(n, rows, cols, et)
        self._edge_keys = set()
        self._finalized = True
        if self.self_loop_warnings:
            logger.warning("dropped %d self-loop(s)", self.self_loop_warnings)
        return self

    # -- queries -----------------------------------------------------------

    @property
    def finalized(self) -> bool:
        return self._finalized

    @property
    def node_count(self) -> int:
        return len(self._ids)

    @property
    def edge_count(self) -> int:
        return len(self.src) if self._finalized else len(self._src)

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    def index_of(self, node_id) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise ContractError(f"node {node_id!r} not in graph") from None

    def timestep_of(self, node_id) -> int:
        return self._times[self.index_of(node_id)]

    def timesteps(self) -> np.ndarray:
        """Sorted distinct node timesteps."""
        self.finalize()
        return np.unique(self.node_times)

    @property
    def max_timestep(self) -> int:
        self.finalize()
        return int(self.node_times.max()) if self.node_count else 0

    def edge_time(self, src, dst) -> int:
        u, v = self.index_of(src), self.index_of(dst)
        return max(self._times[u], self._times[v])

    def snapshot_at(self, t: int) -> "SnapshotView":
        if t < 1:
            raise ContractError(f"snapshot horizon must be >= 1, got {t}")
        self.finalize()
        return SnapshotView(self, int(t))

    def full_view(self) -> "SnapshotView":
        self.finalize()
        return SnapshotView(self, max(self.max_timestep, 1))


class SnapshotView:
    """Read-only view of the nodes and edges observed at or before ``horizon``."""

    def __init__(self, base: TemporalGraph, horizon: int):
        self.base = base
        self.horizon = horizon

    def __repr__(self):
        return f"SnapshotView(horizon={self.horizon}, nodes={len(self.nodes)})"

    @cached_property
    def node_mask(self) -> np.ndarray:
        return self.base.node_times <= self.horizon

    @cached_property
    def edge_mask(self) -> np.ndarray:
        return self.base.etime <= self.horizon

    @cached_property
    def nodes(self) -> np.ndarray:
        """Dense indices of visible nodes, ascending."""
        return np.flatnonzero(self.node_mask)

    @property
    def node_ids(self) -> np.ndarray:
        return self.base.node_ids[self.nodes]

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return int(self.edge_mask.sum())

    def __contains__(self, node_id) -> bool:
        if node_id not in self.base:
            return False
        return self.base.timestep_of(node_id) <= self.horizon

    def _require(self, node_id) -> int:
        if node_id not in self:
            raise ContractError(f"node {node_id!r} not present at horizon {self.horizon}")
        return self.base.index_of(node_id)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Visible edges as (src, dst) dense-index arrays in insertion order."""
        m = self.edge_mask
        return self.base.src[m], self.base.dst[m]

    def edge_list(self) -> list[tuple[int, int]]:
        s, d = self.edges()
        ids = self.base.node_ids
        return list(zip(ids[s].tolist(), ids[d].tolist()))

    def _filtered(self, csr, idx):
        indptr, indices, etime = csr
        lo, hi = indptr[idx], indptr[idx + 1]
        nbrs = indices[lo:hi]
        return nbrs[etime[lo:hi] <= self.horizon]

    def out_neighbors(self, node_id) -> np.ndarray:
        return self.base.node_ids[self._filtered(self.base._out, self._require(node_id))]

    def in_neighbors(self, node_id) -> np.ndarray:
        return self.base.node_ids[self._filtered(self.base._in, self._require(node_id))]

    def local_index(self, dense: np.ndarray) -> np.ndarray:
        """Map dense base indices to positions within :attr:`nodes`."""
        return np.searchsorted(self.nodes, dense)

    def adjacency(self) -> sp.csr_matrix:
        """Directed 0/1 adjacency over visible nodes, in :attr:`nodes` order.

        Column indices are sorted so arithmetic on the matrix depends only
        on the visible edge set, not on edge insertion order.
        """
        n = self.node_count
        s, d = self.edges()
        a = sp.csr_matrix(
            (np.ones(len(s)), (self.local_index(s), self.local_index(d))), shape=(n, n)
        )
        a.sum_duplicates()
        a.sort_indices()
        return a


class UndirectedView:
    """Symmetric projection of a snapshot: u-v iff u->v or v->u."""

    def __init__(self, view: SnapshotView):
        self.view = view

    @property
    def base(self) -> TemporalGraph:
        return self.view.base

    @property
    def horizon(self) -> int:
        return self.view.horizon

    @property
    def nodes(self) -> np.ndarray:
        return self.view.nodes

    @property
    def node_ids(self) -> np.ndarray:
        return self.view.node_ids

    def __contains__(self, node_id) -> bool:
        return node_id in self.view

    def neighbors(self, node_id) -> np.ndarray:
        idx = self.view._require(node_id)
        return self.base.node_ids[self.view._filtered(self.base._und, idx)]

    def degree(self, node_id) -> int:
        return len(self.neighbors(node_id))

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency in :attr:`nodes` order, sorted indices."""
        a = self.view.adjacency()
        u = (a + a.T).tocsr()
        u.data[:] = 1.0
        u.sort_indices()
        return u


def undirected_projection(view: SnapshotView) -> UndirectedView:
    return UndirectedView(view)
