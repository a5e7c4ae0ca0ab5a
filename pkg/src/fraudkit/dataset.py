"""Elliptic-format ingestion, label handling and chronological splits."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from fraudkit.errors import ConfigError, ContractError, DataError
from fraudkit.matrix import FeatureMatrix
from fraudkit.temporal_graph import TemporalGraph

logger = logging.getLogger(__name__)

LICIT, ILLICIT = 0, 1
_CLASS_CODES = {"1": ILLICIT, "illicit": ILLICIT, "2": LICIT, "licit": LICIT, "unknown": None}

FEATURE_CONFIGS = ("T", "G", "TG")


@dataclass(frozen=True)
class LabeledRecord:
    node: int
    t: int
    label: int | None  # None = unknown


@dataclass(frozen=True)
class SplitSpec:
    train_end: int = 34
    val_start: int = 35
    val_end: int = 41
    test_start: int = 42

    def __post_init__(self):
        if not (self.train_end < self.val_start <= self.val_end < self.test_start):
            raise ConfigError(
                "split boundaries must satisfy train_end < val_start <= val_end < test_start, "
                f"got {self}"
            )

    def split_of(self, t: int) -> str | None:
        if t <= self.train_end:
            return "train"
        if self.val_start <= t <= self.val_end:
            return "validation"
        if t >= self.test_start:
            return "test"
        return None

    def describe(self, name: str) -> str:
        return {
            "train": f"t <= {self.train_end}",
            "validation": f"{self.val_start} <= t <= {self.val_end}",
            "test": f"t >= {self.test_start}",
        }[name]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Split:
    matrix: FeatureMatrix
    labels: np.ndarray

    def counts(self) -> tuple[int, int]:
        """(licit, illicit)."""
        pos = int(self.labels.sum())
        return len(self.labels) - pos, pos


@dataclass
class SplitBundle:
    feature_config: str
    spec: SplitSpec
    train: Split
    validation: Split
    test: Split

    @property
    def columns(self) -> tuple[str, ...]:
        return self.train.matrix.columns

    def splits(self) -> dict[str, Split]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def _line_of(pos: int, header: bool) -> int:
    return pos + 1 + int(header)


def _read_table(path, header: bool) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        return pd.read_csv(path, header=0 if header else None, dtype=str,
                           keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file is empty") from None


def _has_header(path) -> bool:
    with open(path) as fh:
        first = fh.readline().split(",")[0].strip()
    try:
        int(first)
        return False
    except ValueError:
        return True


def _int_column(df, col, path, header) -> np.ndarray:
    vals = pd.to_numeric(df[col], errors="coerce")
    bad = vals.isna() | (vals % 1 != 0)
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(
            f"{path}:{_line_of(i, header)}: expected integer in column {col!r}, "
            f"got {df[col].iloc[i]!r}"
        )
    return vals.to_numpy(np.int64)


def _check_width(df, path, header, width=None):
    # short rows come back padded with empty strings
    empty = (df == "").to_numpy()
    if empty.any():
        i = int(np.flatnonzero(empty.any(axis=1))[0])
        raise DataError(f"{path}:{_line_of(i, header)}: missing field(s)")
    if width is not None and df.shape[1] != width:
        raise DataError(f"{path}: expected {width} columns, found {df.shape[1]}")


def read_features(path, raw: bool = False) -> tuple[np.ndarray, np.ndarray, FeatureMatrix]:
    """Parse a features file into (ids, timesteps, attribute matrix)."""
    header = not raw
    df = _read_table(path, header)
    if df.shape[1] < 2:
        raise DataError(f"{path}: need at least node id and timestep columns")
    _check_width(df, path, header)
    if raw:
        df.columns = ["node_id", "time_step"] + [f"tx_feat_{i}" for i in range(df.shape[1] - 2)]
    id_col, t_col = df.columns[0], df.columns[1]
    ids = _int_column(df, id_col, path, header)
    ts = _int_column(df, t_col, path, header)
    if (ts < 1).any():
        i = int(np.flatnonzero(ts < 1)[0])
        raise DataError(f"{path}:{_line_of(i, header)}: timestep must be >= 1")
    dup = pd.Index(ids).duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise DataError(f"{path}:{_line_of(i, header)}: duplicate node id {ids[i]}")
    attr_cols = list(df.columns[2:])
    values = np.empty((len(df), len(attr_cols)))
    for j, c in enumerate(attr_cols):
        col = pd.to_numeric(df[c], errors="coerce")
        if col.isna().any():
            i = int(np.flatnonzero(col.isna().to_numpy())[0])
            raise DataError(
                f"{path}:{_line_of(i, header)}: non-numeric value {df[c].iloc[i]!r} in column {c!r}"
            )
        values[:, j] = col.to_numpy(np.float64)
    if not np.isfinite(values).all():
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}:{_line_of(int(i), header)}: non-finite value in column {attr_cols[j]!r}")
    return ids, ts, FeatureMatrix(ids, tuple(attr_cols), values, "attributes", ts)


def read_edges(path) -> tuple[np.ndarray, np.ndarray]:
    header = _has_header(path)
    df = _read_table(path, header)
    _check_width(df, path, header, 2)
    return _int_column(df, df.columns[0], path, header), _int_column(df, df.columns[1], path, header)


def read_classes(path) -> dict[int, int | None]:
    header = _has_header(path)
    df = _read_table(path, header)
    _check_width(df, path, header, 2)
    ids = _int_column(df, df.columns[0], path, header)
    raw = df[df.columns[1]].str.strip().str.lower()
    labels = raw.map(_CLASS_CODES)
    bad = ~raw.isin(list(_CLASS_CODES))
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(f"{path}:{_line_of(i, header)}: unrecognized class {df.iloc[i, 1]!r}")
    out = {}
    for i, (k, v) in enumerate(zip(ids.tolist(), labels.tolist())):
        if k in out:
            raise DataError(f"{path}:{_line_of(i, header)}: duplicate node id {k}")
        out[k] = None if v is None or v != v else int(v)
    return out


def load_elliptic(features_path, edges_path, classes_path, raw: bool = False):
    """Build the graph, attribute matrix and label records from three CSVs.

    Nodes missing from the classes file are treated as unknown. Unknown
    nodes stay in the graph; they are only excluded from supervised splits.
    """
    ids, ts, attrs = read_features(features_path, raw=raw)
    graph = TemporalGraph()
    # insert in id order so file row order cannot reach float summation order
    for k in np.argsort(ids, kind="stable").tolist():
        graph.add_node(int(ids[k]), int(ts[k]))
    src, dst = read_edges(edges_path)
    edge_header = _has_header(edges_path)
    for i in np.lexsort((dst, src)).tolist():
        try:
            graph.add_edge(int(src[i]), int(dst[i]))
        except DataError as exc:
            raise DataError(f"{edges_path}:{_line_of(i, edge_header)}: {exc}") from None
    graph.finalize()
    classes = read_classes(classes_path)
    strays = [k for k in classes if k not in graph]
    if strays:
        raise DataError(f"{classes_path}: class given for unknown node id {strays[0]}")
    records = [LabeledRecord(n, t, classes.get(n)) for n, t in zip(ids.tolist(), ts.tolist())]
    records.sort(key=lambda r: r.node)
    logger.info("loaded %d nodes, %d edges, %d labeled", graph.node_count,
                graph.edge_count, sum(r.label is not None for r in records))
    return graph, attrs, records


def supervised(records: Sequence[LabeledRecord]) -> list[LabeledRecord]:
    """Labeled records ordered by (timestep, node id)."""
    return sorted((r for r in records if r.label is not None), key=lambda r: (r.t, r.node))


def normalize_config(config: str) -> str:
    c = config.upper().replace("+", "")
    if c not in FEATURE_CONFIGS:
        raise ConfigError(f"feature config must be one of T, G, T+G; got {config!r}")
    return c


def _assemble(config: str, matrices: Mapping[str, FeatureMatrix]) -> FeatureMatrix:
    needed = {"T": ["T"], "G": ["G"], "TG": ["T", "G"]}[config]
    missing = [k for k in needed if k not in matrices]
    if missing:
        raise ContractError(f"feature config {config} needs matrices {missing}")
    if len(needed) == 1:
        return matrices[needed[0]]
    t, g = matrices["T"], matrices["G"]
    clash = set(t.columns) & set(g.columns)
    if clash:
        raise ContractError(f"attribute and graph columns collide: {sorted(clash)}")
    g = g.take(g.rows_for(t.row_ids))
    return FeatureMatrix(t.row_ids, t.columns + g.columns,
                         np.hstack([t.values, g.values]), "hybrid", t.timesteps)


def make_splits(records: Sequence[LabeledRecord], matrices: Mapping[str, FeatureMatrix],
                spec: SplitSpec = SplitSpec(), config: str = "TG") -> SplitBundle:
    config = normalize_config(config)
    full = _assemble(config, matrices)
    routed: dict[str, list[LabeledRecord]] = {"train": [], "validation": [], "test": []}
    for r in supervised(records):
        name = spec.split_of(r.t)
        if name is not None:
            routed[name].append(r)
    parts = {}
    for name, recs in routed.items():
        if not recs:
            raise DataError(f"empty {name} split: no labeled rows with {spec.describe(name)}")
        ids = np.fromiter((r.node for r in recs), np.int64, len(recs))
        m = full.take(full.rows_for(ids))
        m.timesteps = np.fromiter((r.t for r in recs), np.int64, len(recs))
        parts[name] = Split(m, np.fromiter((r.label for r in recs), np.int64, len(recs)))
    cols = {p.matrix.columns for p in parts.values()}
    if len(cols) != 1:
        raise ContractError("column schema differs between splits")
    return SplitBundle(config, spec, parts["train"], parts["validation"], parts["test"])


def fraud_rate_by_timestep(records: Sequence[LabeledRecord]) -> dict[int, float]:
    """Illicit / labeled per timestep; timesteps with no labeled rows are omitted."""
    pos: dict[int, int] = {}
    tot: dict[int, int] = {}
    for r in records:
        if r.label is None:
            continue
        tot[r.t] = tot.get(r.t, 0) + 1
        pos[r.t] = pos.get(r.t, 0) + r.label
    return {t: pos[t] / tot[t] for t in sorted(tot)}


def period_rate(records: Sequence[LabeledRecord], lo: int, hi: int | None = None) -> float:
    """Pooled illicit rate over labeled records with lo <= t <= hi."""
    sel = [r.label for r in records
           if r.label is not None and r.t >= lo and (hi is None or r.t <= hi)]
    if not sel:
        raise DataError(f"no labeled records in [{lo}, {hi}]")
    return sum(sel) / len(sel)
