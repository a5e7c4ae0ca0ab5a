"""Row-per-node numeric table with a named, ordered column schema."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from fraudkit.errors import ContractError, DataError


def schema_hash(columns: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(columns).encode()).hexdigest()


@dataclass
class FeatureMatrix:
    row_ids: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray
    provenance: str | None = None
    timesteps: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
        self.columns = tuple(self.columns)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            self.values = self.values.reshape(len(self.row_ids), len(self.columns))
        if self.values.shape != (len(self.row_ids), len(self.columns)):
            raise ContractError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.row_ids)} rows x {len(self.columns)} columns"
            )
        if len(set(self.columns)) != len(self.columns):
            dupes = sorted({c for c in self.columns if self.columns.count(c) > 1})
            raise ContractError(f"duplicate column names: {dupes}")
        if self.timesteps is not None:
            self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
            if len(self.timesteps) != len(self.row_ids):
                raise ContractError("timesteps length does not match row count")
        bad = ~np.isfinite(self.values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(
                f"non-finite value at row {int(self.row_ids[r])} column {self.columns[c]!r}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __len__(self):
        return len(self.row_ids)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise ContractError(f"unknown column {name!r}") from None

    def select(self, columns: Sequence[str]) -> "FeatureMatrix":
        missing = [c for c in columns if c not in self.columns]
        if missing:
            raise ContractError(f"missing columns: {missing}")
        pos = [self.columns.index(c) for c in columns]
        return FeatureMatrix(self.row_ids, tuple(columns), self.values[:, pos],
                             self.provenance, self.timesteps)

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        ts = None if self.timesteps is None else self.timesteps[rows]
        return FeatureMatrix(self.row_ids[rows], self.columns, self.values[rows],
                             self.provenance, ts)

    def rows_for(self, ids) -> np.ndarray:
        """Positions of ``ids`` within this matrix."""
        lookup = pd.Index(self.row_ids)
        pos = lookup.get_indexer(np.asarray(ids, dtype=np.int64))
        if (pos < 0).any():
            missing = np.asarray(ids)[pos < 0][:5].tolist()
            raise ContractError(f"row ids not in matrix: {missing}")
        return pos

    def fingerprint(self) -> dict:
        return {"columns": list(self.columns), "sha256": schema_hash(self.columns)}

    # -- serialization ----------------------------------------------------

    def to_csv(self, path, manifest: dict | None = None) -> Path:
        """Write ``node_id,<cols>`` CSV plus a ``.json`` sidecar manifest.

        Floats are written with ``repr`` so a round trip is exact.
        """
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("node_id",) + self.columns)
            for rid, row in zip(self.row_ids.tolist(), self.values.tolist()):
                w.writerow([rid] + [repr(v) for v in row])
        side = {
            "columns": list(self.columns),
            "provenance": self.provenance,
            "n_rows": len(self),
            "row_timesteps": None if self.timesteps is None else self.timesteps.tolist(),
        }
        if manifest:
            side.update(manifest)
        sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        path = Path(path)
        if not path.exists():
            raise DataError(f"{path}: no such file")
        df = pd.read_csv(path, float_precision="round_trip")
        if df.columns[0] != "node_id":
            raise DataError(f"{path}: first header field must be 'node_id'")
        side = {}
        if sidecar_path(path).exists():
            side = json.loads(sidecar_path(path).read_text())
        cols = tuple(df.columns[1:])
        if side.get("columns") and tuple(side["columns"]) != cols:
            raise ContractError(f"{path}: header disagrees with sidecar column order")
        ts = side.get("row_timesteps")
        return cls(df["node_id"].to_numpy(np.int64), cols,
                   df.iloc[:, 1:].to_numpy(np.float64), side.get("provenance"),
                   None if ts is None else np.asarray(ts))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")
