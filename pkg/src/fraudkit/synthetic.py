"""Small Elliptic-format datasets for tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def make_synthetic_elliptic(out_dir, n_steps: int = 12, nodes_per_step: int = 120,
                            n_attrs: int = 6, unknown_frac: float = 0.3,
                            cross_time_frac: float = 0.1, seed: int = 0,
                            raw: bool = False, separable: bool = False) -> dict[str, Path]:
    """Write features/edges/classes CSVs and return their paths.

    Column ``f_0`` carries most of the label signal; illicit nodes also get
    more edges so graph descriptors are weakly informative. The illicit
    rate decays over time. A fraction of edges point from a node to one in
    a later timestep, which is what the leakage audit detects.

    With ``separable`` the sign of ``f_0`` equals the label, with a gap of 1
    around zero, so a single split classifies every row.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = n_steps * nodes_per_step
    ids = rng.choice(10 * n, size=n, replace=False) + 1
    ts = np.repeat(np.arange(1, n_steps + 1), nodes_per_step)
    rate = np.linspace(0.2, 0.05, n_steps)[ts - 1]
    y = (rng.random(n) < rate).astype(int)
    known = rng.random(n) >= unknown_frac
    attrs = rng.normal(size=(n, n_attrs))
    attrs[:, 0] += 2.5 * y
    if n_attrs > 1:
        attrs[:, 1] += 0.8 * y
    if separable:
        attrs[:, 0] = np.where(y == 1, 1.0, -1.0) * (0.5 + np.abs(attrs[:, 0]))

    edges = set()
    for t in range(1, n_steps + 1):
        members = np.flatnonzero(ts == t)
        later = np.flatnonzero(ts > t)
        for i in members:
            k = rng.poisson(3.0 if y[i] else 1.2)
            for _ in range(k):
                if len(later) and rng.random() < cross_time_frac:
                    j = rng.choice(later)
                else:
                    j = rng.choice(members)
                if j != i:
                    edges.add((int(ids[i]), int(ids[j])))

    perm = rng.permutation(n)
    paths = {k: out / f"{k}.csv" for k in ("features", "edges", "classes")}
    with open(paths["features"], "w") as fh:
        if not raw:
            fh.write(",".join(["node_id", "time_step"] + [f"f_{j}" for j in range(n_attrs)]) + "\n")
        for i in perm:
            fh.write(",".join([str(ids[i]), str(ts[i])] + [repr(float(v)) for v in attrs[i]]) + "\n")
    with open(paths["edges"], "w") as fh:
        fh.write("src_id,dst_id\n")
        for s, d in sorted(edges):
            fh.write(f"{s},{d}\n")
    with open(paths["classes"], "w") as fh:
        fh.write("node_id,class\n")
        for i in perm:
            cls = ("1" if y[i] else "2") if known[i] else "unknown"
            fh.write(f"{ids[i]},{cls}\n")
    return paths
