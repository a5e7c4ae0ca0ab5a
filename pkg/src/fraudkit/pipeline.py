"""End-to-end stages behind the CLI: extract, audit, train, evaluate.

Every stage writes its artifacts plus a ``manifest_<stage>.json`` listing each file
with a SHA-256 digest. Metric files contain no timings or paths, so two runs
with the same config and inputs produce byte-identical metric outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from fraudkit import __version__
from fraudkit import calibration as cal
from fraudkit import dataset as ds
from fraudkit import forest as rf
from fraudkit import graph_features as gf
from fraudkit import metrics as mt
from fraudkit.errors import ConfigError, ContractError, DataError
from fraudkit.matrix import FeatureMatrix

logger = logging.getLogger(__name__)

MODEL_FORMAT = "fraudkit-model/1"
VARIANTS = ("raw", "sigmoid", "isotonic")


@dataclass
class InputPaths:
    features: str | None = None
    edges: str | None = None
    classes: str | None = None
    raw_elliptic: bool = False
    # cached causal descriptor matrix from `extract`; recomputed when absent
    graph_features: str | None = None


@dataclass
class MetricOptions:
    n_bins: int = 10
    k_list: tuple[int, ...] = (50, 100, 200, 400)
    threshold_step: float = 0.01
    fixed_thresholds: tuple[float, ...] = (0.5, 0.8)
    objectives: tuple[str, ...] = ("max_f1", "min_recall:0.8", "min_precision:0.8")
    permutation_repeats: int = 5
    permutation_metric: str = "roc_auc"
    permutation_splits: tuple[str, ...] = ("test",)


@dataclass
class PipelineConfig:
    inputs: InputPaths = field(default_factory=InputPaths)
    split: ds.SplitSpec = field(default_factory=ds.SplitSpec)
    descriptors: gf.DescriptorSpec = field(default_factory=gf.DescriptorSpec)
    train: rf.TrainConfig = field(default_factory=rf.TrainConfig)
    calibration: str = "both"
    metrics: MetricOptions = field(default_factory=MetricOptions)
    output_dir: str = "out"
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.calibration not in ("none", "sigmoid", "isotonic", "both"):
            raise ConfigError("calibration must be none, sigmoid, isotonic or both")
        # the top-level seed is the single source for every RNG
        if self.train.seed != self.seed:
            self.train = replace(self.train, seed=self.seed)

    @property
    def calibrators(self) -> tuple[str, ...]:
        return {"none": (), "sigmoid": ("sigmoid",), "isotonic": ("isotonic",),
                "both": ("sigmoid", "isotonic")}[self.calibration]

    def to_dict(self) -> dict:
        return {
            "inputs": asdict(self.inputs),
            "split": self.split.to_dict(),
            "descriptors": self.descriptors.to_dict(),
            "train": self.train.to_dict(),
            "calibration": self.calibration,
            "metrics": {k: list(v) if isinstance(v, tuple) else v
                        for k, v in asdict(self.metrics).items()},
            "output_dir": self.output_dir,
            "seed": self.seed,
            "n_jobs": self.n_jobs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            metrics = {k: tuple(v) if isinstance(v, list) else v
                       for k, v in d.get("metrics", {}).items()}
            seed = d.get("seed", d.get("train", {}).get("seed", 0))
            return cls(
                inputs=InputPaths(**d.get("inputs", {})),
                split=ds.SplitSpec(**d.get("split", {})),
                descriptors=gf.DescriptorSpec(**d.get("descriptors", {})),
                train=rf.TrainConfig(**d.get("train", {})),
                calibration=d.get("calibration", "both"),
                metrics=MetricOptions(**metrics),
                output_dir=d.get("output_dir", "out"),
                seed=seed,
                n_jobs=d.get("n_jobs", 1),
            )
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"{p}: config file not found")
        try:
            return cls.from_dict(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None


# -- helpers -----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])
    return path


class RunManifest:
    def __init__(self, stage: str, config: dict):
        self.stage = stage
        self.config = config
        self.inputs: dict[str, str] = {}
        self.artifacts: list[Path] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def add_input(self, path) -> None:
        if path:
            self.inputs[str(path)] = sha256_file(path)

    def add(self, path) -> Path:
        self.artifacts.append(Path(path))
        return Path(path)

    def timed(self, name):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                manifest.timings[name] = round(time.perf_counter() - self.t, 3)

        return _Timer()

    def write(self, out_dir) -> Path:
        self.timings["total"] = round(time.perf_counter() - self._t0, 3)
        doc = {
            "stage": self.stage,
            "version": f"fraudkit {__version__}",
            "config": self.config,
            "inputs": self.inputs,
            "artifacts": {p.name if p.parent == Path(out_dir) else str(p): sha256_file(p)
                          for p in self.artifacts},
            "timings_s": self.timings,
        }
        return write_json(Path(out_dir) / f"manifest_{self.stage}.json", doc)


def _need_inputs(cfg: PipelineConfig):
    missing = [k for k in ("features", "edges", "classes") if not getattr(cfg.inputs, k)]
    if missing:
        raise ConfigError(f"missing input paths: {missing}")


def load_inputs(cfg: PipelineConfig):
    _need_inputs(cfg)
    i = cfg.inputs
    return ds.load_elliptic(i.features, i.edges, i.classes, raw=i.raw_elliptic)


def causal_matrix(cfg: PipelineConfig, graph) -> FeatureMatrix:
    path = cfg.inputs.graph_features
    if path:
        m = FeatureMatrix.from_csv(path)
        if m.columns != cfg.descriptors.names:
            raise ContractError(
                f"{path}: columns {list(m.columns)} do not match descriptor spec "
                f"{list(cfg.descriptors.names)}"
            )
        if m.provenance != "causal":
            raise ContractError(f"{path}: provenance is {m.provenance!r}, expected 'causal'")
        return m
    return gf.extract_causal(graph, cfg.descriptors, n_jobs=cfg.n_jobs)


def build_bundle(cfg: PipelineConfig, feature_config: str, loaded=None):
    graph, attrs, records = loaded if loaded is not None else load_inputs(cfg)
    feature_config = ds.normalize_config(feature_config)
    matrices = {"T": attrs}
    if feature_config in ("G", "TG"):
        matrices["G"] = causal_matrix(cfg, graph)
    return ds.make_splits(records, matrices, cfg.split, feature_config), records


# -- stages ------------------------------------------------------------------


def run_extract(cfg: PipelineConfig, mode: str = "causal", out_dir=None) -> dict[str, Path]:
    if mode not in ("causal", "full", "both"):
        raise ConfigError("mode must be causal, full or both")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("extract", cfg.to_dict())
    for k in ("features", "edges", "classes"):
        man.add_input(getattr(cfg.inputs, k))
    with man.timed("ingest"):
        graph, _, _ = load_inputs(cfg)
    side = {"descriptor_spec": cfg.descriptors.to_dict(),
            "self_loops_dropped": graph.self_loop_warnings,
            "duplicate_edges_dropped": graph.duplicate_edges}
    paths = {}
    if mode in ("causal", "both"):
        with man.timed("causal"):
            m = gf.extract_causal(graph, cfg.descriptors, n_jobs=cfg.n_jobs)
        paths["causal"] = man.add(m.to_csv(out / "causal.csv", side))
        man.add(out / "causal.json")
    if mode in ("full", "both"):
        with man.timed("full"):
            m = gf.extract_full(graph, cfg.descriptors)
        paths["full"] = man.add(m.to_csv(out / "full.csv", side))
        man.add(out / "full.json")
    man.write(out)
    return paths


def run_audit(causal_path, full_path, tol: float, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("audit", {"causal": str(causal_path), "full": str(full_path), "tol": tol})
    man.add_input(causal_path)
    man.add_input(full_path)
    report = gf.leakage_audit(FeatureMatrix.from_csv(causal_path),
                              FeatureMatrix.from_csv(full_path), tol)
    cols = man.add(write_rows(
        out / "leakage_columns.csv", ("column", "frac_differing", "mean_abs_diff"),
        [(r["column"], r["frac_differing"], r["mean_abs_diff"]) for r in report.column_rows()]))
    steps = man.add(write_rows(
        out / "leakage_by_timestep.csv",
        ("timestep", "column", "n_rows", "frac_differing", "mean_abs_diff"),
        [(r["timestep"], r["column"], r["n_rows"], r["frac_differing"], r["mean_abs_diff"])
         for r in report.timestep_rows()]))
    man.write(out)
    return {"columns": cols, "by_timestep": steps}


def _scalar_summary(scores, labels) -> dict:
    return {
        "n": int(len(labels)),
        "n_illicit": int(np.sum(labels)),
        "roc_auc": mt.roc_auc(scores, labels),
        "average_precision": mt.average_precision(scores, labels),
        "brier": cal.brier_score(scores, labels),
    }


def _select_thresholds(scores, labels, objectives) -> dict:
    out = {}
    for obj in objectives:
        try:
            out[obj] = mt.select_threshold(scores, labels, obj)
        except ContractError as exc:
            logger.warning("threshold objective %s infeasible: %s", obj, exc)
            out[obj] = None
    return out


def run_train(cfg: PipelineConfig, feature_config: str, out_dir=None, loaded=None) -> Path:
    """Fit on train, calibrate and pick thresholds on validation only."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("train", cfg.to_dict() | {"feature_config": feature_config})
    for k in ("features", "edges", "classes", "graph_features"):
        man.add_input(getattr(cfg.inputs, k))
    with man.timed("assemble"):
        bundle, _ = build_bundle(cfg, feature_config, loaded)
    with man.timed("fit"):
        model = rf.fit(bundle.train.matrix, bundle.train.labels, cfg.train, n_jobs=cfg.n_jobs)
    val = bundle.validation
    raw = model.predict_proba(val.matrix)
    calibrators = {m: cal.fit_calibrator(m, raw, val.labels) for m in cfg.calibrators}
    variants = {"raw": raw} | {m: c.apply(raw) for m, c in calibrators.items()}
    thresholds = {v: _select_thresholds(s, val.labels, cfg.metrics.objectives)
                  for v, s in variants.items()}
    val_metrics = {v: _scalar_summary(s, val.labels) for v, s in variants.items()}
    doc = {
        "format": MODEL_FORMAT,
        "feature_config": bundle.feature_config,
        "split": cfg.split.to_dict(),
        "descriptors": cfg.descriptors.to_dict(),
        "forest": model.to_dict(),
        "calibrators": {m: c.to_dict() for m, c in calibrators.items()},
        "thresholds": thresholds,
        "validation_metrics": val_metrics,
        "train_counts": dict(zip(("licit", "illicit"), bundle.train.counts())),
    }
    path = out / "model.json"
    path.write_text(json.dumps(doc, sort_keys=True))
    man.add(path)
    man.add(write_json(out / "validation_metrics.json",
                       {"feature_config": bundle.feature_config, "validation": val_metrics,
                        "thresholds": thresholds}))
    man.write(out)
    return path


def load_model(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{p}: model file not found")
    doc = json.loads(p.read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ContractError(f"{p}: unsupported model format {doc.get('format')!r}")
    doc["forest"] = rf.ForestModel.from_dict(doc["forest"])
    doc["calibrators"] = {k: cal.calibrator_from_dict(v) for k, v in doc["calibrators"].items()}
    return doc


def run_evaluate(cfg: PipelineConfig, model_path, out_dir=None, loaded=None,
                 variants: tuple[str, ...] | None = None) -> dict:
    """Score validation and test with a trained model and write the report.

    Calibrators and thresholds come from the model file; nothing here is fit
    on test labels.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("evaluate", cfg.to_dict() | {"model": str(model_path)})
    man.add_input(model_path)
    for k in ("features", "edges", "classes", "graph_features"):
        man.add_input(getattr(cfg.inputs, k))
    doc = load_model(model_path)
    model: rf.ForestModel = doc["forest"]
    if ds.SplitSpec(**doc["split"]) != cfg.split:
        raise ContractError("model was trained under a different split spec")
    if loaded is None:
        loaded = load_inputs(cfg)
    bundle, records = build_bundle(cfg, doc["feature_config"], loaded)
    if bundle.columns != model.columns:
        raise ContractError("assembled matrices do not match the model schema")
    wanted = variants or ("raw",) + tuple(doc["calibrators"])
    missing = [v for v in wanted if v != "raw" and v not in doc["calibrators"]]
    if missing:
        raise ContractError(f"model has no calibrator for {missing}")

    mo = cfg.metrics
    grid = mt.default_grid(mo.threshold_step)
    summary: dict = {"feature_config": bundle.feature_config, "splits": {}}
    for split_name in ("validation", "test"):
        part = getattr(bundle, split_name)
        y = part.labels
        ids = part.matrix.row_ids
        with man.timed(f"score_{split_name}"):
            raw = model.predict_proba(part.matrix)
        split_out = {}
        for v in wanted:
            s = raw if v == "raw" else doc["calibrators"][v].apply(raw)
            tag = f"{split_name}_{v}"
            entry = _scalar_summary(s, y)
            cms = {f"fixed_{t}": mt.confusion_at(s, y, t).to_dict() for t in mo.fixed_thresholds}
            for obj, thr in doc["thresholds"].get(v, {}).items():
                if thr is not None:
                    cms[f"selected_{obj}"] = mt.confusion_at(s, y, thr).to_dict() | {"objective": obj}
            entry["confusion"] = cms
            entry["precision_at_k"] = {str(k): mt.precision_at_k(s, y, k, ids)
                                       for k in mo.k_list if k <= len(y)}
            rel = cal.reliability_table(s, y, mo.n_bins)
            entry["reliability_max_gap"] = rel.max_gap()
            split_out[v] = entry
            roc = mt.roc_curve(s, y)
            roc.to_csv(out / f"roc_{tag}.csv")
            mt.pr_curve(s, y).to_csv(out / f"pr_{tag}.csv")
            mt.threshold_sweep(s, y, grid).to_csv(out / f"threshold_sweep_{tag}.csv")
            rel.to_csv(out / f"reliability_{tag}.csv")
            for kind in ("roc", "pr", "threshold_sweep", "reliability"):
                man.add(out / f"{kind}_{tag}.csv")
        summary["splits"][split_name] = split_out

    for split_name in mo.permutation_splits:
        part = getattr(bundle, split_name)
        with man.timed(f"permutation_{split_name}"):
            imp = rf.permutation_importance(model, part.matrix, part.labels,
                                            mo.permutation_metric, mo.permutation_repeats,
                                            cfg.seed)
        ranked = sorted(imp.items(), key=lambda kv: (-kv[1][0], kv[0]))
        man.add(write_rows(out / f"permutation_importance_{split_name}.csv",
                           ("column", "mean_drop", "std"),
                           [(c, m, s) for c, (m, s) in ranked]))

    rates = ds.fraud_rate_by_timestep(records)
    man.add(write_rows(out / "fraud_rate_by_timestep.csv", ("timestep", "illicit_rate"),
                       list(rates.items())))
    corr_rows = []
    for split_name, part in bundle.splits().items():
        for c, r in mt.feature_label_correlation(part.matrix, part.labels).items():
            corr_rows.append((split_name, c, r, "zero variance" if r is None else ""))
    man.add(write_rows(out / "feature_label_correlation.csv",
                       ("split", "column", "pearson_r", "note"), corr_rows))
    summary["split_counts"] = {n: dict(zip(("licit", "illicit"), p.counts()))
                               for n, p in bundle.splits().items()}
    summary["thresholds"] = doc["thresholds"]
    summary["precision_at_k_note"] = "K values are artifact defaults, not taken from the source study"
    man.add(write_json(out / "summary.json", summary))
    man.write(out)
    return summary
