"""Config-driven multi-trial experiments and their reports.

A config is a YAML mapping (schema in ``README.md``). Trial ``t`` uses seed
``seed + t``; every method draws its anchors from a seed derived from the
trial seed and the method name, so adding or removing a method never
changes the numbers of another.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import platform
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .anchor import AnchorSpec
from .datasets import (LabeledDataset, apply_norm, fit_norm, generate_artificial,
                       holdout_split, kfold_split, load_csv, make_partition)
from .metrics import accuracy, aggregate, amd, emd, nmi
from .models import top_features, tree_fit
from .protocol import ModelSpec, resolve_dims, run_dc_pipeline

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """The experiment config is malformed or inconsistent with the data."""


BASE_METHODS = ("Centralized", "Local", "DC(raw)", "DC(rand)", "DC(TSVD)", "DC(SMOTE)")
METRICS = ("NMI", "ACC", "Dice", "EMD", "AMD(raw)", "AMD(anc)")
ANCHOR_METRICS = ("EMD", "AMD(raw)", "AMD(anc)")


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    source: str = "artificial"
    n_train: int = 1000
    n_test: int = 1000
    public: int = 100
    path: str | None = None
    label_column: str | None = None
    categorical_columns: tuple = ()
    split: str = "holdout"
    test_fraction: float = 0.25
    folds: int = 5
    standardize: bool = False


@dataclass(frozen=True)
class PartitionConfig:
    c: int = 2
    d: int = 2
    rows: str = "random-equal"
    cols: str = "interleaved"
    col_groups: tuple | None = None


@dataclass(frozen=True)
class ReductionConfig:
    dim: object = 5
    collab_dim: int | None = None


@dataclass(frozen=True)
class TsvdConfig:
    rank: object = 3
    delta: float = 0.05


@dataclass(frozen=True)
class SmoteConfig:
    k: int = 25
    alpha: float = 1.5


@dataclass(frozen=True)
class AnchorConfig:
    r: int = 1000
    tsvd: TsvdConfig = TsvdConfig()
    smote: SmoteConfig = SmoteConfig()


@dataclass(frozen=True)
class ModelConfig:
    ridge_lambda: float = 1.0
    max_splits: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = DatasetConfig()
    partition: PartitionConfig = PartitionConfig()
    reduction: ReductionConfig = ReductionConfig()
    anchors: AnchorConfig = AnchorConfig()
    models: ModelConfig = ModelConfig()
    methods: tuple = BASE_METHODS
    metrics: tuple = ("NMI", "ACC", "Dice", "AMD(raw)", "AMD(anc)")
    dice_t: int = 3
    trials: int = 20
    seed: int = 0
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def method_names(self) -> list[str]:
        """Configured methods, with DC(TSVD) expanded when several ranks are given."""
        ranks = self.anchors.tsvd.rank
        out = []
        for m in self.methods:
            if m == "DC(TSVD)" and isinstance(ranks, (list, tuple)):
                out.extend(f"DC(TSVD) rank={k}" for k in ranks)
            else:
                out.append(m)
        return out


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls) if f.name != "raw"}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, f"{where}.{name}".lstrip("."))
        elif isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def parse_config(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    object.__setattr__(cfg, "raw", copy.deepcopy(data))
    _check_static(cfg)
    return cfg


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    cfg = parse_config(data)
    if cfg.dataset.source == "csv" and cfg.dataset.path and not Path(cfg.dataset.path).is_absolute():
        resolved = (path.parent / cfg.dataset.path).resolve()
        object.__setattr__(cfg, "dataset",
                           DatasetConfig(**{**cfg.dataset.__dict__, "path": str(resolved)}))
    return cfg


def _check_static(cfg: ExperimentConfig):
    ds = cfg.dataset
    if ds.source not in ("artificial", "csv"):
        raise ConfigError(f"dataset.source must be 'artificial' or 'csv', got {ds.source!r}")
    if ds.source == "csv" and (not ds.path or not ds.label_column):
        raise ConfigError("csv datasets need dataset.path and dataset.label_column")
    if ds.split not in ("holdout", "kfold"):
        raise ConfigError(f"dataset.split must be 'holdout' or 'kfold', got {ds.split!r}")
    if ds.public < 2:
        raise ConfigError("dataset.public must be >= 2")
    for m in cfg.methods:
        if m not in BASE_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(BASE_METHODS)}")
    if not cfg.methods:
        raise ConfigError("no methods configured")
    for m in cfg.metrics:
        if m not in METRICS:
            raise ConfigError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
    if cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    if cfg.dice_t < 1:
        raise ConfigError("dice_t must be >= 1")
    if cfg.anchors.r < 1:
        raise ConfigError("anchors.r must be >= 1")
    if cfg.anchors.smote.alpha <= 0 or cfg.anchors.smote.k < 1:
        raise ConfigError("anchors.smote needs k >= 1 and alpha > 0")
    if cfg.models.ridge_lambda <= 0 or cfg.models.max_splits < 0:
        raise ConfigError("models needs ridge_lambda > 0 and max_splits >= 0")
    dim = cfg.reduction.dim
    if not (dim == "m_j-1" or (isinstance(dim, int) and dim >= 1)):
        raise ConfigError("reduction.dim must be a positive integer or 'm_j-1'")


def load_dataset(cfg: ExperimentConfig):
    """Full dataset for CSV sources, ``None`` for generated data."""
    ds = cfg.dataset
    if ds.source == "artificial":
        return None
    try:
        return load_csv(ds.path, ds.label_column, ds.categorical_columns)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def validate(cfg: ExperimentConfig, data=None):
    """Data-dependent checks: columns exist, partitions fit, widths reduce."""
    data = data if data is not None else load_dataset(cfg)
    if data is None:
        n, m = cfg.dataset.n_train, 20
    else:
        n = data.n - cfg.dataset.public - max(1, int(round(data.n * cfg.dataset.test_fraction)))
        if cfg.dataset.split == "kfold":
            n = data.n - data.n // cfg.dataset.folds - cfg.dataset.public - 1
        m = data.m
    try:
        plan = make_partition(n, m, cfg.partition.c, cfg.partition.d, cfg.partition.rows,
                              cfg.partition.cols, 0, cfg.partition.col_groups)
        widths = resolve_dims(plan, cfg.reduction.dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    m_tilde = min(sum(widths[(i, j)] for j in range(plan.d)) for i in range(plan.c))
    if cfg.reduction.collab_dim is not None and not 1 <= cfg.reduction.collab_dim <= m_tilde:
        raise ConfigError(f"reduction.collab_dim must be in [1, {m_tilde}]")
    if "Dice" in cfg.metrics and cfg.dice_t > m:
        raise ConfigError(f"dice_t={cfg.dice_t} exceeds feature count {m}")
    ranks = cfg.anchors.tsvd.rank
    for k in ranks if isinstance(ranks, (list, tuple)) else [ranks]:
        smallest = min(min(g.size for g in plan.row_groups), min(g.size for g in plan.col_groups))
        if any(m.startswith("DC(TSVD)") for m in cfg.methods) and not 1 <= k <= smallest:
            raise ConfigError(f"tsvd rank {k} must be in [1, {smallest}]")
    return plan


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def derive_seed(trial_seed: int, label: str) -> int:
    ss = np.random.SeedSequence([trial_seed, zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def _trial_data(cfg: ExperimentConfig, data: LabeledDataset | None, trial: int, seed: int):
    ds = cfg.dataset
    if data is None:
        return generate_artificial(ds.n_train, ds.n_test, ds.public, seed)
    if ds.split == "kfold":
        tr, te, pub = kfold_split(data.n, ds.folds, trial, ds.public, cfg.seed)
    else:
        tr, te, pub = holdout_split(data.n, ds.test_fraction, ds.public, seed)
    train, test, X_pub = data.subset(tr), data.subset(te), data.X[pub]
    if ds.standardize:
        stats = fit_norm(train.X)
        train = LabeledDataset(apply_norm(stats, train.X), train.y, train.class_count,
                               train.col_names, train.class_names)
        test = LabeledDataset(apply_norm(stats, test.X), test.y, test.class_count,
                              test.col_names, test.class_names)
        X_pub = apply_norm(stats, X_pub)
    return train, test, X_pub


def _anchor_spec(cfg: ExperimentConfig, method: str, seed: int, n: int) -> AnchorSpec:
    a = cfg.anchors
    if method == "DC(raw)":
        r = a.r
        if r > n:
            log.warning("DC(raw): r=%d exceeds training rows %d; using all rows", r, n)
            r = n
        return AnchorSpec("raw", r=r, seed=seed)
    if method == "DC(rand)":
        return AnchorSpec("random", r=a.r, seed=seed)
    if method == "DC(SMOTE)":
        return AnchorSpec("smote", r=a.r, k=a.smote.k, alpha=a.smote.alpha, seed=seed)
    rank = a.tsvd.rank
    if method.startswith("DC(TSVD) rank="):
        rank = int(method.split("=", 1)[1])
    return AnchorSpec("tsvd", r=a.r, tsvd_rank=rank, delta=a.tsvd.delta, seed=seed)


def _score(cfg, model, X_test, y_test, importances, F_star, col_map=None):
    pred = model.predict(X_test)
    out = {}
    if "NMI" in cfg.metrics:
        out["NMI"] = nmi(pred, y_test)
    if "ACC" in cfg.metrics:
        out["ACC"] = accuracy(y_test, pred)
    if "Dice" in cfg.metrics:
        t = cfg.dice_t
        local = top_features(importances, min(t, importances.size))
        F_pred = [int(col_map[f]) for f in local] if col_map is not None else local
        out["Dice"] = len(set(F_star) & set(F_pred)) / t
    return out


def _mean_dicts(dicts):
    return {k: float(np.mean([d[k] for d in dicts])) for k in dicts[0]}


def run_trial(cfg: ExperimentConfig, trial: int, data=None) -> tuple[list[dict], dict]:
    """All configured methods for one trial: ``(records, timings)``."""
    seed = cfg.seed + trial
    train, test, X_pub = _trial_data(cfg, data, trial, seed)
    plan = make_partition(train.n, train.m, cfg.partition.c, cfg.partition.d,
                          cfg.partition.rows, cfg.partition.cols,
                          derive_seed(seed, "partition"), cfg.partition.col_groups)
    spec = ModelSpec(cfg.models.ridge_lambda, cfg.models.max_splits)
    central = tree_fit(train.X, train.y, spec.max_splits, train.class_count)
    F_star = top_features(central.importances, cfg.dice_t)

    records, timings = [], {}
    for method in cfg.method_names():
        t0 = time.perf_counter()
        rec = {"trial": trial, "seed": seed, "method": method, "metrics": {}, "error": None}
        try:
            if method == "Centralized":
                rec["metrics"] = _score(cfg, central, test.X, test.y, central.importances, F_star)
            elif method == "Local":
                per_party = []
                for i, j in plan.parties():
                    cols = plan.col_groups[j]
                    local = tree_fit(plan.block(train.X, i, j), train.y[plan.row_groups[i]],
                                     spec.max_splits, train.class_count)
                    per_party.append(_score(cfg, local, test.X[:, cols], test.y,
                                            local.importances, F_star, cols))
                rec["metrics"] = _mean_dicts(per_party)
            else:
                aspec = _anchor_spec(cfg, method, derive_seed(seed, method), train.n)
                res = run_dc_pipeline(train, plan, aspec, cfg.reduction.dim, spec,
                                      cfg.reduction.collab_dim, X_pub)
                per_party = [_score(cfg, t, test.X, test.y, t.importances, F_star)
                             for _, t in sorted(res.models.items())]
                metrics = _mean_dicts(per_party)
                if "EMD" in cfg.metrics:
                    metrics["EMD"] = emd(train.X, res.anchor, seed)
                if "AMD(raw)" in cfg.metrics:
                    metrics["AMD(raw)"] = amd(train.X, res.anchor)
                if "AMD(anc)" in cfg.metrics:
                    metrics["AMD(anc)"] = amd(res.anchor, train.X)
                rec["metrics"] = metrics
                rec["diagnostics"] = {
                    "anchor_disagreement": res.diagnostics["anchor_disagreement"],
                    "pseudo_label_agreement": res.diagnostics["pseudo_label_agreement"],
                }
        except Exception as exc:  # one failing method must not sink the others
            log.exception("trial %d, %s failed", trial, method)
            rec["error"] = f"{type(exc).__name__}: {exc}"
        timings[method] = time.perf_counter() - t0
        records.append(rec)
    return records, timings


@dataclass
class ExperimentReport:
    config: dict
    methods: list
    metrics: list
    trials: list
    summary: dict
    notes: dict
    versions: dict
    timings: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        """The deterministic part of the report (timings are kept apart)."""
        return {
            "config": self.config,
            "methods": self.methods,
            "metrics": self.metrics,
            "trials": self.trials,
            "summary": self.summary,
            "notes": self.notes,
            "versions": self.versions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["config"], d["methods"], d["metrics"], d["trials"], d["summary"],
                   d["notes"], d["versions"])

    def mean(self, method, metric) -> float:
        return self.summary[method][metric]["mean"]


NOTES = {
    "seed_rule": "trial t uses seed + t; anchors use a seed derived from (trial seed, method name)",
    "importance": "tree impurity-decrease importance; ties broken by lower feature index",
    "local_aggregation": "Local metrics are the mean over all c*d party models",
    "dc_aggregation": "DC metrics are the mean over the c row-party interpretable models",
    "pca": "features centered, not scaled",
    "emd": "unequal row counts are subsampled to the smaller size with the trial seed",
    "amd": "raw units",
}


def summarize(records, methods, metrics) -> dict:
    summary = {}
    for method in methods:
        rows = [r for r in records if r["method"] == method]
        entry = {}
        for metric in metrics:
            vals = [r["metrics"][metric] for r in rows if metric in r["metrics"]]
            if vals:
                mean, se = aggregate(vals)
                entry[metric] = {"mean": mean, "se": se, "n": len(vals)}
        entry["failures"] = sum(r["error"] is not None for r in rows)
        summary[method] = entry
    return summary


def _run_one(args):
    cfg, trial, data = args
    return run_trial(cfg, trial, data)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    data = load_dataset(cfg)
    validate(cfg, data)
    work = [(cfg, t, data) for t in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    records = [rec for recs, _ in results for rec in recs]
    timings = {str(t): tm for t, (_, tm) in enumerate(results)}
    methods = cfg.method_names()
    notes = dict(NOTES, ridge_lambda=cfg.models.ridge_lambda)
    return ExperimentReport(
        config=copy.deepcopy(cfg.raw),
        methods=methods,
        metrics=list(cfg.metrics),
        trials=records,
        summary=summarize(records, methods, cfg.metrics),
        notes=notes,
        versions={"dcsmote": __version__, "numpy": np.__version__,
                  "python": platform.python_version()},
        timings=timings,
    )


def run_sweep(cfg: ExperimentConfig, k_grid, alpha_grid, jobs: int = 1) -> np.ndarray:
    """Mean DC(SMOTE) accuracy for every ``(k, alpha)`` pair, shape ``(len(k), len(alpha))``."""
    if not k_grid or not alpha_grid:
        raise ConfigError("sweep grids must be non-empty")
    out = np.zeros((len(k_grid), len(alpha_grid)))
    for a, k in enumerate(k_grid):
        if k > cfg.dataset.public - 1:
            log.warning("k=%d exceeds p-1=%d and will be clamped", k, cfg.dataset.public - 1)
        for b, alpha in enumerate(alpha_grid):
            raw = copy.deepcopy(cfg.raw)
            raw["methods"] = ["DC(SMOTE)"]
            raw["metrics"] = ["ACC"]
            raw.setdefault("anchors", {}).setdefault("smote", {})
            raw["anchors"]["smote"].update({"k": int(k), "alpha": float(alpha)})
            sub = parse_config(raw)
            if sub.dataset.path != cfg.dataset.path:
                object.__setattr__(sub, "dataset", cfg.dataset)
            out[a, b] = run_experiment(sub, jobs).mean("DC(SMOTE)", "ACC")
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

TRIAL_COLUMNS = ("trial", "seed", "method", *METRICS, "error")


def trials_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["trial", "seed", "method", *report.metrics, "error"]
    w.writerow(cols)
    for rec in report.trials:
        w.writerow([rec["trial"], rec["seed"], rec["method"],
                    *[_fmt(rec["metrics"].get(m)) for m in report.metrics],
                    rec["error"] or ""])
    return buf.getvalue()


def summary_csv(report: ExperimentReport) -> str:
    """One row per method; each metric appears as ``mean +- se``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *report.metrics])
    for method in report.methods:
        entry = report.summary[method]
        w.writerow([method, *[
            f"{entry[m]['mean']:.2f}+-{entry[m]['se']:.2f}" if m in entry else ""
            for m in report.metrics]])
    return buf.getvalue()


def _fmt(v):
    return "" if v is None else repr(float(v))


def format_table(report: ExperimentReport) -> str:
    width = max(len(m) for m in report.methods) + 2
    head = "Method".ljust(width) + "".join(m.center(14) for m in report.metrics)
    lines = [head, "-" * len(head)]
    for method in report.methods:
        entry = report.summary[method]
        cells = [f"{entry[m]['mean']:.2f}±{entry[m]['se']:.2f}" if m in entry else ""
                 for m in report.metrics]
        lines.append(method.ljust(width) + "".join(c.center(14) for c in cells))
    return "\n".join(lines)


def emit_report(report: ExperimentReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trials": out / "trials.csv",
        "summary": out / "summary.csv",
        "report": out / "report.json",
        "timings": out / "timings.json",
    }
    paths["trials"].write_text(trials_csv(report), encoding="utf-8")
    paths["summary"].write_text(summary_csv(report), encoding="utf-8")
    paths["report"].write_text(report.to_json(), encoding="utf-8")
    paths["timings"].write_text(json.dumps(report.timings, indent=2) + "\n", encoding="utf-8")
    return paths


def read_report(path) -> ExperimentReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return ExperimentReport.from_dict(json.loads(path.read_text(encoding="utf-8")))


def sweep_csv(grid, k_grid, alpha_grid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k\\alpha", *[repr(float(a)) for a in alpha_grid]])
    for k, row in zip(k_grid, grid):
        w.writerow([int(k), *[repr(float(v)) for v in row]])
    return buf.getvalue()
