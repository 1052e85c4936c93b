"""Experiment orchestration: config files, sweeps, artifacts, summaries.

An experiment is a dataset source, one model architecture, a lambda grid,
and a list of seeds, applied once per requested monotonic feature set.
Every (feature set, lambda, seed) training run leaves a canonical JSON
report plus a per-epoch CSV under the output directory; the summary table
is a pure function of those reports and can be rebuilt byte-identically
from disk.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    SyntheticConfig,
    apply_normalization,
    generate_synthetic,
    load_csv,
    minmax_normalize,
    train_test_split,
    write_csv,
)
from .errors import (
    ComplianceUndefined,
    ConfigError,
    DataError,
    ParameterError,
)
from .models import ModelConfig, build_model, save_model
from .penalty import (
    COMPLIANCE_ATOL,
    MonotonicitySpec,
    adjacent_violations,
    compliance_score,
    fit_linear_baseline,
    monotonicity_penalty,
    sort_by_predictions,
)
from .training import (
    LAMBDA_GRID_DEFAULT,
    RunReport,
    TrainConfig,
    evaluate,
    lambda_grid_search,
    report_from_json,
    report_to_json,
    select_lambda,
    train,
)

log = logging.getLogger(__name__)

TABLE_DECIMALS = 5

SUMMARY_HEADER = ("features", "model", "baseline_mse", "best_mse",
                  "best_lambda", "drop_mse_pct", "drop_mae_pct",
                  "drop_mape_pct")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment description.

    ``dataset`` is either {"synthetic": {...SyntheticConfig keys...}} or
    {"csv": {"path", "target", "monotonic"}}. ``monotonic_sets`` of None
    means one single-feature row per monotonic feature of the dataset.
    """

    dataset: dict = field(default_factory=lambda: {"synthetic": {}})
    model: dict = field(default_factory=lambda: {"architecture": "mlp3"})
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: tuple[float, ...] = LAMBDA_GRID_DEFAULT
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    monotonic_sets: tuple[tuple[str, ...], ...] | None = None
    output_dir: str = "runs"
    train_frac: float = 0.8
    norm_fit_on_train: bool = False
    validate_on_test: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any(lam < 0 for lam in self.grid):
            raise ConfigError(f"grid values must be >= 0, got {self.grid}")
        if set(self.dataset) - {"synthetic", "csv"} or len(self.dataset) != 1:
            raise ConfigError(
                f"dataset must have exactly one of 'synthetic' or 'csv' "
                f"keys, got {sorted(self.dataset)}")
        if "csv" in self.dataset:
            path = self.dataset["csv"].get("path")
            if not path or not Path(path).exists():
                raise ConfigError(f"csv dataset path {path!r} does not exist")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError(
                f"train_frac must be in (0, 1), got {self.train_frac}")
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.monotonic_sets is not None:
            sets = tuple(tuple(str(n) for n in names)
                         for names in self.monotonic_sets)
            if not sets or any(not s for s in sets):
                raise ConfigError("monotonic_sets must be non-empty name lists")
            object.__setattr__(self, "monotonic_sets", sets)


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from parsed JSON, applying defaults for absent keys."""
    known = {"dataset", "model", "train", "grid", "seeds", "monotonic_sets",
             "output_dir", "train_frac", "norm_fit_on_train",
             "validate_on_test"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "train" in kwargs:
        try:
            kwargs["train"] = TrainConfig(**kwargs["train"])
        except TypeError as exc:
            raise ConfigError(f"bad train section: {exc}") from exc
    if "grid" in kwargs:
        kwargs["grid"] = tuple(kwargs["grid"])
    if "seeds" in kwargs:
        kwargs["seeds"] = tuple(kwargs["seeds"])
    if kwargs.get("monotonic_sets") is not None:
        kwargs["monotonic_sets"] = tuple(tuple(s) for s in kwargs["monotonic_sets"])
    return ExperimentConfig(**kwargs)


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return experiment_config_from_dict(raw)


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["grid"] = list(cfg.grid)
    out["seeds"] = list(cfg.seeds)
    if cfg.monotonic_sets is not None:
        out["monotonic_sets"] = [list(s) for s in cfg.monotonic_sets]
    return out


def resolve_dataset(cfg: ExperimentConfig) -> Dataset:
    if "synthetic" in cfg.dataset:
        try:
            synth = SyntheticConfig(**cfg.dataset["synthetic"])
        except TypeError as exc:
            raise ConfigError(f"bad synthetic section: {exc}") from exc
        return generate_synthetic(synth)
    spec = cfg.dataset["csv"]
    return load_csv(spec["path"], spec["target"],
                    monotonic_columns=tuple(spec.get("monotonic", ())))


def build_model_config(cfg: ExperimentConfig, input_dim: int) -> ModelConfig:
    raw = dict(cfg.model)
    unknown = set(raw) - {"architecture", "hidden_sizes", "dropout_rate", "seed"}
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    return ModelConfig(
        architecture=raw.get("architecture", "mlp3"),
        input_dim=input_dim,
        hidden_sizes=tuple(raw.get("hidden_sizes") or ()),
        dropout_rate=raw.get("dropout_rate", -1.0),
        seed=int(raw.get("seed", 0)),
    )


def with_monotonic_names(ds: Dataset, names) -> Dataset:
    missing = [n for n in names if n not in ds.feature_names]
    if missing:
        raise ConfigError(
            f"monotonic names {missing} not among features {list(ds.feature_names)}")
    spec = MonotonicitySpec(ds.feature_names.index(n) for n in names)
    return replace(ds, monotonic=spec)


def run_label(names) -> str:
    return "+".join(names)


# ---------------------------------------------------------------- summary

@dataclass(frozen=True)
class SummaryRow:
    features: str
    model: str
    baseline_mse: float
    best_mse: float
    best_lambda: float
    drop_mse_pct: float
    drop_mae_pct: float
    drop_mape_pct: float


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[SummaryRow, ...]


def percent_drop(baseline: float, best: float) -> float:
    """Relative improvement in percent; negative means worsening."""
    if baseline <= 0:
        raise ParameterError(f"baseline must be > 0, got {baseline}")
    return 100.0 * (baseline - best) / baseline


def _median_by_lambda(reports, metric) -> dict[float, float]:
    by_lam: dict[float, list[float]] = {}
    for r in reports:
        if r.error is None and r.test_metrics is not None:
            by_lam.setdefault(r.lam, []).append(getattr(r.test_metrics, metric))
    return {lam: float(np.median(vals)) for lam, vals in sorted(by_lam.items())}


def summarize_row(label: str, model_name: str, reports) -> SummaryRow:
    """Aggregate one sweep into a table row.

    Per-lambda test metrics are medianed across seeds. Each %drop column
    compares the lambda=0 baseline against the best lambda>0 value of its
    own metric (the per-metric best, so columns may come from different
    lambdas); best_lambda reports the MSE winner. A baseline-only grid
    yields zero drops by definition.
    """
    med_mse = _median_by_lambda(reports, "mse")
    if 0.0 not in med_mse:
        raise DataError(f"row {label!r}: no successful baseline (lambda=0) runs")
    baseline_mse = med_mse[0.0]
    positive = [lam for lam in med_mse if lam > 0.0]
    if positive:
        best_lambda = min(positive, key=lambda lam: (med_mse[lam], lam))
        best_mse = med_mse[best_lambda]
        drops = {}
        for metric in ("mse", "mae", "mape"):
            med = _median_by_lambda(reports, metric)
            best_val = min(med[lam] for lam in positive)
            drops[metric] = percent_drop(med[0.0], best_val)
    else:
        best_lambda = 0.0
        best_mse = baseline_mse
        drops = {"mse": 0.0, "mae": 0.0, "mape": 0.0}
    return SummaryRow(features=label, model=model_name,
                      baseline_mse=baseline_mse, best_mse=best_mse,
                      best_lambda=best_lambda, drop_mse_pct=drops["mse"],
                      drop_mae_pct=drops["mae"], drop_mape_pct=drops["mape"])


def summary_to_csv(table: SummaryTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for row in table.rows:
        writer.writerow([
            row.features, row.model,
            f"{row.baseline_mse:.{TABLE_DECIMALS}f}",
            f"{row.best_mse:.{TABLE_DECIMALS}f}",
            f"{row.best_lambda:g}",
            f"{row.drop_mse_pct:.{TABLE_DECIMALS}f}",
            f"{row.drop_mae_pct:.{TABLE_DECIMALS}f}",
            f"{row.drop_mape_pct:.{TABLE_DECIMALS}f}",
        ])
    return buf.getvalue()


# ---------------------------------------------------------------- artifacts

def _cell_stem(lam: float, seed: int) -> str:
    return f"run_lam{lam:g}_seed{seed}"


def _write_epochs_csv(report: RunReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_mse", "penalty"])
        for i, rec in enumerate(report.history):
            writer.writerow([i, repr(rec.train_loss), repr(rec.val_mse),
                             repr(rec.penalty)])


def write_run_artifacts(reports, row_dir: Path) -> None:
    row_dir.mkdir(parents=True, exist_ok=True)
    for report in reports:
        stem = _cell_stem(report.lam, report.seed)
        (row_dir / f"{stem}.json").write_text(report_to_json(report),
                                              encoding="utf-8")
        _write_epochs_csv(report, row_dir / f"{stem}.csv")


@dataclass(frozen=True)
class ExperimentResult:
    table: SummaryTable
    selections: dict[str, float]  # feature-set label -> chosen lambda
    all_cells_ok: bool


def run_experiment(cfg: ExperimentConfig, max_workers: int = 1) -> ExperimentResult:
    """Execute the full sweep and leave artifacts in cfg.output_dir.

    Layout: <out>/config.json, <out>/summary.csv, <out>/selection.json,
    and per feature-set <out>/<label>/run_lam*_seed*.{json,csv}. Rows are
    ordered by label so the table is a pure function of the artifacts.
    Grid cells may run on a thread pool (max_workers); all file writes
    happen here, on the orchestrating thread.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(experiment_config_to_dict(cfg), indent=2, sort_keys=True)
        + "\n", encoding="utf-8")

    base = resolve_dataset(cfg)
    if cfg.monotonic_sets is not None:
        sets = cfg.monotonic_sets
    else:
        sets = tuple((base.feature_names[j],) for j in base.monotonic.indices)
        if not sets:
            raise ConfigError("dataset designates no monotonic features and "
                              "config requests none")
    model_cfg = build_model_config(cfg, base.X.shape[1])

    rows = []
    selections: dict[str, float] = {}
    all_ok = True
    for names in sorted(sets, key=run_label):
        label = run_label(names)
        ds = with_monotonic_names(base, names)
        log.info("sweep %s: %d lambdas x %d seeds", label, len(cfg.grid),
                 len(cfg.seeds))
        reports = lambda_grid_search(
            ds, model_cfg, cfg.train, grid=cfg.grid, seeds=cfg.seeds,
            train_frac=cfg.train_frac,
            norm_fit_on_train=cfg.norm_fit_on_train,
            validate_on_test=cfg.validate_on_test,
            max_workers=max_workers)
        all_ok &= all(r.error is None for r in reports)
        write_run_artifacts(reports, out / label)
        rows.append(summarize_row(label, model_cfg.architecture, reports))
        selections[label] = select_lambda(reports)

    table = SummaryTable(rows=tuple(rows))
    (out / "summary.csv").write_text(summary_to_csv(table), encoding="utf-8")
    (out / "selection.json").write_text(
        json.dumps(selections, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return ExperimentResult(table=table, selections=selections,
                            all_cells_ok=all_ok)


def run_single(cfg: ExperimentConfig, lam: float, seed: int) -> RunReport:
    """One (lambda, seed) cell: split, normalize, train, evaluate.

    Writes the report JSON, per-epoch CSV, and a model checkpoint into
    cfg.output_dir. When the config names no monotonic set, the dataset's
    own designation is penalized jointly.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = resolve_dataset(cfg)
    if cfg.monotonic_sets is not None:
        if len(cfg.monotonic_sets) != 1:
            raise ConfigError("a single run takes exactly one monotonic set, "
                              f"got {len(cfg.monotonic_sets)}")
        base = with_monotonic_names(base, cfg.monotonic_sets[0])
    model_cfg = build_model_config(cfg, base.X.shape[1])

    train_raw, test_raw = train_test_split(base, cfg.train_frac, seed=seed)
    train_n = minmax_normalize(train_raw)
    if cfg.norm_fit_on_train:
        test_n = apply_normalization(test_raw, train_n.norm_params)
    else:
        test_n = minmax_normalize(test_raw)
    model = build_model(replace(model_cfg, seed=seed))
    t_cfg = replace(cfg.train, lam=float(lam), seed=seed)
    trained, report = train(model, train_n, t_cfg,
                            val_ds=test_n if cfg.validate_on_test else None)
    report = replace(report, test_metrics=evaluate(trained, test_n))

    stem = _cell_stem(lam, seed)
    (out / f"{stem}.json").write_text(report_to_json(report), encoding="utf-8")
    _write_epochs_csv(report, out / f"{stem}.csv")
    save_model(trained, out / f"{stem}.npz")
    return report


def generate_to_csv(cfg: ExperimentConfig, path) -> Dataset:
    if "synthetic" not in cfg.dataset:
        raise ConfigError("generate needs a synthetic dataset section")
    ds = resolve_dataset(cfg)
    write_csv(ds, path)
    return ds


def read_reports(row_dir: Path) -> list[RunReport]:
    reports = []
    for path in sorted(row_dir.glob("run_*.json")):
        reports.append(report_from_json(path.read_text(encoding="utf-8")))
    return reports


def rebuild_summary(output_dir) -> SummaryTable:
    """Reconstruct the summary table purely from on-disk run reports."""
    out = Path(output_dir)
    rows = []
    row_dirs = sorted(d for d in out.iterdir()
                      if d.is_dir() and any(d.glob("run_*.json")))
    if not row_dirs:
        raise DataError(f"{output_dir}: no run artifacts found")
    for d in row_dirs:
        reports = read_reports(d)
        model_name = reports[0].config["model"]["architecture"]
        rows.append(summarize_row(d.name, model_name, reports))
    return SummaryTable(rows=tuple(rows))


# ---------------------------------------------------------------- audit

def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        try:
            rows = [[float(c) for c in row] for row in reader if row]
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric cell: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.array(rows)


def audit(predictions_csv, features_csv, monotonic_names, top_k: int = 5) -> dict:
    """Post-hoc penalty report for externally produced predictions.

    Returns a JSON-ready dict with per-feature penalties, the batch
    penalty, the pooled compliance score, and for each feature the top-k
    violating adjacent pairs as original row index pairs.
    """
    pred_header, pred_rows = _read_table(predictions_csv)
    if pred_rows.shape[1] != 1:
        raise DataError(
            f"{predictions_csv}: expected a single prediction column, "
            f"got {pred_header}")
    preds = pred_rows[:, 0]
    feat_names, X = _read_table(features_csv)
    if X.shape[0] != preds.shape[0]:
        raise DataError(
            f"row mismatch: {preds.shape[0]} predictions vs {X.shape[0]} "
            f"feature rows")
    missing = [n for n in monotonic_names if n not in feat_names]
    if missing:
        raise DataError(f"monotonic columns {missing} not in {feat_names}")
    idx = [feat_names.index(n) for n in monotonic_names]
    spec = MonotonicitySpec(idx)

    breakdown = monotonicity_penalty(preds, X, spec)
    try:
        score = compliance_score(preds, X, spec)
    except ComplianceUndefined:
        score = None

    features = {}
    for name, j in zip(monotonic_names, idx):
        entry: dict = {"penalty": breakdown.per_feature[j],
                       "skipped": j in breakdown.skipped}
        if j not in breakdown.skipped:
            baseline = fit_linear_baseline(X[:, j], preds)
            sorted_preds, xs, perm = sort_by_predictions(preds, X[:, j])
            v = adjacent_violations(sorted_preds, xs, baseline.slope, feature=j)
            entry["slope"] = baseline.slope
            entry["intercept"] = baseline.intercept
            worst = np.argsort(v.values, kind="stable")[::-1][:top_k]
            entry["top_violations"] = [
                {"rows": [int(perm[i]), int(perm[i + 1])],
                 "violation": float(v.values[i])}
                for i in worst if v.values[i] > COMPLIANCE_ATOL]
        features[name] = entry

    return {
        "batch_size": breakdown.batch_size,
        "penalty_total": breakdown.total,
        "compliance": score,
        "features": features,
    }
