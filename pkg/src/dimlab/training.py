"""Adam training of the combined objective, metrics, and lambda selection.

Reproducibility contract: every stochastic choice draws from its own
keyed stream seeded as default_rng([STREAM_KEY, seed]), so the validation
carve-out, the per-epoch shuffles, and the dropout masks are identical
across penalty weights and across reruns. RunReports serialize to
canonical JSON (sorted keys, wall time excluded) and are bit-identical
for identical seeds.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import penalty as pen
from .autodiff import backward_pass
from .data import Dataset, apply_normalization, minmax_normalize, train_test_split
from .errors import (
    ComplianceUndefined,
    ConfigError,
    DataError,
    NumericError,
    ParameterError,
    SchemaError,
)
from .models import Model, ModelConfig, build_model, forward, forward_with_params

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MAPE_GUARD = 1e-8

# rng stream keys (seeded as [key, seed])
CARVE_STREAM = 301
SHUFFLE_STREAM = 302
DROPOUT_STREAM = 303

REPORT_SCHEMA_VERSION = 1

LAMBDA_GRID_DEFAULT = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    baseline_mode: str = "frozen"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.early_stop_patience < 1:
            raise ConfigError(
                f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(
                f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.baseline_mode not in pen.BASELINE_MODES:
            raise ConfigError(
                f"baseline_mode must be one of {pen.BASELINE_MODES}, "
                f"got {self.baseline_mode!r}")


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    mape: float
    compliance: float | None  # None when no usable monotonic pairs exist


@dataclass(frozen=True)
class EpochRecord:
    train_loss: float
    val_mse: float
    penalty: float


@dataclass(frozen=True)
class RunReport:
    """One training run's record.

    ``wall_time_s`` is informational only and excluded from the canonical
    JSON so identical seeds produce bit-identical artifacts.
    """

    config: dict
    history: tuple[EpochRecord, ...]
    best_epoch: int  # index into history; -1 when no epoch ran
    val_metrics: Metrics | None = None
    test_metrics: Metrics | None = None
    error: str | None = None
    wall_time_s: float = 0.0

    @property
    def lam(self) -> float:
        return self.config["train"]["lam"]

    @property
    def seed(self) -> int:
        return self.config["train"]["seed"]


def _metrics_dict(m: Metrics | None):
    return None if m is None else asdict(m)


def report_to_json(report: RunReport) -> str:
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": report.config,
        "history": [asdict(rec) for rec in report.history],
        "best_epoch": report.best_epoch,
        "val_metrics": _metrics_dict(report.val_metrics),
        "test_metrics": _metrics_dict(report.test_metrics),
        "error": report.error,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def report_from_json(text: str) -> RunReport:
    payload = json.loads(text)
    if payload.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported report schema {payload.get('schema_version')!r}")

    def mk(d):
        return None if d is None else Metrics(**d)

    return RunReport(
        config=payload["config"],
        history=tuple(EpochRecord(**rec) for rec in payload["history"]),
        best_epoch=payload["best_epoch"],
        val_metrics=mk(payload["val_metrics"]),
        test_metrics=mk(payload["test_metrics"]),
        error=payload["error"],
    )


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(step=0,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if params.keys() != grads.keys():
        raise ParameterError("parameter and gradient names differ")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ParameterError(
                f"gradient shape {g.shape} != parameter shape {p.shape} "
                f"for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


# ---------------------------------------------------------------- evaluation

def predict(model: Model, ds: Dataset) -> np.ndarray:
    return forward(model, ds.X).value


def metrics_from_predictions(preds, ds: Dataset) -> Metrics:
    """Closed-form error metrics plus compliance for given predictions."""
    if ds.n_rows == 0:
        raise DataError("cannot evaluate on an empty dataset")
    preds = np.asarray(preds, dtype=np.float64)
    err = preds - ds.y
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    mape = float(100.0 * np.mean(np.abs(err) / np.maximum(np.abs(ds.y), MAPE_GUARD)))
    try:
        compliance = pen.compliance_score(preds, ds.X, ds.monotonic)
    except ComplianceUndefined:
        compliance = None
    return Metrics(mse=mse, mae=mae, mape=mape, compliance=compliance)


def evaluate(model: Model, ds: Dataset) -> Metrics:
    """Eval-mode metrics over a full split; compliance may be undefined."""
    return metrics_from_predictions(predict(model, ds), ds)


def _val_mse(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    err = forward(model, X).value - y
    return float(np.mean(err * err))


# ---------------------------------------------------------------- training

def _config_snapshot(model_config: ModelConfig, config: TrainConfig) -> dict:
    snap = {"model": asdict(model_config), "train": asdict(config)}
    snap["model"]["hidden_sizes"] = list(model_config.hidden_sizes)
    return snap


def train(model: Model, train_ds: Dataset, config: TrainConfig,
          val_ds: Dataset | None = None):
    """Mini-batch Adam on the combined objective with early stopping.

    A validation subset of ``val_fraction`` rows is carved from the
    training split (seeded) unless ``val_ds`` is supplied. Stops after
    ``early_stop_patience`` epochs without validation-MSE improvement and
    restores the best parameters. Returns (model, RunReport).
    """
    t0 = time.perf_counter()
    spec = train_ds.monotonic
    if val_ds is not None:
        X_tr, y_tr = train_ds.X, train_ds.y
        X_val, y_val = val_ds.X, val_ds.y
    elif config.val_fraction > 0.0 and train_ds.n_rows >= 2:
        carve = np.random.default_rng([CARVE_STREAM, config.seed])
        perm = carve.permutation(train_ds.n_rows)
        n_val = max(1, int(round(config.val_fraction * train_ds.n_rows)))
        if n_val >= train_ds.n_rows:
            raise ConfigError(
                f"val_fraction {config.val_fraction} leaves no training rows")
        X_val, y_val = train_ds.X[perm[:n_val]], train_ds.y[perm[:n_val]]
        X_tr, y_tr = train_ds.X[perm[n_val:]], train_ds.y[perm[n_val:]]
    else:
        # no held-out rows; early stopping watches the training split
        X_tr, y_tr = train_ds.X, train_ds.y
        X_val, y_val = train_ds.X, train_ds.y

    n = X_tr.shape[0]
    shuffle_rng = np.random.default_rng([SHUFFLE_STREAM, config.seed])
    dropout_rng = np.random.default_rng([DROPOUT_STREAM, config.seed])

    params = {k: v.copy() for k, v in model.parameters.items()}
    state = AdamState.init_like(params)
    best_params = {k: v.copy() for k, v in params.items()}
    best_val = np.inf
    best_epoch = -1
    wait = 0
    history: list[EpochRecord] = []

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        penalty_sum = 0.0
        working = Model(config=model.config, parameters=params)
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            xb, yb = X_tr[rows], y_tr[rows]
            preds, nodes = forward_with_params(working, xb, training=True,
                                               rng=dropout_rng)
            terms = pen.build_loss_terms(preds, yb, xb, spec, config.lam,
                                         config.baseline_mode)
            loss = terms.total.value.item()
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch row {start}")
            backward_pass(terms.total)
            grads = {name: node.grad for name, node in nodes.items()}
            params, state = adam_step(params, grads, state, config.learning_rate)
            working = Model(config=model.config, parameters=params)
            loss_sum += loss * rows.size
            penalty_sum += terms.breakdown.total * rows.size

        val_mse = _val_mse(working, X_val, y_val)
        history.append(EpochRecord(train_loss=loss_sum / n,
                                   val_mse=val_mse,
                                   penalty=penalty_sum / n))
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            wait = 0
        else:
            wait += 1
            if wait >= config.early_stop_patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    trained = Model(config=model.config, parameters=best_params)
    val_metrics = None
    if history:
        val_split = Dataset(X=X_val, y=y_val,
                            feature_names=train_ds.feature_names,
                            monotonic=spec)
        val_metrics = evaluate(trained, val_split)
    report = RunReport(
        config=_config_snapshot(model.config, config),
        history=tuple(history),
        best_epoch=best_epoch,
        val_metrics=val_metrics,
        wall_time_s=time.perf_counter() - t0,
    )
    return trained, report


# ---------------------------------------------------------------- protocol

def _run_cell(lam: float, seed: int, model_config: ModelConfig,
              train_config: TrainConfig, train_n: Dataset, test_n: Dataset,
              validate_on_test: bool) -> RunReport:
    snapshot = {
        "model": {**asdict(model_config),
                  "hidden_sizes": list(model_config.hidden_sizes),
                  "seed": seed},
        "train": {**asdict(train_config), "lam": float(lam), "seed": seed},
    }
    try:
        m_cfg = replace(model_config, seed=seed)
        t_cfg = replace(train_config, lam=float(lam), seed=seed)
        model = build_model(m_cfg)
        trained, report = train(
            model, train_n, t_cfg,
            val_ds=test_n if validate_on_test else None)
        return replace(report, test_metrics=evaluate(trained, test_n))
    except Exception as exc:  # keep sweeping the other cells
        log.warning("cell lam=%s seed=%s failed: %s", lam, seed, exc)
        return RunReport(config=snapshot, history=(), best_epoch=-1,
                         error=str(exc))


def lambda_grid_search(dataset: Dataset, model_config: ModelConfig,
                       train_config: TrainConfig,
                       grid=LAMBDA_GRID_DEFAULT, seeds=(0,),
                       train_frac: float = 0.8,
                       norm_fit_on_train: bool = False,
                       validate_on_test: bool = False,
                       max_workers: int = 1) -> list[RunReport]:
    """One full train+evaluate per (lambda, seed).

    Within a seed every lambda shares the same split, normalization, and
    initial parameters. Cell failures are recorded on the report (error
    field) and do not stop the sweep. Cells are independent and share
    only frozen datasets, so with max_workers > 1 the grid runs on a
    thread pool; reports come back in grid order either way.
    """
    if not grid:
        raise ParameterError("lambda grid must be non-empty")
    if 0.0 not in grid:
        raise ParameterError("lambda grid must contain the 0.0 baseline")
    if not seeds:
        raise ParameterError("need at least one seed")
    if max_workers < 1:
        raise ParameterError(f"max_workers must be >= 1, got {max_workers}")

    reports: list[RunReport] = []
    for seed in seeds:
        train_raw, test_raw = train_test_split(dataset, train_frac, seed=seed)
        train_n = minmax_normalize(train_raw)
        if norm_fit_on_train:
            test_n = apply_normalization(test_raw, train_n.norm_params)
        else:
            test_n = minmax_normalize(test_raw)

        def run_cell(lam, seed=seed, train_n=train_n, test_n=test_n):
            return _run_cell(lam, seed, model_config, train_config,
                             train_n, test_n, validate_on_test)

        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                reports.extend(pool.map(run_cell, grid))
        else:
            reports.extend(run_cell(lam) for lam in grid)
    return reports


def select_lambda(reports, compliance_drop_tolerance: float = 0.05) -> float:
    """Two-stage choice over sweep reports.

    Stage 1 aggregates per-lambda median validation MSE and median
    compliance across seeds; stage 2 takes the val-MSE argmin among
    lambdas whose compliance is within the tolerance of the best. Ties
    go to the smaller lambda. An empty candidate set falls back to the
    unfiltered argmin with a warning.
    """
    usable = [r for r in reports if r.error is None and r.val_metrics is not None]
    if not usable:
        raise ParameterError("no successful reports to select from")
    by_lam: dict[float, list[RunReport]] = {}
    for r in usable:
        by_lam.setdefault(r.lam, []).append(r)

    lams = sorted(by_lam)
    med_mse = {}
    med_comp = {}
    for lam in lams:
        med_mse[lam] = float(np.median([r.val_metrics.mse for r in by_lam[lam]]))
        comps = [r.val_metrics.compliance for r in by_lam[lam]
                 if r.val_metrics.compliance is not None]
        med_comp[lam] = float(np.median(comps)) if comps else None

    defined = [c for c in med_comp.values() if c is not None]
    candidates = lams
    if defined:
        best_comp = max(defined)
        candidates = [lam for lam in lams
                      if med_comp[lam] is not None
                      and med_comp[lam] >= best_comp - compliance_drop_tolerance]
    if not candidates:
        log.warning("compliance filter left no candidates; "
                    "falling back to unfiltered val-MSE argmin")
        candidates = lams
    # sorted ascending, so min() returns the smallest lambda on ties
    return min(candidates, key=lambda lam: (med_mse[lam], lam))
