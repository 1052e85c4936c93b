"""Linear-baseline monotonicity penalty and compliance score.

For each feature designated monotonic, a per-batch linear trend is fitted
from that feature to the current predictions. Predictions are sorted
ascending; wherever the baseline expects a larger increment between
adjacent sorted predictions than the model produced, the shortfall is
penalized quadratically. The batch penalty is the violation energy summed
over features, divided by the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import (
    ComplianceUndefined,
    DegenerateFeature,
    DimensionError,
    ParameterError,
)

# a violation counts as zero when at or below this (absolute)
COMPLIANCE_ATOL = 1e-12

BASELINE_MODES = ("frozen", "coupled")


@dataclass(frozen=True)
class LinearBaseline:
    """Per-feature affine reference trend: g(x) = slope * x + intercept."""

    slope: float
    intercept: float


@dataclass(frozen=True)
class MonotonicitySpec:
    """Which feature columns are expected to act non-decreasingly.

    The expected direction is fixed (non-decreasing); decreasing
    constraints are out of scope.
    """

    indices: tuple[int, ...]
    direction: str = field(default="non-decreasing", init=False)

    def __init__(self, indices):
        idx = tuple(sorted(int(i) for i in indices))
        if any(i < 0 for i in idx):
            raise ParameterError(f"negative feature index in {idx}")
        if len(set(idx)) != len(idx):
            raise ParameterError(f"duplicate feature index in {idx}")
        object.__setattr__(self, "indices", idx)

    def validate_for(self, num_features: int) -> None:
        bad = [i for i in self.indices if i >= num_features]
        if bad:
            raise ParameterError(
                f"monotonic feature indices {bad} out of range for "
                f"{num_features} features")


@dataclass(frozen=True)
class ViolationVector:
    """Per-adjacent-pair shortfalls v[i] >= 0 for one feature column."""

    values: np.ndarray
    feature: int = -1


@dataclass(frozen=True)
class PenaltyBreakdown:
    """Penalty decomposition for one batch.

    ``total * batch_size`` equals the sum of ``per_feature`` values (to
    rounding). Features skipped as degenerate appear in ``per_feature``
    with value 0 and are listed in ``skipped``.
    """

    per_feature: dict[int, float]
    total: float
    batch_size: int
    skipped: tuple[int, ...] = ()


def _check_column_pair(x_col: np.ndarray, preds: np.ndarray, op: str) -> None:
    if x_col.ndim != 1 or preds.ndim != 1 or x_col.shape != preds.shape:
        raise DimensionError(
            f"{op} expects equal-length vectors, got {x_col.shape} and "
            f"{preds.shape}")


def fit_linear_baseline(x_col, preds) -> LinearBaseline:
    """Least-squares line from one feature column to the predictions.

    Uses population (1/N) covariance and variance. Raises
    :class:`DegenerateFeature` when N < 2 or the column is constant;
    callers decide whether that skips the feature or aborts.
    """
    x_col = np.asarray(x_col, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    _check_column_pair(x_col, preds, "fit_linear_baseline")
    n = x_col.shape[0]
    if n < 2:
        raise DegenerateFeature(f"need at least 2 rows to fit a line, got {n}")
    if x_col.max() == x_col.min():
        raise DegenerateFeature("feature column is constant within the batch")
    mean_x = x_col.mean()
    mean_p = preds.mean()
    var = ((x_col - mean_x) ** 2).mean()
    if var == 0.0:
        raise DegenerateFeature("feature column has zero variance")
    cov = ((x_col - mean_x) * (preds - mean_p)).mean()
    slope = cov / var
    return LinearBaseline(slope=float(slope), intercept=float(mean_p - slope * mean_x))


def sort_by_predictions(preds, x_col):
    """Stable ascending sort of predictions, carrying the feature along.

    Returns ``(sorted_preds, reordered_x, perm)`` with
    ``reordered_x[i] = x_col[perm[i]]``; ties keep original order.
    """
    preds = np.asarray(preds, dtype=np.float64)
    x_col = np.asarray(x_col, dtype=np.float64)
    _check_column_pair(x_col, preds, "sort_by_predictions")
    perm = np.argsort(preds, kind="stable")
    return preds[perm], x_col[perm], perm


def reference_predictions(baseline: LinearBaseline, x) -> np.ndarray:
    """Evaluate the fitted line elementwise: slope * x + intercept."""
    return baseline.slope * np.asarray(x, dtype=np.float64) + baseline.intercept


def adjacent_violations(sorted_preds, reordered_x, slope: float,
                        feature: int = -1) -> ViolationVector:
    """Shortfall of each adjacent sorted-prediction increment.

    For pair i: v[i] = max(0, slope * dx[i] - dpred[i]). The intercept
    cancels in increments. N < 2 yields an empty vector.
    """
    sorted_preds = np.asarray(sorted_preds, dtype=np.float64)
    reordered_x = np.asarray(reordered_x, dtype=np.float64)
    _check_column_pair(reordered_x, sorted_preds, "adjacent_violations")
    dg = slope * np.diff(reordered_x)
    dfhat = np.diff(sorted_preds)
    return ViolationVector(values=np.maximum(dg - dfhat, 0.0), feature=feature)


def feature_penalty(v: ViolationVector) -> float:
    """Violation energy for one feature: sum of squared shortfalls."""
    return float(np.sum(v.values * v.values))


def _penalty_inputs(preds, X, spec: MonotonicitySpec):
    preds = np.asarray(preds, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if preds.ndim != 1 or X.ndim != 2 or X.shape[0] != preds.shape[0]:
        raise DimensionError(
            f"expected preds (N,) and X (N, d), got {preds.shape} and {X.shape}")
    spec.validate_for(X.shape[1])
    return preds, X


def monotonicity_penalty(preds, X, spec: MonotonicitySpec) -> PenaltyBreakdown:
    """Batch penalty over all monotonic features.

    One stable sort of the predictions is shared by every feature.
    Degenerate features (constant in the batch, or N < 2) contribute 0
    and are reported in ``skipped`` rather than raising.
    """
    preds, X = _penalty_inputs(preds, X, spec)
    n = preds.shape[0]
    if n < 1:
        raise DimensionError("monotonicity_penalty needs at least one row")
    perm = np.argsort(preds, kind="stable")
    sorted_preds = preds[perm]
    per_feature: dict[int, float] = {}
    skipped: list[int] = []
    p_sum = 0.0
    for j in spec.indices:
        try:
            baseline = fit_linear_baseline(X[:, j], preds)
        except DegenerateFeature:
            per_feature[j] = 0.0
            skipped.append(j)
            continue
        v = adjacent_violations(sorted_preds, X[perm, j], baseline.slope, feature=j)
        p_j = feature_penalty(v)
        per_feature[j] = p_j
        p_sum += p_j
    return PenaltyBreakdown(per_feature=per_feature, total=p_sum * (1.0 / n),
                            batch_size=n, skipped=tuple(skipped))


def compliance_score(preds, X, spec: MonotonicitySpec) -> float:
    """Fraction of adjacent sorted pairs, pooled over non-degenerate
    monotonic features, whose violation is zero within 1e-12 absolute.

    Raises :class:`ComplianceUndefined` when no valid pairs exist (all
    features degenerate, empty spec, or N < 2).
    """
    preds, X = _penalty_inputs(preds, X, spec)
    perm = np.argsort(preds, kind="stable")
    sorted_preds = preds[perm]
    pairs = 0
    compliant = 0
    for j in spec.indices:
        try:
            baseline = fit_linear_baseline(X[:, j], preds)
        except DegenerateFeature:
            continue
        v = adjacent_violations(sorted_preds, X[perm, j], baseline.slope, feature=j)
        pairs += v.values.size
        compliant += int(np.count_nonzero(v.values <= COMPLIANCE_ATOL))
    if pairs == 0:
        raise ComplianceUndefined("no adjacent pairs with a usable baseline")
    return compliant / pairs


@dataclass(frozen=True)
class LossTerms:
    """Graph nodes of the combined objective plus the logged decomposition.

    ``penalty`` is None when the penalty term is not part of the graph
    (lambda = 0, empty spec, or every feature degenerate); the
    ``breakdown`` then reports total 0.
    """

    total: Node
    mse: Node
    penalty: Node | None
    breakdown: PenaltyBreakdown


def build_loss_terms(preds: Node, y, X, spec: MonotonicitySpec, lam: float,
                     baseline_mode: str = "frozen") -> LossTerms:
    """Assemble L = MSE + lambda * penalty inside the autodiff graph.

    In frozen mode the fitted slope is a constant of the backward pass;
    in coupled mode gradients also flow through the covariance/variance
    formulas. The sort permutation is constant in backward either way.
    """
    if lam < 0:
        raise ParameterError(f"penalty weight must be >= 0, got {lam}")
    if baseline_mode not in BASELINE_MODES:
        raise ParameterError(
            f"baseline_mode must be one of {BASELINE_MODES}, got {baseline_mode!r}")
    y = np.asarray(y, dtype=np.float64)
    p_val, X = _penalty_inputs(preds.value, X, spec)
    if y.shape != p_val.shape:
        raise DimensionError(
            f"targets shape {y.shape} does not match predictions {p_val.shape}")
    n = p_val.shape[0]

    residual = preds - ad.constant(y)
    mse = ad.scale(ad.sum_all(ad.square(residual)), 1.0 / n)

    if lam == 0:
        # penalty not built into the graph; report the decomposition anyway
        breakdown = monotonicity_penalty(p_val, X, spec)
        return LossTerms(total=mse, mse=mse, penalty=None, breakdown=breakdown)

    perm = np.argsort(p_val, kind="stable")
    per_feature: dict[int, float] = {}
    skipped: list[int] = []
    p_sum_node: Node | None = None
    sorted_preds = ad.gather_rows(preds, perm)
    dfhat = ad.adjacent_diff(sorted_preds)
    for j in spec.indices:
        x_col = X[:, j]
        try:
            baseline = fit_linear_baseline(x_col, p_val)
        except DegenerateFeature:
            per_feature[j] = 0.0
            skipped.append(j)
            continue
        dx = np.diff(x_col[perm])
        if baseline_mode == "frozen":
            dg = ad.constant(baseline.slope * dx)
        else:
            # slope = sum(c * preds) with c = (x - mean_x) / (N * var);
            # the mean-of-preds term drops out since sum(c) = 0
            mean_x = x_col.mean()
            var = ((x_col - mean_x) ** 2).mean()
            coeffs = (x_col - mean_x) / (n * var)
            slope_node = ad.sum_all(preds * ad.constant(coeffs))
            dg = slope_node * ad.constant(dx)
        p_j = ad.sum_all(ad.square(ad.relu(dg - dfhat)))
        per_feature[j] = p_j.value.item()
        p_sum_node = p_j if p_sum_node is None else p_sum_node + p_j

    if p_sum_node is None:
        breakdown = PenaltyBreakdown(per_feature=per_feature, total=0.0,
                                     batch_size=n, skipped=tuple(skipped))
        return LossTerms(total=mse, mse=mse, penalty=None, breakdown=breakdown)

    penalty = ad.scale(p_sum_node, 1.0 / n)
    total = mse + ad.scale(penalty, lam)
    breakdown = PenaltyBreakdown(per_feature=per_feature,
                                 total=penalty.value.item(),
                                 batch_size=n, skipped=tuple(skipped))
    return LossTerms(total=total, mse=mse, penalty=penalty, breakdown=breakdown)


def combined_loss(preds: Node, y, X, spec: MonotonicitySpec, lam: float,
                  baseline_mode: str = "frozen") -> Node:
    """Scalar objective node: MSE plus lambda times the batch penalty."""
    return build_loss_terms(preds, y, X, spec, lam, baseline_mode).total
