"""Point and variance estimators for the weighted difference in means.

Given block effects tau_hat_i and weights w_i = B n_i / N, the treatment
effect estimate is Delta_hat = B^{-1} sum_i w_i tau_hat_i. Five variance
estimators are provided:

* ``paired``: the classical matched-pairs estimator, valid for equal-size
  blocks (exactly pairs in its textbook form).
* ``coarse``: the stratum-wise plug-in using within-arm sample variances,
  needs at least two units per arm in every block.
* ``s1``, ``s2``, ``s3``: projection estimators that regress the weighted
  effects on a block-level basis Q and recycle the residuals, with three
  different leverage corrections. ``s1`` scales effects by 1/sqrt(1-h) before
  projecting; ``s2`` reweights squared residuals by 1/(1-h)^2; ``s3`` by
  1/(1-h). The first two are conservative for the design-based variance; the
  third trades guaranteed conservativeness for a smaller upward bias and is
  intended for equal-size designs.

All quadratic forms are computed as explicit sums of squares, so estimates
are nonnegative up to round-off; results are clamped at zero.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from ._util import clamp_variance
from .design import (
    AssignmentAndOutcomes,
    BlockDesign,
    DesignClass,
    block_weights,
    classify_design,
)
from .errors import (
    DimensionMismatch,
    EstimatorWarning,
    InputError,
    InvalidAlpha,
    NotCoarse,
    TooFewBlocks,
    UnequalBlocks,
)
from .projection import QMatrix, build_q1, psi_matrices

WEIGHT_EQUAL_ATOL = 1e-9


@dataclass(frozen=True)
class BlockEffects:
    """Per-block summaries of one realized experiment.

    ``var_treated``/``var_control`` are ddof=1 sample variances, NaN whenever
    the corresponding arm has a single unit.
    """

    tau_hat: np.ndarray
    mean_treated: np.ndarray
    mean_control: np.ndarray
    var_treated: np.ndarray
    var_control: np.ndarray
    n_treated: np.ndarray
    n_control: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.tau_hat.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return self.n_treated + self.n_control


def block_effects(design: BlockDesign, data: AssignmentAndOutcomes) -> BlockEffects:
    """Treated-minus-control means and within-arm sample variances per block."""
    if len(data.assignment.z) != design.n_blocks or len(data.responses) != design.n_blocks:
        raise DimensionMismatch(
            f"data covers {len(data.responses)} blocks, design has {design.n_blocks}"
        )
    b = design.n_blocks
    tau = np.empty(b)
    m1 = np.empty(b)
    m0 = np.empty(b)
    v1 = np.full(b, np.nan)
    v0 = np.full(b, np.nan)
    for i, blk in enumerate(design.blocks):
        z = np.asarray(data.assignment.z[i], dtype=np.int64)
        r = np.asarray(data.responses[i], dtype=float)
        if z.shape[0] != blk.n or r.shape[0] != blk.n:
            raise DimensionMismatch(
                f"block {blk.block_id!r}: got {z.shape[0]} indicators and {r.shape[0]} "
                f"responses for n={blk.n}"
            )
        if int(z.sum()) != blk.n_treated:
            raise DimensionMismatch(
                f"block {blk.block_id!r}: assignment treats {int(z.sum())} units, "
                f"design says {blk.n_treated}"
            )
        rt = r[z == 1]
        rc = r[z == 0]
        m1[i] = rt.mean()
        m0[i] = rc.mean()
        tau[i] = m1[i] - m0[i]
        if rt.size >= 2:
            v1[i] = rt.var(ddof=1)
        if rc.size >= 2:
            v0[i] = rc.var(ddof=1)
    return BlockEffects(
        tau_hat=tau,
        mean_treated=m1,
        mean_control=m0,
        var_treated=v1,
        var_control=v0,
        n_treated=design.treated_counts.copy(),
        n_control=design.control_counts.copy(),
    )


def estimate_ate(effects: BlockEffects, w: np.ndarray) -> float:
    """Weighted difference in means, B^{-1} sum_i w_i tau_hat_i."""
    w = np.asarray(w, dtype=float)
    if w.shape != effects.tau_hat.shape:
        raise DimensionMismatch(f"weights shape {w.shape} vs effects {effects.tau_hat.shape}")
    return float(w @ effects.tau_hat) / effects.n_blocks


def var_paired_classical(effects: BlockEffects, w: np.ndarray) -> float:
    """Matched-pairs variance estimator, sum (tau_i - Delta)^2 / (B (B-1)).

    Requires equal block weights; raises UnequalBlocks otherwise. For
    equal-size designs that are not pairs the same formula still applies (it
    coincides with the s1 estimator on the intercept basis) and is computed
    with a warning.
    """
    w = np.asarray(w, dtype=float)
    b = effects.n_blocks
    if b < 2:
        raise TooFewBlocks("paired variance needs at least two blocks")
    if not np.allclose(w, 1.0, rtol=0.0, atol=WEIGHT_EQUAL_ATOL):
        raise UnequalBlocks("paired variance requires equal block weights")
    sizes = effects.sizes
    if np.any(sizes != 2):
        warnings.warn(
            "paired variance applied to equal-size blocks that are not pairs",
            EstimatorWarning,
            stacklevel=2,
        )
    delta = float(np.mean(effects.tau_hat))
    value = float(np.sum((effects.tau_hat - delta) ** 2)) / (b * (b - 1))
    return clamp_variance(value)


def var_coarse_classical(effects: BlockEffects, w: np.ndarray) -> float:
    """Stratum-wise plug-in, B^{-2} sum w_i^2 (s1_i^2/n1_i + s0_i^2/n0_i)."""
    w = np.asarray(w, dtype=float)
    small = np.minimum(effects.n_treated, effects.n_control) < 2
    if np.any(small):
        idx = int(np.flatnonzero(small)[0])
        raise NotCoarse(
            f"block index {idx} has a singleton arm; within-arm variances undefined"
        )
    b = effects.n_blocks
    per_block = effects.var_treated / effects.n_treated + effects.var_control / effects.n_control
    value = float(np.sum(w**2 * per_block)) / b**2
    return clamp_variance(value)


def _check_q(effects: BlockEffects, w: np.ndarray, q: QMatrix) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != effects.tau_hat.shape:
        raise DimensionMismatch(f"weights shape {w.shape} vs effects {effects.tau_hat.shape}")
    if q.n_blocks != effects.n_blocks:
        raise DimensionMismatch(
            f"basis has {q.n_blocks} rows, effects have {effects.n_blocks} blocks"
        )
    return w


def var_s1(effects: BlockEffects, w: np.ndarray, q: QMatrix) -> float:
    """Projection estimator with effects pre-scaled by 1/sqrt(1 - h).

    B^{-2} y' W (I - H_Q) W y with y_i = tau_hat_i / sqrt(1 - h_ii).
    """
    w = _check_q(effects, w, q)
    y = effects.tau_hat / np.sqrt(1.0 - q.leverages)
    v = w * y
    resid = v - q.hat @ v
    return clamp_variance(float(resid @ resid) / effects.n_blocks**2)


def var_s2(effects: BlockEffects, w: np.ndarray, q: QMatrix) -> float:
    """Projection estimator with squared residuals reweighted by 1/(1-h)^2."""
    w = _check_q(effects, w, q)
    psi = psi_matrices(q).psi
    v = w * effects.tau_hat
    resid = v - q.hat @ v
    return clamp_variance(float(np.sum(resid**2 * psi)) / effects.n_blocks**2)


def var_s3(effects: BlockEffects, w: np.ndarray, q: QMatrix) -> float:
    """Projection estimator with squared residuals reweighted by 1/(1-h).

    Aimed at equal-size designs; emits a warning when block weights differ
    because the smaller correction is not guaranteed conservative there.
    """
    w = _check_q(effects, w, q)
    if not np.allclose(w, 1.0, rtol=0.0, atol=WEIGHT_EQUAL_ATOL):
        warnings.warn(
            "s3 reweighting applied to unequal block sizes; conservativeness "
            "is only established for equal sizes",
            EstimatorWarning,
            stacklevel=2,
        )
    psi_tilde = psi_matrices(q).psi_tilde
    v = w * effects.tau_hat
    resid = v - q.hat @ v
    return clamp_variance(float(np.sum(resid**2 * psi_tilde)) / effects.n_blocks**2)


def confidence_interval(delta_hat: float, s2: float, alpha: float) -> tuple[float, float]:
    """Normal-approximation interval Delta_hat +/- z_{1-alpha/2} sqrt(s2)."""
    if not (0.0 < alpha < 1.0):
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    half = float(scipy.stats.norm.ppf(1.0 - alpha / 2.0)) * float(np.sqrt(max(s2, 0.0)))
    return (float(delta_hat) - half, float(delta_hat) + half)


@dataclass(frozen=True)
class VarianceReport:
    """Everything one analysis run produced, ready for serialization."""

    delta_hat: float
    alpha: float
    design_class: str
    n_blocks: int
    n_units: int
    estimates: dict
    intervals: dict
    q_info: dict | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "schema": "stratavar.variance_report.v1",
            "delta_hat": self.delta_hat,
            "alpha": self.alpha,
            "design_class": self.design_class,
            "n_blocks": self.n_blocks,
            "n_units": self.n_units,
            "estimates": {k: float(v) for k, v in self.estimates.items()},
            "intervals": {k: [float(lo), float(hi)] for k, (lo, hi) in self.intervals.items()},
            "q": self.q_info,
            "warnings": list(self.warnings),
        }


def q_info_dict(q: QMatrix) -> dict:
    return {
        "kind": q.kind,
        "rank": int(q.rank),
        "q1_rank": int(q.q1_rank),
        "added_covariate_rank": int(q.added_covariate_rank),
        "dropped_columns": [int(j) for j in q.dropped_columns],
        "notes": list(q.notes),
    }


def analyze_experiment(
    design: BlockDesign,
    data: AssignmentAndOutcomes,
    q: QMatrix | None = None,
    estimators="auto",
    alpha: float = 0.05,
) -> VarianceReport:
    """Run the requested estimators on one experiment and collect a report.

    ``estimators`` may be "auto" (projection estimators plus whichever
    classical estimator the design supports) or an explicit list of names
    from {"paired", "coarse", "s1", "s2", "s3"}.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    w = block_weights(design)
    effects = block_effects(design, data)
    delta = estimate_ate(effects, w)
    if q is None:
        q = build_q1(design)
    design_class = classify_design(design)

    if estimators == "auto":
        names = ["s1", "s2", "s3"]
        if np.all(design.sizes == 2):
            names.insert(0, "paired")
        if design_class is DesignClass.COARSE:
            names.insert(0, "coarse")
    else:
        names = list(estimators)
        known = {"paired", "coarse", "s1", "s2", "s3"}
        unknown = [n for n in names if n not in known]
        if unknown:
            raise InputError(f"unknown estimators: {unknown}")

    fns = {
        "paired": lambda: var_paired_classical(effects, w),
        "coarse": lambda: var_coarse_classical(effects, w),
        "s1": lambda: var_s1(effects, w, q),
        "s2": lambda: var_s2(effects, w, q),
        "s3": lambda: var_s3(effects, w, q),
    }
    estimates: dict[str, float] = {}
    intervals: dict[str, tuple[float, float]] = {}
    collected: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for name in names:
            estimates[name] = fns[name]()
            intervals[name] = confidence_interval(delta, estimates[name], alpha)
        collected = [str(c.message) for c in caught]
    return VarianceReport(
        delta_hat=delta,
        alpha=alpha,
        design_class=design_class.value,
        n_blocks=design.n_blocks,
        n_units=design.n_units,
        estimates=estimates,
        intervals=intervals,
        q_info=q_info_dict(q),
        warnings=tuple(collected),
    )
