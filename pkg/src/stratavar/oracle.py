"""Ground truth for simulation studies and estimator verification.

Two kinds of truth are supported:

* ``PotentialWorld``: a fixed schedule of potential outcomes (r1, r0) for
  every unit. Expectations are over the randomization distribution alone,
  and the estimand is the schedule's average treatment effect.
* ``CateModel``: systematic components (f1, f0) plus unit-level noise with a
  known 2x2 covariance between arms. Expectations are over randomization and
  noise jointly, and the estimand is the conditional average effect.

For both, closed forms are provided for the true variance of the weighted
difference in means and for the exact expectation gaps (biases) of every
variance estimator in :mod:`stratavar.estimators`. ``brute_force_expectation``
averages an arbitrary statistic over the full assignment space and is the
independent check the closed forms are tested against.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._util import as_rng
from .design import (
    Assignment,
    AssignmentAndOutcomes,
    BlockDesign,
    block_weights,
    enumerate_assignments,
    n_assignments,
)
from .errors import DimensionMismatch, PreconditionViolated
from .projection import QMatrix, build_q1, build_q2
from .estimators import block_effects, var_s1

DEFAULT_BRUTE_FORCE_CAP = 10_000


def _per_block_arrays(design: BlockDesign, values, label: str) -> tuple[np.ndarray, ...]:
    if len(values) != design.n_blocks:
        raise DimensionMismatch(f"{label} covers {len(values)} blocks, design has {design.n_blocks}")
    out = []
    for blk, arr in zip(design.blocks, values):
        a = np.asarray(arr, dtype=float)
        if a.shape != (blk.n,):
            raise DimensionMismatch(
                f"{label} for block {blk.block_id!r} has shape {a.shape}, expected ({blk.n},)"
            )
        out.append(a)
    return tuple(out)


@dataclass(frozen=True)
class PotentialWorld:
    """A complete potential-outcome schedule over a design."""

    design: BlockDesign
    r1: tuple[np.ndarray, ...]
    r0: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "r1", _per_block_arrays(self.design, self.r1, "r1"))
        object.__setattr__(self, "r0", _per_block_arrays(self.design, self.r0, "r0"))

    @cached_property
    def tau_bar(self) -> np.ndarray:
        return np.array([(a - b).mean() for a, b in zip(self.r1, self.r0)])

    @cached_property
    def sigma2_treated(self) -> np.ndarray:
        return np.array([a.var(ddof=1) for a in self.r1])

    @cached_property
    def sigma2_control(self) -> np.ndarray:
        return np.array([a.var(ddof=1) for a in self.r0])

    @cached_property
    def sigma2_tau(self) -> np.ndarray:
        return np.array([(a - b).var(ddof=1) for a, b in zip(self.r1, self.r0)])


@dataclass(frozen=True)
class CateModel:
    """Systematic potential outcomes plus unit-level between-arm noise.

    ``noise_cov`` is the 2x2 covariance of (treated-arm, control-arm) noise
    for every unit, or a (B, 2, 2) array for block-specific covariances.
    Noise is independent across units.
    """

    design: BlockDesign
    f1: tuple[np.ndarray, ...]
    f0: tuple[np.ndarray, ...]
    noise_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f1", _per_block_arrays(self.design, self.f1, "f1"))
        object.__setattr__(self, "f0", _per_block_arrays(self.design, self.f0, "f0"))
        cov = np.asarray(self.noise_cov, dtype=float)
        if cov.shape == (2, 2):
            cov = np.broadcast_to(cov, (self.design.n_blocks, 2, 2)).copy()
        if cov.shape != (self.design.n_blocks, 2, 2):
            raise DimensionMismatch(
                f"noise_cov must be (2, 2) or (B, 2, 2), got {np.asarray(self.noise_cov).shape}"
            )
        object.__setattr__(self, "noise_cov", cov)

    @cached_property
    def f_bar(self) -> np.ndarray:
        """Block means of the systematic effect f1 - f0."""
        return np.array([(a - b).mean() for a, b in zip(self.f1, self.f0)])

    @cached_property
    def sigma2_f_treated(self) -> np.ndarray:
        return np.array([a.var(ddof=1) for a in self.f1])

    @cached_property
    def sigma2_f_control(self) -> np.ndarray:
        return np.array([a.var(ddof=1) for a in self.f0])

    @cached_property
    def sigma2_f_tau(self) -> np.ndarray:
        return np.array([(a - b).var(ddof=1) for a, b in zip(self.f1, self.f0)])

    @cached_property
    def noise_var_treated(self) -> np.ndarray:
        return self.noise_cov[:, 0, 0]

    @cached_property
    def noise_var_control(self) -> np.ndarray:
        return self.noise_cov[:, 1, 1]

    @cached_property
    def _noise_factors(self) -> np.ndarray:
        """(B, 2, 2) factors L with L L' = noise_cov, tolerant of singular cov."""
        factors = np.empty_like(self.noise_cov)
        for i, cov in enumerate(self.noise_cov):
            vals, vecs = np.linalg.eigh(cov)
            if np.any(vals < -1e-8 * max(float(vals.max()), 1.0)):
                raise PreconditionViolated(f"noise covariance for block {i} is not PSD")
            factors[i] = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
        return factors


def sate(world: PotentialWorld) -> float:
    """Schedule average treatment effect, N^{-1} sum_ij (r1_ij - r0_ij)."""
    return float(np.sum(world.design.sizes * world.tau_bar)) / world.design.n_units


def cate(model: CateModel) -> float:
    """Average systematic effect, N^{-1} sum_ij (f1_ij - f0_ij)."""
    return float(np.sum(model.design.sizes * model.f_bar)) / model.design.n_units


def observed_responses(world: PotentialWorld, assignment: Assignment) -> AssignmentAndOutcomes:
    """Reveal the schedule under one assignment."""
    rs = []
    for zi, r1, r0 in zip(assignment.z, world.r1, world.r0):
        z = np.asarray(zi, dtype=float)
        rs.append(z * r1 + (1.0 - z) * r0)
    return AssignmentAndOutcomes(assignment=assignment, responses=tuple(rs))


def draw_world(model: CateModel, seed) -> PotentialWorld:
    """Sample one potential-outcome schedule from the model's noise law."""
    rng = as_rng(seed)
    factors = model._noise_factors
    same = np.all(factors == factors[0])
    design = model.design
    if same:
        raw = rng.standard_normal((design.n_units, 2)) @ factors[0].T
        eps_blocks = np.split(raw, np.cumsum(design.sizes)[:-1])
    else:
        eps_blocks = [
            rng.standard_normal((blk.n, 2)) @ factors[i].T
            for i, blk in enumerate(design.blocks)
        ]
    r1 = tuple(f + e[:, 0] for f, e in zip(model.f1, eps_blocks))
    r0 = tuple(f + e[:, 1] for f, e in zip(model.f0, eps_blocks))
    return PotentialWorld(design=design, r1=r1, r0=r0)


def true_block_variance(truth) -> np.ndarray:
    """Design-based variance of each block effect tau_hat_i.

    For a PotentialWorld this is over randomization only; for a CateModel it
    also integrates over the noise law (whose between-arm covariance never
    enters, because a unit reveals exactly one arm).
    """
    n1 = truth.design.treated_counts
    n0 = truth.design.control_counts
    n = truth.design.sizes
    if isinstance(truth, PotentialWorld):
        return truth.sigma2_treated / n1 + truth.sigma2_control / n0 - truth.sigma2_tau / n
    if isinstance(truth, CateModel):
        systematic = (
            truth.sigma2_f_treated / n1
            + truth.sigma2_f_control / n0
            - truth.sigma2_f_tau / n
        )
        return truth.noise_var_treated / n1 + truth.noise_var_control / n0 + systematic
    raise TypeError(f"expected PotentialWorld or CateModel, got {type(truth).__name__}")


def true_ate_variance(truth) -> float:
    """Variance of the weighted difference in means, B^{-2} sum w_i^2 var_i."""
    w = block_weights(truth.design)
    return float(np.sum(w**2 * true_block_variance(truth))) / truth.design.n_blocks**2


def _effect_means(truth) -> np.ndarray:
    if isinstance(truth, PotentialWorld):
        return truth.tau_bar
    if isinstance(truth, CateModel):
        return truth.f_bar
    raise TypeError(f"expected PotentialWorld or CateModel, got {type(truth).__name__}")


def expected_bias_s1(truth, w: np.ndarray, q: QMatrix) -> float:
    """Exact expectation gap of the s1 estimator: B^{-2} mu' W (I-H) W mu.

    mu is the leverage-scaled vector of mean effects, tau_bar/sqrt(1-h) for a
    schedule and f_bar/sqrt(1-h) for a noise model. Nonnegative by
    construction, hence the estimator is conservative.
    """
    w = np.asarray(w, dtype=float)
    mu = _effect_means(truth) / np.sqrt(1.0 - q.leverages)
    v = w * mu
    resid = v - q.hat @ v
    return float(resid @ resid) / truth.design.n_blocks**2


def expected_bias_s2(truth, w: np.ndarray, q: QMatrix) -> float:
    """Exact expectation gap of the s2 estimator.

    Sum of a cross-leverage term, sum_i w_i^2 var_i sum_{j != i}
    h_ij^2/(1-h_jj)^2, and the quadratic form of the unscaled mean effects
    through (I-H) Psi (I-H). Both pieces are nonnegative.
    """
    w = np.asarray(w, dtype=float)
    b = truth.design.n_blocks
    var_i = true_block_variance(truth)
    h2 = q.hat**2
    inv2 = 1.0 / (1.0 - q.leverages) ** 2
    cross = h2 @ inv2 - np.diag(h2) * inv2
    term1 = float(np.sum(w**2 * var_i * cross))
    v = w * _effect_means(truth)
    resid = v - q.hat @ v
    term2 = float(np.sum(resid**2 * inv2))
    return (term1 + term2) / b**2


def expected_bias_s3(model: CateModel, w: np.ndarray, q: QMatrix) -> float:
    """Exact expectation gap of the s3 estimator under its stated premises.

    Requires equal block sizes and homoskedastic block effects (equal
    var(tau_hat_i)); then the gap is B^{-2} f_bar' (I-H) Psi_tilde (I-H) f_bar,
    zero whenever f_bar lies in col(Q).
    """
    if not isinstance(model, CateModel):
        raise PreconditionViolated("s3 bias formula is stated for noise models only")
    w = np.asarray(w, dtype=float)
    if not np.allclose(w, 1.0, rtol=0.0, atol=1e-12):
        raise PreconditionViolated("s3 bias formula requires equal block sizes")
    var_i = true_block_variance(model)
    spread = float(var_i.max() - var_i.min())
    if spread > 1e-8 * max(float(np.abs(var_i).max()), 1.0):
        raise PreconditionViolated("s3 bias formula requires homoskedastic block effects")
    v = model.f_bar
    resid = v - q.hat @ v
    return float(np.sum(resid**2 / (1.0 - q.leverages))) / model.design.n_blocks**2


def expected_bias_scs(truth, w: np.ndarray) -> float:
    """Exact expectation gap of the coarse classical estimator.

    B^{-2} sum_i w_i^2 sigma2_tau_i / n_i, where sigma2_tau is the within-block
    variance of unit-level effects. For noise models only the systematic part
    appears: arm noise raises the plug-in's expectation and the true variance
    by the same amount, so it drops out of the gap.
    """
    w = np.asarray(w, dtype=float)
    if isinstance(truth, PotentialWorld):
        s2t = truth.sigma2_tau
    elif isinstance(truth, CateModel):
        s2t = truth.sigma2_f_tau
    else:
        raise TypeError(f"expected PotentialWorld or CateModel, got {type(truth).__name__}")
    return float(np.sum(w**2 * s2t / truth.design.sizes)) / truth.design.n_blocks**2


def brute_force_expectation(
    world: PotentialWorld, statistic, cap: int = DEFAULT_BRUTE_FORCE_CAP
) -> float:
    """Average ``statistic(data)`` over the whole assignment space.

    The statistic receives the AssignmentAndOutcomes for each assignment in
    turn. Raises SpaceTooLarge when the space exceeds ``cap``.
    """
    return brute_force_expectations(world, {"stat": statistic}, cap=cap)["stat"]


def brute_force_expectations(
    world: PotentialWorld, statistics: dict, cap: int = DEFAULT_BRUTE_FORCE_CAP
) -> dict:
    """One enumeration pass serving several statistics at once."""
    design = world.design
    count = n_assignments(design)
    totals = {name: 0.0 for name in statistics}
    for a in enumerate_assignments(design, cap=cap):
        data = observed_responses(world, a)
        for name, fn in statistics.items():
            totals[name] += fn(data)
    return {name: total / count for name, total in totals.items()}


@dataclass(frozen=True)
class LimitDiagnostics:
    """Finite-sample analogs of the large-B decomposition of the s1 gap.

    ``beta_quadform`` is B^{-1} (W tau_bar)' H_M (W tau_bar), the quadratic
    form of the mean effects through the added-covariate projection;
    ``basis_gap`` is B (s1(Q1) - s1(Q2)) for the supplied assignment. As B
    grows the randomization mean of the gap approaches the quadform.
    """

    beta_quadform: float
    basis_gap: float


def empirical_limit_diagnostics(
    world: PotentialWorld, xbar, assignment: Assignment, poly_degree: int = 1
) -> LimitDiagnostics:
    """Compare the realized covariate-adjustment gap against its limit."""
    design = world.design
    w = block_weights(design)
    q1 = build_q1(design)
    q2 = build_q2(design, xbar=xbar, poly_degree=poly_degree)
    h_m = q2.hat - q1.hat
    v = w * world.tau_bar
    beta_quadform = float(v @ h_m @ v) / design.n_blocks
    effects = block_effects(design, observed_responses(world, assignment))
    gap = design.n_blocks * (var_s1(effects, w, q1) - var_s1(effects, w, q2))
    return LimitDiagnostics(beta_quadform=beta_quadform, basis_gap=gap)
