"""Randomization test for treatment effect heterogeneity along covariates.

The statistic is a partial F ratio at the block level: project the weighted
block effects onto the covariate columns of a q2 basis (orthogonal to the
intercept-and-weights columns), and compare that explained square norm to
the residual square norm beyond the full basis,

    F = [v' H_M v / v' (I - H_Q2) v] * (B - rank(Q2)) / K,   v = W tau_hat.

Under the additivity null the observed responses determine both potential
outcomes of every unit (tau == 0 gives r1 = r0 = R), so the randomization
distribution of F can be replayed exactly: enumerate the assignment space
when it is small, or sample it with the add-one Monte Carlo convention
p = (1 + #{F(z) >= t}) / (1 + draws). Imputing any constant effect c on top
of the observed responses would shift each replay's v by c times the weights
column, which both projections annihilate, so the replay distribution and
the p-value do not depend on the imputed constant.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._util import chunk_rng, map_chunks
from .design import AssignmentAndOutcomes, BlockDesign, block_weights, n_assignments
from .errors import BadQPair, ZeroDenominator
from .estimators import block_effects
from .projection import QMatrix

ORTHOGONALITY_TOL = 1e-8
DENOMINATOR_TOL = 1e-12
CHUNK = 8192


@dataclass(frozen=True)
class HetTestResult:
    """Observed statistic and its randomization p-value."""

    f_observed: float
    p_value: float
    draws: int
    exact: bool
    numerator_df: int
    denominator_df: int
    seed: int | None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        finite = math.isfinite(self.f_observed)
        return {
            "schema": "stratavar.het_test.v1",
            "f_observed": float(self.f_observed) if finite else None,
            "p_value": float(self.p_value),
            "draws": int(self.draws),
            "exact": bool(self.exact),
            "numerator_df": int(self.numerator_df),
            "denominator_df": int(self.denominator_df),
            "seed": self.seed,
            "notes": list(self.notes),
        }


def _covariate_block(q2: QMatrix) -> np.ndarray:
    """Orthonormal basis of the added covariate columns, checked against q1."""
    if q2.added_covariate_rank < 1:
        raise BadQPair("basis adds no covariate columns beyond intercept and weights")
    base = q2.values[:, : q2.q1_rank]
    m = q2.values[:, q2.q1_rank :]
    scale = np.linalg.norm(base, axis=0)[None, :] * np.linalg.norm(m, axis=0)[:, None]
    cross = np.abs(m.T @ base)
    if np.any(cross > ORTHOGONALITY_TOL * np.maximum(scale, 1e-300)):
        raise BadQPair("covariate columns are not orthogonal to the base columns")
    qm, _ = scipy.linalg.qr(m, mode="economic")
    return qm


def f_statistic(tau_hat: np.ndarray, w: np.ndarray, q2: QMatrix) -> float:
    """Partial F ratio of the weighted block effects for one assignment.

    Raises ZeroDenominator when the residual beyond the full basis vanishes.
    """
    tau_hat = np.asarray(tau_hat, dtype=float)
    w = np.asarray(w, dtype=float)
    qm = _covariate_block(q2)
    b = q2.n_blocks
    k = q2.added_covariate_rank
    df_den = b - q2.rank
    v = w * tau_hat
    num = float(np.sum((qm.T @ v) ** 2))
    resid = v - q2.hat @ v
    den = float(resid @ resid)
    if den <= DENOMINATOR_TOL * float(v @ v):
        raise ZeroDenominator("residual sum of squares beyond the basis is zero")
    return (num / den) * (df_den / k)


def _f_values(
    t_mat: np.ndarray,
    w: np.ndarray,
    qm: np.ndarray,
    hat: np.ndarray,
    df_den: int,
    k: int,
) -> np.ndarray:
    """F for each row of a (draws, B) matrix of block effects; inf on zero residual."""
    v = t_mat * w
    num = np.square(v @ qm).sum(axis=1)
    resid = v - v @ hat
    den = np.square(resid).sum(axis=1)
    scale = np.square(v).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (num / den) * (df_den / k)
    f[den <= DENOMINATOR_TOL * scale] = np.inf
    return f


def _block_option_values(r: np.ndarray, k: int) -> np.ndarray:
    """tau_hat of every treated subset of one block, lexicographic subset order."""
    n = r.shape[0]
    combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64)
    tsum = r[combos].sum(axis=1)
    total = float(r.sum())
    return tsum / k - (total - tsum) / (n - k)


def _exact_chunk(args) -> tuple[int, int]:
    start, stop, options, strides, counts, w, qm, hat, df_den, k, thresh = args
    flat = np.arange(start, stop, dtype=np.int64)
    t_mat = np.empty((flat.shape[0], len(options)))
    for i, opts in enumerate(options):
        t_mat[:, i] = opts[(flat // strides[i]) % counts[i]]
    f = _f_values(t_mat, w, qm, hat, df_den, k)
    return int(np.sum(f >= thresh)), flat.shape[0]


def _mc_chunk(args) -> tuple[int, int]:
    seed, chunk_index, m, blocks, w, qm, hat, df_den, k, thresh = args
    rng = chunk_rng(seed, chunk_index)
    t_mat = np.empty((m, len(blocks)))
    for i, (r, n, kt) in enumerate(blocks):
        keys = rng.random((m, n))
        treated = np.argpartition(keys, kth=kt - 1, axis=1)[:, :kt]
        tsum = r[treated].sum(axis=1)
        total = float(r.sum())
        t_mat[:, i] = tsum / kt - (total - tsum) / (n - kt)
    f = _f_values(t_mat, w, qm, hat, df_den, k)
    return int(np.sum(f >= thresh)), m


def permutation_test(
    design: BlockDesign,
    data: AssignmentAndOutcomes,
    q2: QMatrix,
    max_draws: int = 10_000,
    seed: int = 0,
    threads: int = 1,
) -> HetTestResult:
    """Randomization p-value for the constant-treatment-effect null.

    Enumerates the assignment space exactly when it holds at most
    ``max_draws`` assignments; otherwise samples ``max_draws`` assignments
    with the add-one convention. Ties count in favor of the null. A
    degenerate observed statistic (zero residual beyond the basis) is
    treated as infinite, so its p-value counts only the replays that are
    themselves degenerate, and a note records the condition.
    """
    w = block_weights(design)
    effects = block_effects(design, data)
    qm = _covariate_block(q2)
    k = q2.added_covariate_rank
    df_den = design.n_blocks - q2.rank

    notes: list[str] = []
    t = _f_values(effects.tau_hat[None, :], w, qm, q2.hat, df_den, k)[0]
    if np.isinf(t):
        notes.append(
            "observed residual beyond the basis is zero; p-value is the smallest attainable"
        )
    thresh = t - 1e-12 * abs(t) if np.isfinite(t) else np.inf

    blocks = [
        (np.asarray(data.responses[i], dtype=float), blk.n, blk.n_treated)
        for i, blk in enumerate(design.blocks)
    ]
    total = n_assignments(design)
    if total <= max_draws:
        options = [_block_option_values(r, kt) for r, _, kt in blocks]
        counts = np.array([o.shape[0] for o in options], dtype=np.int64)
        strides = np.ones_like(counts)
        for i in range(len(counts) - 2, -1, -1):
            strides[i] = strides[i + 1] * counts[i + 1]
        starts = list(range(0, total, CHUNK))
        args = [
            (s, min(s + CHUNK, total), options, strides, counts, w, qm, q2.hat, df_den, k, thresh)
            for s in starts
        ]
        results = map_chunks(_exact_chunk, args, threads)
        hits = sum(h for h, _ in results)
        return HetTestResult(
            f_observed=float(t),
            p_value=hits / total,
            draws=total,
            exact=True,
            numerator_df=k,
            denominator_df=df_den,
            seed=None,
            notes=tuple(notes),
        )

    n_chunks = math.ceil(max_draws / CHUNK)
    args = [
        (seed, c, min(CHUNK, max_draws - c * CHUNK), blocks, w, qm, q2.hat, df_den, k, thresh)
        for c in range(n_chunks)
    ]
    results = map_chunks(_mc_chunk, args, threads)
    hits = sum(h for h, _ in results)
    draws = sum(m for _, m in results)
    return HetTestResult(
        f_observed=float(t),
        p_value=(1 + hits) / (1 + draws),
        draws=draws,
        exact=False,
        numerator_df=k,
        denominator_df=df_den,
        seed=int(seed),
        notes=tuple(notes),
    )
