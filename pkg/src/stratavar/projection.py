"""Covariate bases, hat matrices, and leverages at the block level.

The variance estimators project the vector of weighted block effects onto
the column space of a B x L basis Q. Two standard bases are provided:

* ``build_q1``: intercept plus centered block weights (the weights column is
  dropped when all blocks have equal size, where it is identically zero).
* ``build_q2``: the q1 columns plus weighted, q1-orthogonalized block means
  of covariates, optionally expanded in polynomials of the unit values.

All rank decisions use column-pivoted QR with tolerance
``1e-10 * (largest column norm)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .design import BlockDesign, block_weights
from .errors import (
    DegenerateCovariate,
    DegenerateCovariateWarning,
    DimensionMismatch,
    InsufficientBlocks,
    LeverageOne,
    RankDeficient,
    TooManyColumns,
)

RANK_TOL = 1e-10
LEVERAGE_TOL = 1e-10


@dataclass(frozen=True)
class QMatrix:
    """A full-column-rank block-level basis with its projection geometry.

    ``values`` is B x L; ``hat`` is the B x B projection onto col(values);
    ``leverages`` its diagonal. ``q1_rank`` counts the leading base columns
    (intercept and, if present, centered weights); ``added_covariate_rank``
    counts the covariate columns that survived degeneracy and collinearity
    reduction. ``dropped_columns`` records 0-based indices of the supplied
    covariate columns that were removed, with human-readable ``notes``.
    """

    values: np.ndarray
    hat: np.ndarray
    leverages: np.ndarray
    rank: int
    kind: str
    q1_rank: int
    added_covariate_rank: int
    dropped_columns: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def n_blocks(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PsiMatrices:
    """Diagonals of the leverage reweighting matrices.

    ``psi`` holds 1/(1-h_ii)^2 and ``psi_tilde`` holds 1/(1-h_ii).
    """

    psi: np.ndarray
    psi_tilde: np.ndarray


def hat_and_leverage(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Projection matrix and leverages for a full-column-rank basis.

    Args:
        values: (B, L) array, L >= 1.

    Returns:
        (hat, leverages) where hat is (B, B) symmetric idempotent and
        leverages = diag(hat).

    Raises:
        RankDeficient: numerical rank below L.
        LeverageOne: some leverage reaches 1 - 1e-10.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[1] < 1:
        raise DimensionMismatch(f"basis must be a 2-d array with columns, got shape {v.shape}")
    b, ncol = v.shape
    if ncol > b:
        raise RankDeficient(f"basis has {ncol} columns but only {b} rows")
    q, r, _ = scipy.linalg.qr(v, mode="economic", pivoting=True)
    tol = RANK_TOL * float(np.linalg.norm(v, axis=0).max())
    rank = int(np.sum(np.abs(np.diag(r)) > tol))
    if rank < ncol:
        raise RankDeficient(f"basis has numerical rank {rank} < {ncol} columns")
    hat = q @ q.T
    hat = (hat + hat.T) / 2.0
    lev = np.clip(np.diag(hat).copy(), 0.0, 1.0)
    if np.any(lev >= 1.0 - LEVERAGE_TOL):
        worst = int(np.argmax(lev))
        raise LeverageOne(f"leverage {lev[worst]:.12f} at block index {worst} is numerically one")
    return hat, lev


def _independent_columns(values: np.ndarray) -> list[int]:
    """Indices of the earliest maximal independent column subset.

    Greedy in column order so a later duplicate is the one dropped, matching
    how regression software resolves collinearity.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[1] == 0:
        return []
    norms = np.linalg.norm(v, axis=0)
    if norms.max() == 0.0:
        return []
    tol = RANK_TOL * float(norms.max())
    kept: list[int] = []
    basis = np.zeros((v.shape[0], 0))
    for j in range(v.shape[1]):
        col = v[:, j]
        if basis.shape[1]:
            col = col - basis @ (basis.T @ col)
            col = col - basis @ (basis.T @ col)
        norm = float(np.linalg.norm(col))
        if norm > tol:
            kept.append(j)
            basis = np.column_stack([basis, col / norm])
    return kept


def build_q1(design: BlockDesign) -> QMatrix:
    """Intercept-and-weights basis [e, w - e] (weights column only when unequal).

    Raises InsufficientBlocks when the basis would use every degree of freedom.
    """
    b = design.n_blocks
    w = block_weights(design)
    cols = [np.ones(b)]
    if not np.allclose(w, 1.0, rtol=0.0, atol=1e-12):
        cols.append(w - 1.0)
    values = np.column_stack(cols)
    ncol = values.shape[1]
    if ncol >= b:
        raise InsufficientBlocks(
            f"intercept-and-weights basis has {ncol} columns; needs more than {b} blocks"
        )
    hat, lev = hat_and_leverage(values)
    return QMatrix(
        values=values,
        hat=hat,
        leverages=lev,
        rank=ncol,
        kind="q1",
        q1_rank=ncol,
        added_covariate_rank=0,
    )


def _expanded_block_means(
    design: BlockDesign, xbar, poly_degree: int, columns=None
) -> np.ndarray:
    """Block means of unit-level covariate powers 1..poly_degree, as a B x (K*p) array.

    When ``xbar`` is given it is taken as block-constant covariate values and
    powered directly; otherwise unit-level covariates come from the design,
    optionally restricted to the ``columns`` indices.
    """
    if poly_degree < 1:
        raise DimensionMismatch(f"poly_degree must be >= 1, got {poly_degree}")
    if xbar is not None:
        x = np.asarray(xbar, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != design.n_blocks:
            raise DimensionMismatch(
                f"xbar has {x.shape[0]} rows for {design.n_blocks} blocks"
            )
        return np.column_stack([x**p for p in range(1, poly_degree + 1)])
    per_block = design.block_covariates()
    if columns is not None:
        bad = [j for j in columns if not 0 <= j < design.covariate_dim]
        if bad:
            raise DimensionMismatch(
                f"covariate column indices {bad} out of range for {design.covariate_dim} columns"
            )
        per_block = [arr[:, list(columns)] for arr in per_block]
    rows = []
    for arr in per_block:
        rows.append(
            np.concatenate([(arr**p).mean(axis=0) for p in range(1, poly_degree + 1)])
        )
    return np.vstack(rows)


def build_q2(design: BlockDesign, xbar=None, poly_degree: int = 1, columns=None) -> QMatrix:
    """q1 columns plus weighted covariate block means, orthogonalized against q1.

    The added block M = (I - H_q1) W Xbar keeps the hat matrix identical to the
    one for [q1, W Xbar] while making the two column groups exactly orthogonal.
    Covariate columns that vanish after weighting and centering are dropped with
    a DegenerateCovariateWarning; collinear survivors are dropped silently into
    the metadata. Dropping everything raises DegenerateCovariate.

    Args:
        design: validated block design.
        xbar: optional (B, K) block-level covariate values. Default: block means
            of unit powers computed from the design's own covariates.
        poly_degree: expand each covariate in powers 1..poly_degree.
        columns: optional indices restricting which design covariates enter;
            only meaningful when ``xbar`` is None.
    """
    q1 = build_q1(design)
    b = design.n_blocks
    w = block_weights(design)
    x = _expanded_block_means(design, xbar, poly_degree, columns)
    raw = w[:, None] * x
    m = raw - q1.hat @ raw

    raw_norms = np.linalg.norm(raw, axis=0)
    m_norms = np.linalg.norm(m, axis=0)
    scale = max(float(raw_norms.max()), 1e-300)
    degenerate = m_norms <= RANK_TOL * scale
    dropped: list[int] = []
    notes: list[str] = []
    if np.any(degenerate):
        idx = [int(j) for j in np.flatnonzero(degenerate)]
        dropped.extend(idx)
        notes.append(
            f"covariate columns {idx} vanished after weighting and centering; dropped"
        )
        warnings.warn(notes[-1], DegenerateCovariateWarning, stacklevel=2)
    kept_idx = [int(j) for j in np.flatnonzero(~degenerate)]
    if not kept_idx:
        raise DegenerateCovariate(
            "all covariate columns vanished after weighting and centering"
        )
    m_kept = m[:, kept_idx]

    indep_local = _independent_columns(m_kept)
    if len(indep_local) < len(kept_idx):
        collinear = sorted(set(range(len(kept_idx))) - set(indep_local))
        collinear_orig = [kept_idx[j] for j in collinear]
        dropped.extend(collinear_orig)
        notes.append(f"covariate columns {collinear_orig} collinear with earlier ones; dropped")
    m_final = m_kept[:, indep_local]
    added_rank = m_final.shape[1]

    ncol = q1.rank + added_rank
    if ncol >= b:
        raise TooManyColumns(
            f"basis would have {ncol} columns for {b} blocks; at least one residual "
            "degree of freedom is required"
        )
    values = np.column_stack([q1.values, m_final])
    hat, lev = hat_and_leverage(values)
    return QMatrix(
        values=values,
        hat=hat,
        leverages=lev,
        rank=ncol,
        kind="q2",
        q1_rank=q1.rank,
        added_covariate_rank=added_rank,
        dropped_columns=tuple(sorted(dropped)),
        notes=tuple(notes),
    )


def psi_matrices(q: QMatrix) -> PsiMatrices:
    """Leverage reweighting diagonals 1/(1-h)^2 and 1/(1-h) for a basis."""
    one_minus = 1.0 - q.leverages
    if np.any(one_minus <= LEVERAGE_TOL):
        raise LeverageOne("a leverage is numerically one; reweighting undefined")
    return PsiMatrices(psi=1.0 / one_minus**2, psi_tilde=1.0 / one_minus)
