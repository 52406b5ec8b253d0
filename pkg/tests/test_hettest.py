"""Partial F statistic and the randomization test for effect heterogeneity."""
from __future__ import annotations

import numpy as np
import pytest

from stratavar import (
    Assignment,
    AssignmentAndOutcomes,
    BadQPair,
    BlockDesign,
    ZeroDenominator,
    block_effects,
    block_weights,
    build_q1,
    build_q2,
    enumerate_assignments,
    f_statistic,
    permutation_test,
)


def _pairs_with_effects(taus, xbar):
    """Pairs (t, 0) with the first unit treated, so tau_hat equals taus."""
    taus = np.asarray(taus, dtype=float)
    design = BlockDesign.from_sizes([2] * taus.size, [1] * taus.size)
    data = AssignmentAndOutcomes(
        assignment=Assignment(z=tuple((1, 0) for _ in taus)),
        responses=tuple(np.array([t, 0.0]) for t in taus),
    )
    q2 = build_q2(design, xbar=np.asarray(xbar, dtype=float))
    return design, data, q2


def _lstsq_partial_f(v, q1_cols, q2_cols, k):
    rss = []
    for cols in (q1_cols, q2_cols):
        fit, *_ = np.linalg.lstsq(cols, v, rcond=None)
        resid = v - cols @ fit
        rss.append(float(resid @ resid))
    df_den = v.size - q2_cols.shape[1]
    return ((rss[0] - rss[1]) / rss[1]) * (df_den / k)


def test_f_statistic_hand_value():
    design, data, q2 = _pairs_with_effects([1.0, 2.0, 3.0, 5.0], [1.0, 2.0, 3.0, 4.0])
    w = block_weights(design)
    tau_hat = block_effects(design, data).tau_hat
    assert tau_hat == pytest.approx([1.0, 2.0, 3.0, 5.0])
    # Regressing (1, 2, 3, 5) on an intercept and x = (1, 2, 3, 4) explains
    # 8.45 of the 8.75 centered sum of squares, leaving 0.3 on 2 df.
    assert f_statistic(tau_hat, w, q2) == pytest.approx((8.45 / 0.3) * 2.0, rel=1e-12)
    result = permutation_test(design, data, q2)
    assert result.f_observed == pytest.approx(169.0 / 3.0, rel=1e-12)
    assert result.numerator_df == 1
    assert result.denominator_df == 2
    assert result.exact


def test_f_statistic_matches_least_squares_partial_f():
    rng = np.random.default_rng(42)
    for _ in range(20):
        b = int(rng.integers(6, 12))
        design = BlockDesign.from_sizes([2] * b, [1] * b)
        xbar = rng.normal(size=(b, 2))
        q1 = build_q1(design)
        q2 = build_q2(design, xbar=xbar)
        tau_hat = rng.normal(size=b)
        w = block_weights(design)
        v = w * tau_hat
        raw_q2 = np.column_stack([q1.values, w[:, None] * xbar])
        direct = _lstsq_partial_f(v, q1.values, raw_q2, k=q2.added_covariate_rank)
        assert f_statistic(tau_hat, w, q2) == pytest.approx(direct, rel=1e-9)


def test_f_statistic_matches_least_squares_on_unequal_blocks():
    rng = np.random.default_rng(43)
    design = BlockDesign.from_sizes([2, 2, 3, 3, 4, 4, 5, 5], [1, 1, 1, 2, 2, 2, 2, 3])
    xbar = rng.normal(size=design.n_blocks)
    q1 = build_q1(design)
    q2 = build_q2(design, xbar=xbar)
    w = block_weights(design)
    tau_hat = rng.normal(size=design.n_blocks)
    v = w * tau_hat
    raw_q2 = np.column_stack([q1.values, w * xbar])
    direct = _lstsq_partial_f(v, q1.values, raw_q2, k=1)
    assert f_statistic(tau_hat, w, q2) == pytest.approx(direct, rel=1e-9)


def test_f_statistic_invariant_to_constant_treated_shift():
    rng = np.random.default_rng(7)
    design = BlockDesign.from_sizes([2, 2, 3, 3, 4, 4], [1, 1, 1, 2, 2, 3])
    w = block_weights(design)
    q2 = build_q2(design, xbar=rng.normal(size=design.n_blocks))
    for c in (-11.0, 0.5, 40.0):
        z = tuple(
            tuple(rng.permutation([1] * blk.n_treated + [0] * blk.n_control))
            for blk in design.blocks
        )
        responses = tuple(rng.normal(size=blk.n) for blk in design.blocks)
        data = AssignmentAndOutcomes(assignment=Assignment(z=z), responses=responses)
        shifted = AssignmentAndOutcomes(
            assignment=data.assignment,
            responses=tuple(r + c * np.asarray(zi, dtype=float) for r, zi in zip(responses, z)),
        )
        base = f_statistic(block_effects(design, data).tau_hat, w, q2)
        moved = f_statistic(block_effects(design, shifted).tau_hat, w, q2)
        assert moved == pytest.approx(base, rel=1e-9)


def test_zero_denominator_when_effects_fit_basis_exactly():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    design, data, q2 = _pairs_with_effects(2.0 + 3.0 * x, x)
    w = block_weights(design)
    tau_hat = block_effects(design, data).tau_hat
    with pytest.raises(ZeroDenominator):
        f_statistic(tau_hat, w, q2)


def test_basis_without_covariates_is_rejected():
    design = BlockDesign.from_sizes([2] * 4, [1] * 4)
    q1 = build_q1(design)
    with pytest.raises(BadQPair):
        f_statistic(np.arange(4.0), block_weights(design), q1)
    data = AssignmentAndOutcomes(
        assignment=Assignment(z=((1, 0),) * 4),
        responses=tuple(np.array([float(i), 0.0]) for i in range(4)),
    )
    with pytest.raises(BadQPair):
        permutation_test(design, data, q1)


def test_exact_path_flags_and_determinism():
    rng = np.random.default_rng(11)
    taus = rng.normal(size=8) + 0.8 * np.arange(8)
    design, data, q2 = _pairs_with_effects(taus, np.arange(8.0))
    first = permutation_test(design, data, q2, max_draws=10_000, seed=5)
    second = permutation_test(design, data, q2, max_draws=10_000, seed=99)
    assert first.exact and second.exact
    assert first.draws == 256
    assert first.seed is None
    assert first.p_value == second.p_value
    assert 0.0 < first.p_value <= 1.0
    threaded = permutation_test(design, data, q2, max_draws=10_000, threads=2)
    assert threaded.p_value == first.p_value


def test_exact_path_matches_direct_enumeration():
    rng = np.random.default_rng(29)
    design = BlockDesign.from_sizes([2, 2, 3, 4], [1, 1, 1, 2])
    w = block_weights(design)
    q2 = build_q2(design, xbar=rng.normal(size=design.n_blocks))
    responses = tuple(rng.normal(size=blk.n) for blk in design.blocks)
    observed = Assignment(z=tuple(next(iter(enumerate_assignments(design))).z))
    data = AssignmentAndOutcomes(assignment=observed, responses=responses)

    t = f_statistic(block_effects(design, data).tau_hat, w, q2)
    thresh = t - 1e-12 * abs(t)
    hits = 0
    total = 0
    for a in enumerate_assignments(design):
        replay = AssignmentAndOutcomes(assignment=a, responses=responses)
        try:
            f = f_statistic(block_effects(design, replay).tau_hat, w, q2)
        except ZeroDenominator:
            f = np.inf
        hits += f >= thresh
        total += 1

    result = permutation_test(design, data, q2, max_draws=10_000)
    assert result.exact
    assert result.draws == total == 72
    assert result.f_observed == pytest.approx(t, rel=1e-12)
    assert result.p_value == pytest.approx(hits / total, abs=0.0)


def test_monte_carlo_agrees_with_exact_enumeration():
    rng = np.random.default_rng(3)
    taus = rng.normal(size=14) + 0.55 * np.arange(14) / 13.0
    design, data, q2 = _pairs_with_effects(taus, np.arange(14.0))
    exact = permutation_test(design, data, q2, max_draws=1 << 14)
    assert exact.exact and exact.draws == 16384
    assert 0.05 < exact.p_value < 0.9
    mc = permutation_test(design, data, q2, max_draws=10_000, seed=1)
    assert not mc.exact
    assert mc.draws == 10_000
    assert abs(mc.p_value - exact.p_value) < 0.02


def test_monte_carlo_determinism_and_thread_invariance():
    rng = np.random.default_rng(13)
    taus = rng.normal(size=15)
    design, data, q2 = _pairs_with_effects(taus, np.arange(15.0))
    one = permutation_test(design, data, q2, max_draws=9_000, seed=4, threads=1)
    two = permutation_test(design, data, q2, max_draws=9_000, seed=4, threads=3)
    assert not one.exact
    assert one.seed == 4
    assert one.p_value == two.p_value
    assert one.draws == two.draws == 9_000
    other_seed = permutation_test(design, data, q2, max_draws=9_000, seed=5)
    assert other_seed.p_value >= 1.0 / 9_001
    assert one.p_value >= 1.0 / 9_001
    assert one.p_value <= 1.0


def test_degenerate_observed_statistic_counts_degenerate_replays():
    x = np.array([1.0, 2.0, 3.0])
    design, data, q2 = _pairs_with_effects(x.copy(), x)
    result = permutation_test(design, data, q2)
    assert result.exact
    assert np.isinf(result.f_observed)
    assert result.notes
    # Only the two sign patterns +-(1, 2, 3) fit an intercept plus slope in x
    # exactly, so exactly two of the eight replays are degenerate too.
    assert result.p_value == pytest.approx(2.0 / 8.0, abs=0.0)
    payload = result.to_dict()
    assert payload["f_observed"] is None
    assert payload["notes"]


def test_constant_responses_give_p_one():
    design = BlockDesign.from_sizes([2] * 4, [1] * 4)
    data = AssignmentAndOutcomes(
        assignment=Assignment(z=((1, 0),) * 4),
        responses=tuple(np.full(2, 7.0) for _ in range(4)),
    )
    q2 = build_q2(design, xbar=np.arange(4.0))
    result = permutation_test(design, data, q2)
    assert result.p_value == 1.0
    assert result.notes


def test_result_dict_validates_against_shipped_schema():
    jsonschema = pytest.importorskip("jsonschema")
    import json
    from importlib import resources

    schema = json.loads(
        resources.files("stratavar").joinpath("schemas/het_test.schema.json").read_text()
    )
    rng = np.random.default_rng(21)
    taus = rng.normal(size=6)
    design, data, q2 = _pairs_with_effects(taus, np.arange(6.0))
    result = permutation_test(design, data, q2)
    jsonschema.validate(result.to_dict(), schema)

    x = np.array([1.0, 2.0, 3.0])
    design, data, q2 = _pairs_with_effects(x.copy(), x)
    degenerate = permutation_test(design, data, q2)
    jsonschema.validate(degenerate.to_dict(), schema)
