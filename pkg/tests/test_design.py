"""Design construction, validation, enumeration, and sampling."""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from stratavar import (
    BlockDesign,
    DesignClass,
    DimensionMismatch,
    InfeasibleBlock,
    SpaceTooLarge,
    TooFewBlocks,
    block_weights,
    classify_design,
    enumerate_assignments,
    n_assignments,
    sample_assignment,
    validate_design,
)


def test_weights_average_to_one_and_match_hand_values():
    design = BlockDesign.from_sizes([2, 3], [1, 1])
    w = block_weights(design)
    # B=2, N=5: w = (2*2/5, 2*3/5)
    assert w == pytest.approx([0.8, 1.2], abs=1e-15)
    assert w.mean() == pytest.approx(1.0, abs=1e-15)

    rng = np.random.default_rng(0)
    sizes = rng.integers(2, 9, size=17)
    design = BlockDesign.from_sizes(sizes, np.ones_like(sizes))
    assert block_weights(design).mean() == pytest.approx(1.0, abs=1e-12)


def test_validate_rejects_degenerate_designs():
    with pytest.raises(TooFewBlocks):
        validate_design(BlockDesign.from_sizes([4], [2]))
    with pytest.raises(InfeasibleBlock):
        validate_design(BlockDesign.from_sizes([2, 1], [1, 1]))
    with pytest.raises(InfeasibleBlock):
        validate_design(BlockDesign.from_sizes([2, 3], [1, 0]))
    with pytest.raises(InfeasibleBlock):
        validate_design(BlockDesign.from_sizes([2, 3], [1, 3]))


def test_validate_accepts_and_returns_the_design():
    design = BlockDesign.from_sizes([2, 2, 4], [1, 1, 2])
    assert validate_design(design) is design


def test_validate_checks_covariate_consistency():
    good = BlockDesign.from_sizes([2, 2], [1, 1], covariates=[np.ones((2, 3)), np.zeros((2, 3))])
    validate_design(good)

    ragged = BlockDesign.from_sizes([2, 2], [1, 1], covariates=[np.ones((2, 3)), np.zeros((2, 2))])
    with pytest.raises(DimensionMismatch):
        validate_design(ragged)

    wrong_rows = BlockDesign.from_sizes([2, 2], [1, 1], covariates=[np.ones((3, 1)), np.ones((2, 1))])
    with pytest.raises(DimensionMismatch):
        validate_design(wrong_rows)

    nonfinite = BlockDesign.from_sizes(
        [2, 2], [1, 1], covariates=[np.array([[1.0], [np.nan]]), np.ones((2, 1))]
    )
    with pytest.raises(DimensionMismatch):
        validate_design(nonfinite)


def test_classification():
    assert classify_design(BlockDesign.from_sizes([2, 2, 2], [1, 1, 1])) is DesignClass.FINE
    # triplets with a singleton arm on either side stay fine
    assert classify_design(BlockDesign.from_sizes([3, 3], [1, 2])) is DesignClass.FINE
    # a quartet with one treated unit is still fine; 2:2 is coarse
    assert classify_design(BlockDesign.from_sizes([4, 4], [1, 3])) is DesignClass.FINE
    assert classify_design(BlockDesign.from_sizes([4, 4], [2, 2])) is DesignClass.COARSE
    assert classify_design(BlockDesign.from_sizes([4, 6], [2, 3])) is DesignClass.COARSE
    assert classify_design(BlockDesign.from_sizes([2, 4], [1, 2])) is DesignClass.MIXED


def test_assignment_space_size():
    design = BlockDesign.from_sizes([2, 2, 3], [1, 1, 1])
    assert n_assignments(design) == 2 * 2 * 3
    design = BlockDesign.from_sizes([4, 5], [2, 2])
    assert n_assignments(design) == math.comb(4, 2) * math.comb(5, 2)


def test_enumeration_is_exhaustive_and_valid():
    design = BlockDesign.from_sizes([2, 3, 4], [1, 1, 2])
    seen = set()
    for a in enumerate_assignments(design):
        for zi, block in zip(a.z, design.blocks):
            assert len(zi) == block.n
            assert sum(zi) == block.n_treated
        seen.add(a.z)
    assert len(seen) == n_assignments(design) == 2 * 3 * 6


def test_enumeration_order_is_deterministic():
    design = BlockDesign.from_sizes([2, 3], [1, 1])
    listed = [a.z for a in enumerate_assignments(design)]
    # last block varies fastest, treated subsets in ascending index order
    assert listed[0] == ((1, 0), (1, 0, 0))
    assert listed[1] == ((1, 0), (0, 1, 0))
    assert listed[2] == ((1, 0), (0, 0, 1))
    assert listed[3] == ((0, 1), (1, 0, 0))
    assert listed == [a.z for a in enumerate_assignments(design)]


def test_enumeration_cap_raises_before_yielding():
    design = BlockDesign.from_sizes([4] * 10, [2] * 10)
    gen = enumerate_assignments(design, cap=1000)
    with pytest.raises(SpaceTooLarge):
        next(gen)


def test_sampling_is_deterministic_per_seed():
    design = BlockDesign.from_sizes([2, 3, 5], [1, 2, 2])
    a = sample_assignment(design, 123)
    b = sample_assignment(design, 123)
    c = sample_assignment(design, 124)
    assert a.z == b.z
    assert a.z != c.z
    for zi, block in zip(a.z, design.blocks):
        assert sum(zi) == block.n_treated


def test_sampling_accepts_generator_and_seedsequence():
    design = BlockDesign.from_sizes([2, 2], [1, 1])
    from_int = sample_assignment(design, 7)
    from_gen = sample_assignment(design, np.random.default_rng(7))
    from_seq = sample_assignment(design, np.random.SeedSequence(7))
    assert from_int.z == from_gen.z == from_seq.z


def test_sampling_is_uniform_over_the_assignment_space():
    # |Omega| = 2 * 6 = 12; chi-squared goodness of fit on 24000 draws
    design = BlockDesign.from_sizes([2, 4], [1, 2])
    space = [a.z for a in enumerate_assignments(design)]
    index = {z: i for i, z in enumerate(space)}
    counts = np.zeros(len(space))
    rng = np.random.default_rng(2024)
    draws = 24_000
    for _ in range(draws):
        counts[index[sample_assignment(design, rng).z]] += 1
    expected = draws / len(space)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    p = stats.chi2.sf(chi2, df=len(space) - 1)
    assert p > 1e-3


def test_pair_margin_is_one_half():
    design = BlockDesign.from_sizes([2, 2], [1, 1])
    rng = np.random.default_rng(5)
    hits = sum(sample_assignment(design, rng).z[0][0] for _ in range(10_000))
    assert hits / 10_000 == pytest.approx(0.5, abs=0.015)


def test_from_sizes_rejects_ragged_inputs():
    with pytest.raises(DimensionMismatch):
        BlockDesign.from_sizes([2, 2], [1])
    with pytest.raises(DimensionMismatch):
        BlockDesign.from_sizes([2, 2], [1, 1], covariates=[np.ones((2, 1))])


def test_block_covariates_requires_covariates():
    design = BlockDesign.from_sizes([2, 2], [1, 1])
    with pytest.raises(DimensionMismatch):
        design.block_covariates()
