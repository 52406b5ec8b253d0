"""Randomization-based estimation and conservative variance estimation
for block-randomized experiments.

The package covers stratified designs from matched pairs to coarse strata:
a weighted difference-in-means effect estimator, classical and
projection-based variance estimators whose conservativeness can be tuned
with block-level covariates, an exact permutation test for constant
treatment effects, and simulation studies of all of the above.
"""

from __future__ import annotations

from .design import (
    Assignment,
    AssignmentAndOutcomes,
    Block,
    BlockDesign,
    DesignClass,
    block_weights,
    classify_design,
    enumerate_assignments,
    n_assignments,
    sample_assignment,
    validate_design,
)
from .errors import (
    BadQPair,
    DegenerateCovariate,
    DegenerateCovariateWarning,
    DesignError,
    DimensionMismatch,
    EstimatorWarning,
    IncompatibleEstimator,
    InfeasibleBlock,
    InputError,
    InsufficientBlocks,
    InvalidAlpha,
    LeverageOne,
    NotCoarse,
    NumericalError,
    ParseError,
    PreconditionViolated,
    RankDeficient,
    SchemaError,
    SpaceTooLarge,
    StratavarError,
    TooFewBlocks,
    TooManyColumns,
    UnequalBlocks,
    ZeroDenominator,
)
from .estimators import (
    BlockEffects,
    VarianceReport,
    analyze_experiment,
    block_effects,
    confidence_interval,
    estimate_ate,
    var_coarse_classical,
    var_paired_classical,
    var_s1,
    var_s2,
    var_s3,
)
from .experiment_io import ingest_csv, write_experiment_csv
from .hettest import HetTestResult, f_statistic, permutation_test
from .oracle import (
    CateModel,
    LimitDiagnostics,
    PotentialWorld,
    brute_force_expectation,
    brute_force_expectations,
    cate,
    draw_world,
    empirical_limit_diagnostics,
    expected_bias_s1,
    expected_bias_s2,
    expected_bias_s3,
    expected_bias_scs,
    observed_responses,
    sate,
    true_ate_variance,
    true_block_variance,
)
from .projection import QMatrix, build_q1, build_q2, psi_matrices
from .simulate import (
    TABLE1_ESTIMATORS,
    TABLE1_QSPECS,
    TABLE1_RAW_COLUMNS,
    FriedmanConfig,
    QSpec,
    Table1Result,
    block_level_covariates,
    correct_transforms,
    friedman_function,
    friedman_sizes,
    friedman_world,
    pairs_quartets_study,
    pate_demo,
    resolve_qspec,
    run_power_curve,
    run_table1,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "AssignmentAndOutcomes",
    "BadQPair",
    "Block",
    "BlockDesign",
    "BlockEffects",
    "CateModel",
    "DegenerateCovariate",
    "DegenerateCovariateWarning",
    "DesignClass",
    "DesignError",
    "DimensionMismatch",
    "EstimatorWarning",
    "FriedmanConfig",
    "HetTestResult",
    "IncompatibleEstimator",
    "InfeasibleBlock",
    "InputError",
    "InsufficientBlocks",
    "InvalidAlpha",
    "LeverageOne",
    "LimitDiagnostics",
    "NotCoarse",
    "NumericalError",
    "ParseError",
    "PotentialWorld",
    "PreconditionViolated",
    "QMatrix",
    "QSpec",
    "RankDeficient",
    "SchemaError",
    "SpaceTooLarge",
    "StratavarError",
    "TABLE1_ESTIMATORS",
    "TABLE1_QSPECS",
    "TABLE1_RAW_COLUMNS",
    "Table1Result",
    "TooFewBlocks",
    "TooManyColumns",
    "UnequalBlocks",
    "VarianceReport",
    "ZeroDenominator",
    "__version__",
    "analyze_experiment",
    "block_effects",
    "block_level_covariates",
    "block_weights",
    "brute_force_expectation",
    "brute_force_expectations",
    "build_q1",
    "build_q2",
    "cate",
    "classify_design",
    "confidence_interval",
    "correct_transforms",
    "draw_world",
    "empirical_limit_diagnostics",
    "enumerate_assignments",
    "estimate_ate",
    "expected_bias_s1",
    "expected_bias_s2",
    "expected_bias_s3",
    "expected_bias_scs",
    "f_statistic",
    "friedman_function",
    "friedman_sizes",
    "friedman_world",
    "ingest_csv",
    "n_assignments",
    "observed_responses",
    "pairs_quartets_study",
    "pate_demo",
    "permutation_test",
    "psi_matrices",
    "resolve_qspec",
    "run_power_curve",
    "run_table1",
    "sample_assignment",
    "sate",
    "true_ate_variance",
    "true_block_variance",
    "validate_design",
    "var_coarse_classical",
    "var_paired_classical",
    "var_s1",
    "var_s2",
    "var_s3",
    "write_experiment_csv",
]
