"""Command line front end for analysis, testing, and simulation.

Exit codes: 0 success, 2 input/parse problems, 3 invalid designs,
4 estimator/design mismatches, 5 numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from ._util import fmt_human, fmt_raw
from .design import BlockDesign
from .errors import (
    DesignError,
    IncompatibleEstimator,
    InputError,
    NumericalError,
)
from .estimators import analyze_experiment
from .experiment_io import ingest_csv
from .hettest import permutation_test
from .projection import QMatrix, build_q1, build_q2
from .simulate import (
    DEFAULT_A_GRID,
    TABLE1_RAW_COLUMNS,
    FriedmanConfig,
    pairs_quartets_study,
    pate_demo,
    run_power_curve,
    run_table1,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DESIGN = 3
EXIT_INCOMPATIBLE = 4
EXIT_NUMERICAL = 5


def _resolve_threads(value: int | None) -> int:
    """--threads wins; otherwise the STRATAVAR_THREADS variable; otherwise 1."""
    if value is not None:
        if value < 1:
            raise InputError(f"--threads must be at least 1, got {value}")
        return value
    env = os.environ.get("STRATAVAR_THREADS", "").strip()
    if env:
        try:
            parsed = int(env)
        except ValueError:
            raise InputError(f"STRATAVAR_THREADS must be an integer, got {env!r}") from None
        if parsed < 1:
            raise InputError(f"STRATAVAR_THREADS must be at least 1, got {parsed}")
        return parsed
    return 1


def _covariate_indices(design: BlockDesign, names: list[str]) -> list[int]:
    indices = []
    for name in names:
        if not (name.startswith("x") and name[1:].isdigit()):
            raise InputError(
                f"covariate {name!r} is not a covariate column name of the form x1..xK"
            )
        j = int(name[1:]) - 1
        if not 0 <= j < design.covariate_dim:
            raise InputError(
                f"covariate {name!r} not in the file; it has {design.covariate_dim} "
                "covariate columns"
            )
        indices.append(j)
    if len(set(indices)) != len(indices):
        raise InputError(f"duplicate covariate names in {names}")
    return indices


def _build_qspec(design: BlockDesign, spec: str, poly: int) -> QMatrix:
    """Turn a --q-spec value into a basis: "q1" or comma-separated column names."""
    if spec == "q1":
        return build_q1(design)
    names = [s.strip() for s in spec.split(",") if s.strip()]
    if not names:
        raise InputError("--q-spec must be 'q1' or a comma-separated list of covariate names")
    return build_q2(design, poly_degree=poly, columns=_covariate_indices(design, names))


def _emit_json(payload: dict, out: str | None, summary_lines: list[str]) -> None:
    """JSON to stdout, or to --out with a short human summary on stdout."""
    text = json.dumps(payload, indent=2)
    if out is None:
        print(text)
        return
    Path(out).write_text(text + "\n")
    for line in summary_lines:
        print(line)
    print(f"wrote {out}")


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return fmt_raw(value)
    return str(value)


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(row[c]) for c in columns])


def _require_responses(data) -> None:
    if data is None:
        raise InputError("the file has no responses; analysis needs observed outcomes")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    design, data = ingest_csv(args.csv)
    _require_responses(data)
    q = _build_qspec(design, args.q_spec, args.poly)
    estimators = "auto" if args.estimators == "auto" else [
        s.strip() for s in args.estimators.split(",") if s.strip()
    ]
    report = analyze_experiment(design, data, q=q, estimators=estimators, alpha=args.alpha)
    payload = report.to_dict()

    lines = [
        f"estimate {fmt_human(report.delta_hat)}  "
        f"({report.design_class} design, {report.n_blocks} blocks, {report.n_units} units)"
    ]
    for name, value in report.estimates.items():
        lo, hi = report.intervals[name]
        lines.append(
            f"  {name:<6} variance {fmt_human(value)}  se {fmt_human(value ** 0.5)}  "
            f"ci [{fmt_human(lo)}, {fmt_human(hi)}]"
        )
    for message in report.warnings:
        lines.append(f"  warning: {message}")
    _emit_json(payload, args.out, lines)
    return EXIT_OK


def cmd_hettest(args) -> int:
    design, data = ingest_csv(args.csv)
    _require_responses(data)
    if args.q_spec == "q1":
        raise InputError("the heterogeneity test needs covariates; pass --q-spec with column names")
    q2 = _build_qspec(design, args.q_spec, args.poly)
    threads = _resolve_threads(args.threads)
    result = permutation_test(
        design, data, q2, max_draws=args.max_draws, seed=args.seed, threads=threads
    )
    payload = result.to_dict()
    f_text = "inf" if payload["f_observed"] is None else fmt_human(result.f_observed)
    lines = [
        f"F {f_text} on ({result.numerator_df}, {result.denominator_df}) df; "
        f"p {fmt_human(result.p_value)} "
        f"({'exact, ' if result.exact else ''}{result.draws} draws)"
    ]
    lines.extend(f"  note: {n}" for n in result.notes)
    _emit_json(payload, args.out, lines)
    return EXIT_OK


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_sim_table1(args) -> int:
    threads = _resolve_threads(args.threads)
    config = FriedmanConfig(n_blocks=args.blocks, a=args.a, b=args.b)
    result = run_table1(
        config, reps=args.reps, seed=args.seed, threads=threads, collect_raw=args.raw
    )
    outdir = _out_dir(args)

    cells = [dict(cell, reps=args.reps) for cell in result.cells]
    cells_path = outdir / "table1_cells.csv"
    _write_csv(cells_path, cells, ["estimator", "qspec", "mean", "mc_se", "reps"])

    summary = {
        "config": {
            "n_blocks": config.n_blocks,
            "a": config.a,
            "b": config.b,
            "n_covariates": config.n_covariates,
            "triplet_fraction": config.triplet_fraction,
        },
        "reps": result.reps,
        "seed": args.seed,
        "delta_mean": result.delta_mean,
        "targets": result.targets,
    }
    summary_path = outdir / "table1_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")

    written = [cells_path, summary_path]
    if args.raw:
        raw_path = outdir / "table1_raw.csv"
        raw_rows = [
            dict(zip(TABLE1_RAW_COLUMNS, map(float, row)), rep=i)
            for i, row in enumerate(result.raw)
        ]
        _write_csv(raw_path, raw_rows, ["rep", *TABLE1_RAW_COLUMNS])
        written.append(raw_path)

    for name, target in result.targets.items():
        print(f"{name} {fmt_human(target['value'])} (mc se {fmt_human(target['mc_se'])})")
    for cell in result.cells:
        print(
            f"{cell['estimator']} / {cell['qspec']}: mean {fmt_human(cell['mean'])} "
            f"(mc se {fmt_human(cell['mc_se'])})"
        )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sim_power(args) -> int:
    threads = _resolve_threads(args.threads)
    config = FriedmanConfig(n_blocks=args.blocks, a=1.0, b=args.b)
    try:
        a_grid = [float(s) for s in args.a_grid.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"--a-grid must be comma-separated reals, got {args.a_grid!r}") from None
    if not a_grid:
        raise InputError("--a-grid is empty")
    rows = run_power_curve(
        config,
        a_grid=a_grid,
        reps=args.reps,
        max_draws=args.max_draws,
        alpha=args.alpha,
        seed=args.seed,
        threads=threads,
        collect_raw=args.raw,
    )
    outdir = _out_dir(args)
    curve_path = outdir / "power_curve.csv"
    columns = ["a", "qspec", "reps", "rejections", "rate", "mc_se", "alpha", "max_draws"]
    _write_csv(curve_path, rows, columns)
    written = [curve_path]
    if args.raw:
        raw_rows = []
        for row in rows:
            for rep, p in enumerate(row["p_values"]):
                raw_rows.append(
                    {
                        "a": row["a"],
                        "qspec": row["qspec"],
                        "rep": rep,
                        "p_value": p,
                        "reject": int(p <= row["alpha"]),
                    }
                )
        raw_path = outdir / "power_raw.csv"
        _write_csv(raw_path, raw_rows, ["a", "qspec", "rep", "p_value", "reject"])
        written.append(raw_path)

    for row in rows:
        print(
            f"a {fmt_human(row['a'])} / {row['qspec']}: "
            f"rate {fmt_human(row['rate'])} (mc se {fmt_human(row['mc_se'])})"
        )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sim_pairs_quartets(args) -> int:
    rows = pairs_quartets_study()
    outdir = _out_dir(args)
    path = outdir / "pairs_quartets.csv"
    _write_csv(path, rows, ["design", "covariate_spec", "estimator", "expected_value", "bias_term"])
    for row in rows:
        print(
            f"{row['design']} / {row['covariate_spec']} / {row['estimator']}: "
            f"{fmt_human(row['expected_value'])} (bias {fmt_human(row['bias_term'])})"
        )
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sim_pate_demo(args) -> int:
    threads = _resolve_threads(args.threads)
    out = pate_demo(reps=args.reps, seed=args.seed, threads=threads)
    outdir = _out_dir(args)
    path = outdir / "pate_demo.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(
        f"across-worlds variance {fmt_human(out['pate_variance'])}, "
        f"mean within-world variance {fmt_human(out['sate_variance_mean'])}"
    )
    for name, cell in out["cells"].items():
        verdicts = []
        if out["anticonservative_for_pate"][name]:
            verdicts.append("anticonservative for the across-worlds variance")
        if out["conservative_for_sate"][name]:
            verdicts.append("conservative for the within-world variance")
        tail = "; ".join(verdicts) if verdicts else "no verdict"
        print(f"s1 / {name}: mean {fmt_human(cell['mean'])} ({tail})")
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_qspec_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--q-spec",
        default="q1",
        help="'q1' or comma-separated covariate column names, e.g. x1,x2 (default: q1)",
    )
    parser.add_argument(
        "--poly",
        type=int,
        default=1,
        help="power expansion degree for the named covariates (default: 1)",
    )


def _add_threads_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker processes; falls back to STRATAVAR_THREADS, then 1",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stratavar",
        description=(
            "Estimation, conservative variance estimation, and effect-heterogeneity "
            "testing for block-randomized experiments"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="estimate the treatment effect from a CSV file")
    analyze.add_argument("--csv", required=True, help="experiment CSV file")
    _add_qspec_flags(analyze)
    analyze.add_argument(
        "--estimators",
        default="auto",
        help="'auto' or comma-separated subset of paired,coarse,s1,s2,s3",
    )
    analyze.add_argument("--alpha", type=float, default=0.05, help="CI miscoverage (default 0.05)")
    analyze.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    analyze.set_defaults(func=cmd_analyze)

    het = sub.add_parser("hettest", help="permutation test of constant treatment effects")
    het.add_argument("--csv", required=True, help="experiment CSV file")
    _add_qspec_flags(het)
    het.add_argument(
        "--max-draws",
        type=int,
        default=10_000,
        help="enumerate exactly up to this many assignments, then sample (default 10000)",
    )
    het.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    _add_threads_flag(het)
    het.add_argument("--out", default=None, help="write the JSON result here instead of stdout")
    het.set_defaults(func=cmd_hettest)

    sim = sub.add_parser("simulate", help="run the numerical studies")
    simsub = sim.add_subparsers(dest="study", required=True)

    t1 = simsub.add_parser("table1", help="estimator means under the nonlinear response surface")
    t1.add_argument("--reps", type=int, default=10_000)
    t1.add_argument("--seed", type=int, default=0)
    t1.add_argument("--blocks", type=int, default=100)
    t1.add_argument("--a", type=float, default=2.0, help="treated signal scale (default 2)")
    t1.add_argument("--b", type=float, default=2.0, help="treated noise scale (default 2)")
    _add_threads_flag(t1)
    t1.add_argument("--out-dir", default=".", help="directory for output files (default .)")
    t1.add_argument("--raw", action="store_true", help="also write per-replicate values")
    t1.set_defaults(func=cmd_sim_table1)

    pw = simsub.add_parser("power", help="heterogeneity test power along a signal grid")
    pw.add_argument("--reps", type=int, default=1000)
    pw.add_argument("--seed", type=int, default=0)
    pw.add_argument("--blocks", type=int, default=20)
    pw.add_argument("--b", type=float, default=1.0, help="treated noise scale (default 1)")
    pw.add_argument(
        "--a-grid",
        default=",".join(str(a) for a in DEFAULT_A_GRID),
        help="comma-separated treated signal scales",
    )
    pw.add_argument("--max-draws", type=int, default=999)
    pw.add_argument("--alpha", type=float, default=0.05)
    _add_threads_flag(pw)
    pw.add_argument("--out-dir", default=".", help="directory for output files (default .)")
    pw.add_argument("--raw", action="store_true", help="also write per-replicate p-values")
    pw.set_defaults(func=cmd_sim_power)

    pq = simsub.add_parser(
        "pairs-quartets", help="closed-form pairs versus quartets comparison (deterministic)"
    )
    pq.add_argument("--out-dir", default=".", help="directory for output files (default .)")
    pq.set_defaults(func=cmd_sim_pairs_quartets)

    pd = simsub.add_parser(
        "pate-demo", help="within-world versus across-worlds variance targets"
    )
    pd.add_argument("--reps", type=int, default=2000)
    pd.add_argument("--seed", type=int, default=0)
    _add_threads_flag(pd)
    pd.add_argument("--out-dir", default=".", help="directory for output files (default .)")
    pd.set_defaults(func=cmd_sim_pate_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DESIGN
    except IncompatibleEstimator as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
