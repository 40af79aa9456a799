"""Command-line front end.

Subcommands:

* ``solve``         -- recover one seeded random instance, write the trace
* ``phase``         -- bracket the recovery transition over undersampling ratios
* ``bench``         -- residual-vs-iteration benchmark across algorithms
* ``theory``        -- evaluate the recovery-guarantee constants
* ``ric-estimate``  -- sampled lower bound on a restricted isometry constant

Every flag can also be supplied through a JSON file via ``--config``
(flag names with underscores); explicit command-line flags win.  All
randomness is controlled by ``--seed``, and artifact files written for a
given command line and seed are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import BackendError, ConfigError, ContractViolationError
from .harness import (
    DEFAULT_DELTA_GRID,
    ProblemSpec,
    bracket_rank,
    convergence_benchmark,
    generate_problem,
    write_bench_curves_csv,
    write_bench_summary_csv,
    write_cells_jsonl,
    write_phase_csv,
)
from .matcore import frob
from .sensing import EntrySensing, GaussianSensing, estimate_ric_lower_bound
from .solvers import Algorithm, SolverConfig, solve
from .theory import GuaranteeInputs, gamma_rcg, gamma_rgrad

ALGORITHM_CHOICES = [a.value for a in Algorithm]
RIC_LOWER_BOUND_NOTE = (
    "sampled lower bound on the restricted isometry constant; a satisfied "
    "guarantee check based on it is necessary-direction only"
)

PHASE_PRESETS = {
    "paper": {"gaussian": 80, "entry": 800},
    "desk": {"gaussian": 40, "entry": 400},
}
BENCH_PRESETS = {
    "paper-gaussian": {"sensing": "gaussian", "m": 80, "n": 80, "r": 10},
    "desk-entry": {"sensing": "entry", "m": 2000, "n": 2000, "r": 50},
    "paper-entry": {"sensing": "entry", "m": 8000, "n": 8000, "r": 100},
}


def _threads_default() -> int:
    env = os.environ.get("RLR_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="JSON file with flag defaults")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--output-dir", type=str, default=".", help="artifact directory")
    parser.add_argument(
        "--format", choices=["csv", "jsonl", "json"], default="csv",
        help="trace/artifact format where applicable",
    )
    parser.add_argument(
        "--threads", type=int, default=_threads_default(),
        help="worker pool size for sweeps (env RLR_THREADS)",
    )


def _add_problem_flags(parser: argparse.ArgumentParser, need_rank: bool) -> None:
    parser.add_argument("--sensing", choices=["gaussian", "entry"], default="gaussian")
    parser.add_argument("--m", type=int, help="rows")
    parser.add_argument("--n", type=int, help="cols")
    if need_rank:
        parser.add_argument("--r", type=int, help="rank of the measured matrix")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--delta", type=float, help="undersampling ratio p/(m n)")
    group.add_argument("--p", type=int, help="number of measurements")
    group.add_argument(
        "--inv-rho", type=float,
        help="inverse oversampling ratio: p = inv_rho * (m+n-r) r",
    )
    parser.add_argument(
        "--gaussian-scale", choices=["normalized", "raw"], default="normalized",
        help="1/sqrt(p)-scaled or raw N(0,1) sensing matrices",
    )


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tol", type=float, default=1e-9, help="relative residual tolerance")
    parser.add_argument("--max-iters", type=int, default=5000)
    parser.add_argument("--kappa1", type=float, default=0.1)
    parser.add_argument("--kappa2", type=float, default=1.0)
    parser.add_argument(
        "--beta-rule", choices=["conjugate-orthogonal", "fr", "pr", "pr+"], default=None,
    )
    parser.add_argument("--warm-start-iters", type=int, default=0)
    parser.add_argument("--stall-window", type=int, default=50)
    parser.add_argument("--stall-tol", type=float, default=1e-14)
    parser.add_argument(
        "--subspace", choices=["tangent", "column", "row"], default="tangent",
        help="column/row modes stagnate in general; demonstration only",
    )
    parser.add_argument("--dense-retraction", action="store_true", help="debug mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrmr", description="low-rank matrix recovery solvers and benchmarks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one seeded random instance")
    _add_common(p_solve)
    _add_problem_flags(p_solve, need_rank=True)
    _add_solver_flags(p_solve)
    # not argparse-required so that a --config file can supply it
    p_solve.add_argument("--alg", choices=ALGORITHM_CHOICES, default=None)
    p_solve.add_argument(
        "--ground-truth-seed", type=int, default=None,
        help="seed regenerating the measured matrix; enables error reporting",
    )
    p_solve.add_argument(
        "--dump-matrices", action="store_true",
        help="also write ground_truth.npy and estimate.npy",
    )

    p_phase = sub.add_parser("phase", help="phase-transition rank bracketing")
    _add_common(p_phase)
    _add_problem_flags(p_phase, need_rank=False)
    p_phase.add_argument(
        "--alg", action="append", choices=ALGORITHM_CHOICES, default=None,
        help="algorithm (repeatable); default rgrad",
    )
    p_phase.add_argument("--trials", type=int, default=10)
    p_phase.add_argument("--r-cap", type=int, default=None)
    p_phase.add_argument("--r-start", type=int, default=None)
    p_phase.add_argument("--preset", choices=list(PHASE_PRESETS), default=None,
                         help="paper: m=n=80 (gaussian) / 800 (entry); desk: 40 / 400")
    p_phase.add_argument("--tol", type=float, default=None)
    p_phase.add_argument("--max-iters", type=int, default=None)
    p_phase.add_argument("--stall-window", type=int, default=None)
    p_phase.add_argument("--stall-tol", type=float, default=None)

    p_bench = sub.add_parser("bench", help="convergence benchmark")
    _add_common(p_bench)
    _add_problem_flags(p_bench, need_rank=True)
    p_bench.add_argument(
        "--alg", action="append", choices=ALGORITHM_CHOICES, default=None,
        help="algorithm (repeatable); default rgrad, rcg, rcg-restarted, asd",
    )
    p_bench.add_argument("--trials", type=int, default=10)
    p_bench.add_argument("--tol", type=float, default=1e-9)
    p_bench.add_argument("--max-iters", type=int, default=5000)
    p_bench.add_argument("--preset", choices=list(BENCH_PRESETS), default=None)

    p_theory = sub.add_parser("theory", help="recovery-guarantee constants")
    _add_common(p_theory)
    p_theory.add_argument("--r2r", type=float, required=True)
    p_theory.add_argument("--r3r", type=float, required=True)
    p_theory.add_argument("--sigma-min", type=float, required=True)
    p_theory.add_argument("--sigma-max", type=float, required=True)
    p_theory.add_argument("--x-frob", type=float, required=True)
    p_theory.add_argument("--r", type=int, required=True)
    p_theory.add_argument("--kappa1", type=float, default=0.1)
    p_theory.add_argument("--kappa2", type=float, default=1.0)

    p_ric = sub.add_parser("ric-estimate", help="sampled RIC lower bound")
    _add_common(p_ric)
    _add_problem_flags(p_ric, need_rank=True)
    p_ric.add_argument("--trials", type=int, default=10000)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse argv, letting a --config JSON file supply defaults."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", type=str, default=None)
    known, _ = probe.parse_known_args(argv[1:] if argv and argv[0] in _COMMANDS else argv)
    if known.config:
        try:
            values = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {known.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config: top-level JSON value must be an object")
        sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
        target = sub_actions[0].choices[argv[0]] if argv and argv[0] in _COMMANDS else parser
        valid = {a.dest for a in target._actions}
        unknown = set(values) - valid
        if unknown:
            raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
        target.set_defaults(**values)
    return parser.parse_args(argv)


_COMMANDS = ("solve", "phase", "bench", "theory", "ric-estimate")


def _resolve_p(args, rank: int | None) -> int:
    if args.p is not None:
        return args.p
    if args.delta is not None:
        return int(round(args.delta * args.m * args.n))
    if args.inv_rho is not None:
        if rank is None:
            raise ConfigError("inv_rho: requires a rank")
        return int(round(args.inv_rho * (args.m + args.n - rank) * rank))
    raise ConfigError("one of --delta, --p, --inv-rho is required")


def _require(args, *names) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigError(f"{name}: required flag missing")


def _gaussian_scale(args) -> float | None:
    return 1.0 if args.gaussian_scale == "raw" else None


def _cmd_solve(args) -> int:
    _require(args, "alg", "m", "n", "r")
    p = _resolve_p(args, args.r)
    problem_seed = args.ground_truth_seed if args.ground_truth_seed is not None else args.seed
    spec = ProblemSpec(
        m=args.m, n=args.n, rank=args.r, sensing=args.sensing, p=p,
        seed=problem_seed, gaussian_scale=_gaussian_scale(args),
    )
    X, op, y = generate_problem(spec)
    cfg = SolverConfig(
        algorithm=args.alg,
        rank=args.r,
        beta_rule=args.beta_rule,
        kappa1=args.kappa1,
        kappa2=args.kappa2,
        max_iters=args.max_iters,
        rel_residual_tol=args.tol,
        warm_start_niht_iters=args.warm_start_iters,
        stall_window=args.stall_window,
        stall_tol=args.stall_tol,
        subspace=args.subspace,
        dense_retraction=args.dense_retraction,
        seed=args.seed,
    )
    cfg.validate()
    track_error = args.ground_truth_seed is not None
    X_hat, trace = solve(op, y, cfg, ground_truth=X if track_error else None)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / ("trace.jsonl" if args.format == "jsonl" else "trace.csv")
    if args.format == "jsonl":
        trace.write_jsonl(trace_path)
    else:
        trace.write_csv(trace_path)
    if args.dump_matrices:
        np.save(out / "ground_truth.npy", X)
        np.save(out / "estimate.npy", X_hat)
    line = (
        f"status={trace.status.value} iterations={trace.iterations} "
        f"rel_residual={trace.final_rel_residual:.6e}"
    )
    if track_error:
        line += f" rel_error={frob(X_hat - X) / frob(X):.6e}"
    print(line)
    print(f"trace written to {trace_path}")
    return 0


def _cmd_phase(args) -> int:
    if args.preset and args.m is None:
        side = PHASE_PRESETS[args.preset][args.sensing]
        args.m = args.n = side
    _require(args, "m", "n")
    deltas = [args.delta] if args.delta is not None else list(DEFAULT_DELTA_GRID)
    algorithms = args.alg or ["rgrad"]
    overrides = {
        key: value
        for key, value in (
            ("rel_residual_tol", args.tol),
            ("max_iters", args.max_iters),
            ("stall_window", args.stall_window),
            ("stall_tol", args.stall_tol),
        )
        if value is not None
    }
    brackets = []
    for alg in algorithms:
        for delta in deltas:
            bracket = bracket_rank(
                m=args.m, n=args.n, delta=delta, algorithm=alg,
                sensing=args.sensing, trials=args.trials, base_seed=args.seed,
                r_cap=args.r_cap, r_start=args.r_start,
                solver_overrides=overrides or None, workers=args.threads,
            )
            brackets.append(bracket)
            r_max = "above_cap" if bracket.r_max is None else bracket.r_max
            seconds = sum(rec.seconds for rec in bracket.records)
            print(
                f"delta={bracket.delta:g} alg={bracket.algorithm} "
                f"r_min={bracket.r_min} r_max={r_max} "
                f"({len(bracket.records)} runs, {seconds:.1f}s)"
            )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_phase_csv(brackets, out / "phase.csv")
    write_cells_jsonl(brackets, out / "phase_cells.jsonl")
    print(f"wrote {out / 'phase.csv'} and {out / 'phase_cells.jsonl'}")
    return 0


def _cmd_bench(args) -> int:
    if args.preset:
        preset = BENCH_PRESETS[args.preset]
        args.sensing = preset["sensing"]
        args.m = preset["m"] if args.m is None else args.m
        args.n = preset["n"] if args.n is None else args.n
        args.r = preset["r"] if args.r is None else args.r
    _require(args, "m", "n", "r")
    p = _resolve_p(args, args.r)
    algorithms = args.alg or ["rgrad", "rcg", "rcg-restarted", "asd"]
    spec = ProblemSpec(
        m=args.m, n=args.n, rank=args.r, sensing=args.sensing, p=p,
        seed=args.seed, gaussian_scale=_gaussian_scale(args),
    )
    results = convergence_benchmark(
        spec, algorithms, trials=args.trials,
        rel_residual_tol=args.tol, max_iters=args.max_iters,
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{args.sensing}_p{p}"
    for name, res in results.items():
        write_bench_curves_csv(res, out / f"bench_{tag}_{name}.csv")
        iters = np.array(res.iterations, dtype=float)
        print(
            f"{name}: iterations {iters.mean():.1f} +- {iters.std():.1f}, "
            f"mean time {np.mean(res.wall_seconds):.2f}s, "
            f"converged {sum(s == 'converged' for s in res.statuses)}/{len(res.statuses)}"
        )
    write_bench_summary_csv(results, out / f"bench_{tag}_summary.csv")
    print(f"wrote curves and summary under {out}")
    return 0


def _cmd_theory(args) -> int:
    inputs = GuaranteeInputs(
        r2r=args.r2r, r3r=args.r3r, sigma_min=args.sigma_min,
        sigma_max=args.sigma_max, x_frob=args.x_frob, rank=args.r,
        kappa1=args.kappa1, kappa2=args.kappa2,
    )
    report = {
        "rgrad": json.loads(gamma_rgrad(inputs).to_json()),
        "rcg_restarted": json.loads(gamma_rcg(inputs).to_json()),
        "note": "RIC inputs are exact constants if known; with sampled "
                "lower bounds the check is necessary-direction only",
    }
    text = json.dumps(report, indent=2)
    print(text)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "theory.json").write_text(text + "\n")
    return 0


def _cmd_ric_estimate(args) -> int:
    _require(args, "m", "n")
    p = _resolve_p(args, args.r)
    if args.sensing == "gaussian":
        op = GaussianSensing(args.m, args.n, p, seed=args.seed, scale=_gaussian_scale(args))
    else:
        op = EntrySensing(args.m, args.n, p, seed=args.seed)
    estimate = estimate_ric_lower_bound(op, args.r, trials=args.trials, seed=args.seed)
    payload = {
        "kind": args.sensing,
        "m": args.m,
        "n": args.n,
        "p": p,
        "rank": args.r,
        "trials": args.trials,
        "seed": args.seed,
        "estimate": estimate,
        "note": RIC_LOWER_BOUND_NOTE,
    }
    text = json.dumps(payload, indent=2)
    print(text)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ric_estimate.json").write_text(text + "\n")
    return 0


_HANDLERS = {
    "solve": _cmd_solve,
    "phase": _cmd_phase,
    "bench": _cmd_bench,
    "theory": _cmd_theory,
    "ric-estimate": _cmd_ric_estimate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return _HANDLERS[args.command](args)
    except (ConfigError, ContractViolationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"solver backend failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
