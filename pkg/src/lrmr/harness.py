"""Experiment harness: problem generation, phase sweeps, benchmarks.

Recovery ability is measured in the undersampling / oversampling plane:
``delta = p / (m n)`` compares the measurement count to the ambient
dimension and ``rho = (m + n - r) r / p`` compares the manifold
dimension to the measurement count.  For each ``delta`` the bracketing
sweep raises the rank one step at a time to find ``r_min``, the largest
rank at which every trial is recovered, and ``r_max``, the smallest rank
at which every trial fails; recovery means a relative error of at most
1e-2 against the generating matrix.

All randomness is derived from a base seed through per-trial seed
sequences, so sweeps and benchmarks are bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolationError
from .matcore import frob
from .sensing import EntrySensing, GaussianSensing
from .solvers import Algorithm, SolverConfig, Status, solve

SUCCESS_REL_TOL = 1e-2

# the paper-style delta sweep: 18 equispaced undersampling ratios
DEFAULT_DELTA_GRID = tuple(np.round(np.linspace(0.1, 0.95, 18), 6))

# solver settings for phase-transition trials: success is adjudicated at
# 1e-2 relative error, so running residuals below 1e-5 wastes nothing,
# and stagnating (failing) instances are cut off early: converging runs
# improve the residual by over 70% per 100 iterations while failing ones
# fall under 10% within a few hundred iterations, so a 15% threshold
# separates them with a wide margin
PHASE_SOLVER_DEFAULTS = {
    "rel_residual_tol": 1e-5,
    "max_iters": 3000,
    "stall_window": 100,
    "stall_tol": 0.15,
}


def delta_of(m: int, n: int, p: int) -> float:
    return p / (m * n)


def rho_of(m: int, n: int, r, p: int) -> float:
    return (m + n - r) * r / p


@dataclass
class ProblemSpec:
    """A random rank-r recovery instance, reproducible from ``seed``."""

    m: int
    n: int
    rank: int
    sensing: str = "gaussian"
    delta: float | None = None
    p: int | None = None
    seed: int = 0
    gaussian_scale: float | None = None

    def resolved_p(self) -> int:
        if self.p is not None:
            return int(self.p)
        if self.delta is None:
            raise ConfigError("ProblemSpec needs either p or delta")
        return int(round(self.delta * self.m * self.n))

    def validate(self) -> None:
        if self.rank < 1 or self.rank > min(self.m, self.n):
            raise ConfigError(f"rank={self.rank} out of range for {self.m}x{self.n}")
        if self.sensing not in ("gaussian", "entry"):
            raise ConfigError(f"sensing must be 'gaussian' or 'entry', got {self.sensing!r}")
        p = self.resolved_p()
        if p < 1:
            raise ConfigError("p must be positive")
        dof = (self.m + self.n - self.rank) * self.rank
        if dof > p:
            warnings.warn(
                f"p={p} is below the manifold dimension {dof}; recovery is impossible",
                stacklevel=2,
            )


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(int(x) for x in parts)).generate_state(1)[0])


def generate_problem(spec: ProblemSpec):
    """Draw (X, op, y): X is a product of two standard-normal factors."""
    spec.validate()
    p = spec.resolved_p()
    op_seed = _derived_seed(spec.seed, 1)
    if spec.sensing == "gaussian":
        op = GaussianSensing(spec.m, spec.n, p, seed=op_seed, scale=spec.gaussian_scale)
    else:
        op = EntrySensing(spec.m, spec.n, p, seed=op_seed)
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 2)))
    L = rng.standard_normal((spec.m, spec.rank))
    R = rng.standard_normal((spec.rank, spec.n))
    X = L @ R
    return X, op, op.apply(X)


def is_success(X_hat: np.ndarray, X: np.ndarray) -> bool:
    """Recovery test at 1e-2 relative Frobenius error."""
    if X_hat.shape != X.shape:
        raise ContractViolationError(
            f"shape mismatch: {X_hat.shape} vs {X.shape}"
        )
    return frob(X_hat - X) <= SUCCESS_REL_TOL * frob(X)


@dataclass
class TrialRecord:
    delta: float
    r: int
    trial: int
    seed: int
    success: bool
    iterations: int
    status: str
    rel_error: float
    seconds: float

    def to_dict(self) -> dict:
        # seconds are deliberately excluded: artifact files of a seeded run
        # must be byte-identical across invocations
        return {
            "delta": self.delta,
            "r": self.r,
            "trial": self.trial,
            "seed": self.seed,
            "success": self.success,
            "iterations": self.iterations,
            "status": self.status,
            "rel_error": self.rel_error,
        }


@dataclass
class PhaseCell:
    delta: float
    r: int
    rho: float
    successes: int
    trials: int

    @property
    def all_success(self) -> bool:
        return self.successes == self.trials

    @property
    def all_fail(self) -> bool:
        return self.successes == 0


@dataclass
class PhaseBracket:
    delta: float
    algorithm: str
    m: int
    n: int
    p: int
    r_min: int | None
    r_max: int | None  # None means: still succeeding at the rank cap
    rho_min: float | None
    rho_max: float | None
    cells: list[PhaseCell] = field(default_factory=list)
    records: list[TrialRecord] = field(default_factory=list)

    @property
    def above_cap(self) -> bool:
        return self.r_max is None

    def midpoint_rho(self) -> float | None:
        """Oversampling ratio at the transition rank (r_min + r_max) / 2."""
        if self.r_min is None or self.r_max is None:
            return None
        return rho_of(self.m, self.n, (self.r_min + self.r_max) / 2.0, self.p)


def _phase_config(algorithm, rank: int, overrides: dict | None) -> SolverConfig:
    kwargs = dict(PHASE_SOLVER_DEFAULTS)
    if overrides:
        kwargs.update(overrides)
    return SolverConfig(algorithm=Algorithm(algorithm), rank=rank, **kwargs)


def run_phase_trial(
    m: int,
    n: int,
    p: int,
    sensing: str,
    algorithm,
    r: int,
    trial: int,
    base_seed: int,
    delta_key: int,
    solver_overrides: dict | None = None,
) -> TrialRecord:
    """One seeded trial of one (delta, r) cell."""
    seed = _derived_seed(base_seed, delta_key, r, trial)
    spec = ProblemSpec(m=m, n=n, rank=r, sensing=sensing, p=p, seed=seed)
    X, op, y = generate_problem(spec)
    cfg = _phase_config(algorithm, r, solver_overrides)
    start = time.perf_counter()
    X_hat, trace = solve(op, y, cfg)
    seconds = time.perf_counter() - start
    rel_error = frob(X_hat - X) / frob(X)
    return TrialRecord(
        delta=delta_of(m, n, p),
        r=r,
        trial=trial,
        seed=seed,
        success=bool(rel_error <= SUCCESS_REL_TOL),
        iterations=trace.iterations,
        status=trace.status.value,
        rel_error=float(rel_error),
        seconds=seconds,
    )


def _default_r_start(m: int, n: int, p: int, r_cap: int) -> int:
    # start where the oversampling ratio is about 0.8: close to (but in
    # practice below) the empirical transition, so few cells are visited
    s = m + n
    disc = s * s - 4 * 0.8 * p
    guess = int((s - math.sqrt(disc)) / 2.0) if disc > 0 else r_cap
    return min(max(guess, 1), r_cap)


def _evaluate_cell(
    m, n, p, sensing, algorithm, r, trials, base_seed, delta_key,
    solver_overrides, workers, solve_fn,
) -> tuple[PhaseCell, list[TrialRecord]]:
    """Run up to ``trials`` trials of a rank cell.

    Sequential mode stops early once the cell is known to be mixed (at
    least one success and one failure): such a cell can be neither the
    last all-success rank nor the first all-fail rank.
    """
    records: list[TrialRecord] = []
    if solve_fn is None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    run_phase_trial, m, n, p, sensing, algorithm, r, t,
                    base_seed, delta_key, solver_overrides,
                )
                for t in range(trials)
            ]
            records = [f.result() for f in futures]
    else:
        seen_success = seen_failure = False
        for t in range(trials):
            if solve_fn is None:
                rec = run_phase_trial(
                    m, n, p, sensing, algorithm, r, t, base_seed, delta_key,
                    solver_overrides,
                )
            else:
                seed = _derived_seed(base_seed, delta_key, r, t)
                success = bool(solve_fn(r=r, trial=t, seed=seed))
                rec = TrialRecord(
                    delta=delta_of(m, n, p), r=r, trial=t, seed=seed,
                    success=success, iterations=0, status="stub",
                    rel_error=0.0 if success else 1.0, seconds=0.0,
                )
            records.append(rec)
            seen_success |= rec.success
            seen_failure |= not rec.success
            if seen_success and seen_failure:
                break
    successes = sum(rec.success for rec in records)
    cell = PhaseCell(
        delta=delta_of(m, n, p),
        r=r,
        rho=rho_of(m, n, r, p),
        successes=successes,
        trials=len(records),
    )
    return cell, records


def bracket_rank(
    m: int,
    n: int,
    delta: float,
    algorithm,
    sensing: str = "gaussian",
    trials: int = 10,
    base_seed: int = 0,
    r_cap: int | None = None,
    r_start: int | None = None,
    solver_overrides: dict | None = None,
    workers: int = 1,
    solve_fn=None,
) -> PhaseBracket:
    """Bracket the recovery transition at one undersampling ratio.

    Starting from a rank at which every trial succeeds (walking down
    from ``r_start`` if needed), the rank is raised by one until every
    trial fails.  ``solve_fn(r=..., trial=..., seed=...) -> bool`` can
    replace the real solver (testing hook).  If every rank up to
    ``r_cap`` still has successes, ``r_max`` is reported as None
    ("above cap").
    """
    p = int(round(delta * m * n))
    if r_cap is None:
        r_cap = min(m, n)
    r_cap = min(r_cap, min(m, n))
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    delta_key = int(round(delta * 10**9))
    if r_start is None:
        r_start = _default_r_start(m, n, p, r_cap)
    r_start = min(max(int(r_start), 1), r_cap)

    cells: dict[int, PhaseCell] = {}
    all_records: list[TrialRecord] = []

    def run_cell(r: int) -> PhaseCell:
        cell, recs = _evaluate_cell(
            m, n, p, sensing, algorithm, r, trials, base_seed, delta_key,
            solver_overrides, workers, solve_fn,
        )
        cells[r] = cell
        all_records.extend(recs)
        return cell

    # walk down until a fully successful rank (the floor of the bracket)
    r = r_start
    while r >= 1:
        if run_cell(r).all_success:
            break
        r -= 1

    # walk up from the highest rank examined until a fully failing rank
    r = max(cells) + 1
    r_max = None
    while r <= r_cap:
        cell = run_cell(r)
        if cell.all_fail:
            r_max = r
            break
        r += 1

    full_success_ranks = [c.r for c in cells.values() if c.trials == trials and c.all_success]
    r_min = max(full_success_ranks) if full_success_ranks else None
    ordered = [cells[k] for k in sorted(cells)]
    return PhaseBracket(
        delta=delta_of(m, n, p),
        algorithm=Algorithm(algorithm).value,
        m=m,
        n=n,
        p=p,
        r_min=r_min,
        r_max=r_max,
        rho_min=rho_of(m, n, r_min, p) if r_min is not None else None,
        rho_max=rho_of(m, n, r_max, p) if r_max is not None else None,
        cells=ordered,
        records=all_records,
    )


def write_phase_csv(brackets, path) -> None:
    """Phase table rows: delta,algorithm,r_min,r_max,rho_min,rho_max."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "algorithm", "r_min", "r_max", "rho_min", "rho_max"])
        for b in brackets:
            w.writerow(
                [
                    f"{b.delta:.6g}",
                    b.algorithm,
                    "" if b.r_min is None else b.r_min,
                    "above_cap" if b.r_max is None else b.r_max,
                    "" if b.rho_min is None else f"{b.rho_min:.6g}",
                    "" if b.rho_max is None else f"{b.rho_max:.6g}",
                ]
            )


def write_cells_jsonl(brackets, path) -> None:
    """One record per (delta, r, trial), with success flag and status."""
    with open(path, "w") as fh:
        for b in brackets:
            for rec in b.records:
                row = {"algorithm": b.algorithm, **rec.to_dict()}
                fh.write(json.dumps(row) + "\n")


@dataclass
class BenchResult:
    algorithm: str
    mean_curve: np.ndarray  # mean rel_residual per iteration over trials
    std_curve: np.ndarray
    iterations: list[int]
    statuses: list[str]
    apply_counts: list[int]
    adjoint_counts: list[int]
    wall_seconds: list[float]


def convergence_benchmark(
    spec: ProblemSpec,
    algorithms,
    trials: int = 10,
    rel_residual_tol: float = 1e-9,
    max_iters: int = 5000,
    solver_overrides: dict | None = None,
) -> dict[str, BenchResult]:
    """Residual-versus-iteration curves over seeded trials.

    Trial t of every algorithm uses the same instance (seed derived from
    ``spec.seed`` and t), so iteration counts are paired.  Curves are
    aligned by carrying the final residual of shorter runs forward.
    Non-convergent runs are recorded with their terminal status and
    included in the statistics.
    """
    algorithms = [Algorithm(a) for a in algorithms]
    runs: dict[str, list] = {a.value: [] for a in algorithms}
    for t in range(trials):
        seed = _derived_seed(spec.seed, 3, t)
        trial_spec = ProblemSpec(
            m=spec.m, n=spec.n, rank=spec.rank, sensing=spec.sensing,
            delta=spec.delta, p=spec.p, seed=seed,
            gaussian_scale=spec.gaussian_scale,
        )
        X, op, y = generate_problem(trial_spec)
        for alg in algorithms:
            kwargs = dict(
                rel_residual_tol=rel_residual_tol, max_iters=max_iters,
            )
            if solver_overrides:
                kwargs.update(solver_overrides)
            cfg = SolverConfig(algorithm=alg, rank=spec.rank, **kwargs)
            _, trace = solve(op, y, cfg, ground_truth=X)
            runs[alg.value].append(trace)

    results: dict[str, BenchResult] = {}
    for alg in algorithms:
        traces = runs[alg.value]
        longest = max(len(tr.records) for tr in traces)
        curves = np.empty((len(traces), longest))
        for i, tr in enumerate(traces):
            res = tr.rel_residuals()
            curves[i, : res.shape[0]] = res
            curves[i, res.shape[0] :] = res[-1]
        results[alg.value] = BenchResult(
            algorithm=alg.value,
            mean_curve=curves.mean(axis=0),
            std_curve=curves.std(axis=0),
            iterations=[tr.iterations for tr in traces],
            statuses=[tr.status.value for tr in traces],
            apply_counts=[tr.apply_count for tr in traces],
            adjoint_counts=[tr.adjoint_count for tr in traces],
            wall_seconds=[tr.wall_seconds for tr in traces],
        )
    return results


def write_bench_curves_csv(result: BenchResult, path) -> None:
    """Figure-ready columns: iter, mean_rel_residual, std_rel_residual."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "mean_rel_residual", "std_rel_residual"])
        for i, (mean, std) in enumerate(zip(result.mean_curve, result.std_curve)):
            w.writerow([i, f"{mean:.17g}", f"{std:.17g}"])


def write_bench_summary_csv(results: dict[str, BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        # wall-clock time is reported on stdout only, never in artifacts:
        # seeded output files must be byte-identical across invocations
        w.writerow(
            [
                "algorithm", "trials", "mean_iterations", "std_iterations",
                "total_applies", "total_adjoints", "converged",
            ]
        )
        for name, res in results.items():
            iters = np.array(res.iterations, dtype=float)
            w.writerow(
                [
                    name,
                    len(res.iterations),
                    f"{iters.mean():.6g}",
                    f"{iters.std():.6g}",
                    int(np.sum(res.apply_counts)),
                    int(np.sum(res.adjoint_counts)),
                    sum(s == Status.CONVERGED.value for s in res.statuses),
                ]
            )
