"""Experiment harness: problem generation, multi-seed optimizer runs, grid
search under the hyperparameter-utility stability filter, and CSV/SVG reports.

A run tracks the original nonsmooth objective at every iterate (at the
polynomial-decay average for the averaging methods).  Grid search scores each
hyperparameter cell by the mean objective over all runs and iterations,
subject to utility = absolute_ascent / total_descent staying under the
configured threshold; diverged cells always fail the filter.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .objective import (
    MinMaxProblem,
    eval_f,
    grad_f_beta_summand,
    subgrad_f_summand,
)
from .optim import (
    UNCONSTRAINED,
    AveragedState,
    BetaSchedule,
    StepSchedule,
    beta_schedule_step,
    saga_init,
    saga_step,
    step_size,
    subsgdp_step,
)
from .sampler import (
    ArgmaxOracleConfig,
    NoisyGradientConfig,
    mc_grad_summand,
    noisy_grad_summand,
    rng_stream,
)

__all__ = [
    "ALGORITHMS",
    "ProblemSpec",
    "ExperimentConfig",
    "RunTrace",
    "UtilityReport",
    "CellResult",
    "GridSearchResult",
    "generate_problem",
    "run_once",
    "utility",
    "passes_utility_filter",
    "grid_search",
    "report",
    "write_traces_csv",
    "read_traces_csv",
    "write_grid_csv",
    "write_winners_csv",
    "write_figure",
]

ALGORITHMS = ("sgd", "subsgd", "subsgdp", "saga", "beta_saga", "asaga", "asubsgdp")

# objective above divergence_factor * max(1, |f(w0)|), or any non-finite
# value, flags the run as diverged
DIVERGENCE_FACTOR = 1e12


@dataclass
class ProblemSpec:
    """Random instance recipe: heavy-tailed plane coefficients and uniformly
    spread shift points (so the summands do not share a minimizer)."""

    D: int
    n: int
    label_count: int
    lam: float
    a_scale: float = 1.0
    b_scale: float = 1.0
    b_prime_low: float = 0.0
    b_prime_high: float = 10000.0

    def __post_init__(self):
        if self.D < 1 or self.n < 1 or self.label_count < 1:
            raise ValueError("D, n and label_count must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.a_scale <= 0 or self.b_scale <= 0:
            raise ValueError("coefficient scales must be positive")
        if not self.b_prime_high > self.b_prime_low:
            raise ValueError("b_prime_high must exceed b_prime_low")


def generate_problem(spec: ProblemSpec, seed: int) -> MinMaxProblem:
    """Cauchy-distributed slopes/offsets, uniform shift points, one seed."""
    rng = rng_stream(seed)
    a = spec.a_scale * rng.standard_cauchy((spec.n, spec.label_count, spec.D))
    b = spec.b_scale * rng.standard_cauchy((spec.n, spec.label_count))
    b_prime = rng.uniform(spec.b_prime_low, spec.b_prime_high, (spec.n, spec.D))
    return MinMaxProblem(a=a, b=b, b_prime=b_prime, lam=spec.lam)


@dataclass
class ExperimentConfig:
    """Grid-search experiment: problem recipe, initial point, per-algorithm
    hyperparameter grids, run counts, and the utility filter threshold."""

    problem: ProblemSpec
    iterations: int
    seeds: list[int]
    optimizers: list[dict]
    utility_threshold: float = 0.01
    w0: float | list = 10.0
    problem_seed: int = 0
    regenerate_problem_per_seed: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.utility_threshold <= 0:
            raise ValueError("utility_threshold must be positive")
        for opt in self.optimizers:
            if opt.get("algorithm") not in ALGORITHMS:
                raise ValueError(f"unknown algorithm in config: {opt.get('algorithm')!r}")
            grid = opt.get("grid", {})
            if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
                raise ValueError("each grid entry must map names to nonempty value lists")

    def w0_vector(self) -> np.ndarray:
        if isinstance(self.w0, (int, float)):
            return np.full(self.problem.D, float(self.w0))
        w0 = np.asarray(self.w0, dtype=float)
        if w0.shape != (self.problem.D,):
            raise ValueError("explicit w0 must have length D")
        return w0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            prob = ProblemSpec(
                D=int(doc["problem"]["D"]),
                n=int(doc["problem"]["n"]),
                label_count=int(doc["problem"]["label_count"]),
                lam=float(doc["problem"].get("lambda", doc["problem"].get("lam", 0.0))),
                a_scale=float(doc["problem"].get("a_scale", 1.0)),
                b_scale=float(doc["problem"].get("b_scale", 1.0)),
                b_prime_low=float(doc["problem"].get("b_prime_low", 0.0)),
                b_prime_high=float(doc["problem"].get("b_prime_high", 10000.0)),
            )
            seeds = doc.get("seeds", 1)
            if isinstance(seeds, int):
                base = int(doc.get("base_seed", 0))
                seeds = [base + r for r in range(seeds)]
            return cls(
                problem=prob,
                iterations=int(doc["iterations"]),
                seeds=[int(s) for s in seeds],
                optimizers=list(doc["optimizers"]),
                utility_threshold=float(doc.get("utility_threshold", 0.01)),
                w0=doc.get("w0", 10.0),
                problem_seed=int(doc.get("problem_seed", 0)),
                regenerate_problem_per_seed=bool(doc.get("regenerate_problem_per_seed", False)),
            )
        except KeyError as exc:
            raise ValueError(f"config is missing required key: {exc}") from exc


@dataclass
class RunTrace:
    """Objective values of one seeded run, initial point included."""

    algorithm: str
    seed: int
    hyperparams: dict
    objective: np.ndarray
    diverged: bool = False

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)


def _decay_schedule(params: dict) -> StepSchedule:
    kind = params.get("schedule", "decay")
    if kind == "strong-convex":
        return StepSchedule(
            "strong-convex", eta=int(params["eta"]), mu=float(params["mu"])
        )
    return StepSchedule(
        "decay",
        gamma0=float(params.get("gamma0", 0.0)),
        c_gamma=float(params.get("c_gamma", 0.0)),
    )


def run_once(
    problem: MinMaxProblem,
    algorithm: str,
    params: dict,
    iterations: int,
    seed: int,
    w0: np.ndarray,
) -> RunTrace:
    """Execute one seeded run and record the nonsmooth objective per iteration.

    Numeric blow-ups never raise: the first non-finite or absurdly large value
    flags the trace as diverged and the remaining entries are filled with inf.

    Stream-splitting rule: index draws (and oracle failures) come from
    rng_stream(seed, 0), gradient perturbations from rng_stream(seed, 1), and
    Monte Carlo label draws from rng_stream(seed, 2, i) for summand i.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    w0 = problem.check_w(w0)
    idx_rng = rng_stream(seed, 0)
    noise_rng = rng_stream(seed, 1)
    mc_samples = params.get("mc_samples")
    mc_streams: dict[int, np.random.Generator] = {}

    def mc_rng(i: int) -> np.random.Generator:
        if i not in mc_streams:
            mc_streams[i] = rng_stream(seed, 2, i)
        return mc_streams[i]

    trace = np.empty(iterations + 1)
    f0 = eval_f(problem, w0)
    trace[0] = f0
    threshold = DIVERGENCE_FACTOR * max(1.0, abs(f0))

    if algorithm in ("sgd", "subsgd"):
        schedule = _decay_schedule(params)
        beta = float(params["beta"]) if algorithm == "sgd" else None
        w = w0.copy()

        def step(t):
            nonlocal w
            i = int(idx_rng.integers(problem.n))
            if algorithm == "subsgd":
                g, _ = subgrad_f_summand(problem, i, w)
            elif mc_samples:
                g = mc_grad_summand(problem, i, w, beta, int(mc_samples), mc_rng(i))
            else:
                g = grad_f_beta_summand(problem, i, w, beta)
            w = w - step_size(schedule, t) * g
            return eval_f(problem, w)

    elif algorithm in ("subsgdp", "asubsgdp"):
        schedule = _decay_schedule(params)
        eta = int(params.get("eta", 1))
        state = AveragedState.start(w0, eta)
        if algorithm == "asubsgdp":
            argmax_cfg = ArgmaxOracleConfig("decay", eta=eta)
        else:
            argmax_cfg = ArgmaxOracleConfig("exact")

        def step(t):
            subsgdp_step(problem, state, schedule, argmax_cfg, UNCONSTRAINED, idx_rng)
            return eval_f(problem, state.w_bar)

    else:  # saga family
        schedule = _decay_schedule(params)
        if algorithm == "beta_saga":
            bsched = BetaSchedule(
                beta0=float(params["beta0"]),
                increment=float(params.get("beta_increment", 0.0)),
                period=int(params.get("beta_period", 1)),
            )
            beta_now = bsched.beta0
        else:
            bsched = None
            beta_now = float(params["beta"])
        noise_cfg = None
        if algorithm == "asaga":
            noise_cfg = NoisyGradientConfig(
                theta=float(params.get("theta", 0.0)),
                noise_shape=params.get("noise_shape", "uniform"),
            )

        def grad_fn(i, wv):
            if mc_samples:
                g = mc_grad_summand(problem, i, wv, beta_now, int(mc_samples), mc_rng(i))
            else:
                g = grad_f_beta_summand(problem, i, wv, beta_now)
            if noise_cfg is not None:
                g = noisy_grad_summand(g, noise_cfg, noise_rng)
            return g

        state = saga_init(grad_fn, w0, problem.n)

        def step(t):
            nonlocal beta_now
            if bsched is not None:
                beta_now = beta_schedule_step(beta_now, t + 1, bsched)
            saga_step(state, grad_fn, step_size(schedule, t), UNCONSTRAINED, idx_rng)
            return eval_f(problem, state.w)

    diverged = False
    with np.errstate(all="ignore"):
        for t in range(iterations):
            val = float(step(t))
            trace[t + 1] = val
            if not math.isfinite(val) or abs(val) > threshold:
                diverged = True
                trace[t + 2:] = math.inf
                break

    return RunTrace(
        algorithm=algorithm,
        seed=seed,
        hyperparams=dict(params),
        objective=trace,
        diverged=diverged,
    )


@dataclass
class UtilityReport:
    """Stability metrics of one hyperparameter cell across its runs.

    utility is absolute_ascent / total_descent, or None when no descent
    happened (flagged undefined rather than dividing by zero).
    mean_objective averages iterations 1..T of every run; the initial point
    is excluded.
    """

    total_descent: float
    absolute_ascent: float
    utility: float | None
    mean_objective: float


def utility(traces) -> UtilityReport:
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    length = traces[0].objective.size
    if any(tr.objective.size != length for tr in traces):
        raise ValueError("traces must have equal lengths")
    initial = float(np.mean([tr.objective[0] for tr in traces]))
    best = min(float(np.nanmin(tr.objective)) for tr in traces)
    total_descent = initial - best
    ascent = 0.0
    with np.errstate(invalid="ignore"):  # inf-to-inf sentinel pairs diff to nan
        for tr in traces:
            diffs = np.diff(tr.objective)
            ascent += float(diffs[diffs > 0].sum())  # excludes nan pairs
    util = ascent / total_descent if total_descent > 0 else None
    mean_objective = float(np.mean([tr.objective[1:] for tr in traces]))
    return UtilityReport(
        total_descent=total_descent,
        absolute_ascent=ascent,
        utility=util,
        mean_objective=mean_objective,
    )


@dataclass
class CellResult:
    algorithm: str
    params: dict
    report: UtilityReport
    diverged_runs: int
    passed_filter: bool
    traces: list[RunTrace] | None = None

    def param_key(self) -> tuple:
        return tuple(sorted(self.params.items()))


@dataclass
class GridSearchResult:
    cells: list[CellResult]
    winners: dict[str, CellResult | None]


def _grid_cells(grid: dict) -> list[dict]:
    names = sorted(grid.keys())
    return [dict(zip(names, combo)) for combo in product(*(grid[k] for k in names))]


def passes_utility_filter(rep: UtilityReport, diverged_runs: int, threshold: float) -> bool:
    """Stability gate: no diverged run, a defined utility strictly below the
    threshold, and a finite mean objective."""
    return (
        diverged_runs == 0
        and rep.utility is not None
        and rep.utility < threshold
        and math.isfinite(rep.mean_objective)
    )


def _evaluate_cell(problem, spec, algorithm, params, iterations, seeds, w0, regenerate, threshold):
    traces = []
    for run_seed in seeds:
        prob = generate_problem(spec, run_seed) if regenerate else problem
        traces.append(run_once(prob, algorithm, params, iterations, run_seed, w0))
    rep = utility(traces)
    diverged_runs = sum(tr.diverged for tr in traces)
    passed = passes_utility_filter(rep, diverged_runs, threshold)
    return CellResult(
        algorithm=algorithm,
        params=params,
        report=rep,
        diverged_runs=diverged_runs,
        passed_filter=passed,
        traces=traces,
    )


def grid_search(
    config: ExperimentConfig,
    workers: int | None = None,
    keep_traces: str = "winners",
) -> GridSearchResult:
    """Evaluate every grid cell over all seeds and pick, per algorithm, the
    stable cell with the smallest mean objective.

    Stability means: no diverged run and utility strictly below the threshold.
    Ties on the mean objective break by lexicographic hyperparameter order.
    An algorithm whose cells are all filtered out gets winner None (an
    explicit "no stable setting" outcome, not an error).  Results do not
    depend on the worker count.
    """
    if keep_traces not in ("winners", "all", "none"):
        raise ValueError("keep_traces must be 'winners', 'all' or 'none'")
    problem = generate_problem(config.problem, config.problem_seed)
    w0 = config.w0_vector()
    tasks = []
    for opt in config.optimizers:
        algorithm = opt["algorithm"]
        for params in _grid_cells(opt.get("grid", {})):
            tasks.append((algorithm, params))

    args = [
        (
            problem,
            config.problem,
            algorithm,
            params,
            config.iterations,
            config.seeds,
            w0,
            config.regenerate_problem_per_seed,
            config.utility_threshold,
        )
        for algorithm, params in tasks
    ]
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_evaluate_cell_star, args))
    else:
        cells = [_evaluate_cell(*a) for a in args]

    winners: dict[str, CellResult | None] = {}
    for opt in config.optimizers:
        algorithm = opt["algorithm"]
        candidates = [c for c in cells if c.algorithm == algorithm and c.passed_filter]
        if candidates:
            winners[algorithm] = min(
                candidates, key=lambda c: (c.report.mean_objective, c.param_key())
            )
        else:
            winners[algorithm] = None

    if keep_traces == "none":
        for cell in cells:
            cell.traces = None
    elif keep_traces == "winners":
        winning = {id(w) for w in winners.values() if w is not None}
        for cell in cells:
            if id(cell) not in winning:
                cell.traces = None
    return GridSearchResult(cells=cells, winners=winners)


def _evaluate_cell_star(args):
    return _evaluate_cell(*args)


# --- reports ----------------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def write_traces_csv(traces, path) -> None:
    """Long format: algorithm, seed, iteration, objective.  Floats are written
    with repr so that read-back reproduces them exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "seed", "iteration", "objective"])
        for tr in traces:
            for t, val in enumerate(tr.objective):
                writer.writerow([tr.algorithm, tr.seed, t, _fmt(val)])


def read_traces_csv(path) -> list[RunTrace]:
    rows: dict[tuple, list] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = (row["algorithm"], int(row["seed"]))
            rows.setdefault(key, []).append((int(row["iteration"]), float(row["objective"])))
    traces = []
    for (algorithm, seed), vals in rows.items():
        vals.sort()
        traces.append(RunTrace(
            algorithm=algorithm,
            seed=seed,
            hyperparams={},
            objective=np.array([v for _, v in vals]),
            diverged=not np.isfinite([v for _, v in vals]).all(),
        ))
    return traces


def write_grid_csv(cells, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([
            "algorithm", "params", "total_descent", "absolute_ascent",
            "utility", "mean_objective", "diverged_runs", "passed_filter",
        ])
        for cell in cells:
            rep = cell.report
            writer.writerow([
                cell.algorithm,
                json.dumps(cell.params, sort_keys=True),
                _fmt(rep.total_descent),
                _fmt(rep.absolute_ascent),
                "" if rep.utility is None else _fmt(rep.utility),
                _fmt(rep.mean_objective),
                cell.diverged_runs,
                int(cell.passed_filter),
            ])


def write_winners_csv(winners, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "status", "params", "mean_objective", "utility"])
        for algorithm in sorted(winners):
            cell = winners[algorithm]
            if cell is None:
                writer.writerow([algorithm, "no-stable-setting", "", "", ""])
            else:
                rep = cell.report
                writer.writerow([
                    algorithm,
                    "stable",
                    json.dumps(cell.params, sort_keys=True),
                    _fmt(rep.mean_objective),
                    "" if rep.utility is None else _fmt(rep.utility),
                ])


def write_figure(traces, path, log_y: bool | None = None) -> None:
    """Per-iteration mean line with a +-1 std band for each algorithm."""
    from matplotlib.figure import Figure

    fig = Figure(figsize=(7, 4.5))
    ax = fig.subplots()
    by_algo: dict[str, list] = {}
    for tr in traces:
        by_algo.setdefault(tr.algorithm, []).append(tr.objective)
    finite_min = math.inf
    for algorithm in sorted(by_algo):
        stack = np.vstack(by_algo[algorithm])
        with np.errstate(all="ignore"):
            mean = np.nanmean(stack, axis=0)
            std = np.nanstd(stack, axis=0)
        t = np.arange(mean.size)
        ax.plot(t, mean, label=algorithm)
        ax.fill_between(t, mean - std, mean + std, alpha=0.25)
        finite = mean[np.isfinite(mean)]
        if finite.size:
            finite_min = min(finite_min, float(finite.min()))
    if log_y is None:
        log_y = finite_min > 0
    if log_y and finite_min > 0:
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    if by_algo:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")


def report(result: GridSearchResult, out_dir) -> list[Path]:
    """Write traces.csv, grid.csv, winners.csv and fig.svg into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces = [tr for cell in result.cells if cell.traces for tr in cell.traces]
    paths = [out / "traces.csv", out / "grid.csv", out / "winners.csv", out / "fig.svg"]
    write_traces_csv(traces, paths[0])
    write_grid_csv(result.cells, paths[1])
    write_winners_csv(result.winners, paths[2])
    write_figure(traces, paths[3])
    return paths
