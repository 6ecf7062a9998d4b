"""Command-line interface.

Subcommands:
  generate   -- sample a random problem instance and write it as JSON
  run        -- run one algorithm on a stored problem over several seeds
  gridsearch -- full grid search with the utility filter, plus reports
  report     -- re-render reports from a results directory

Exit codes: 0 success, 2 configuration error, 3 grid search found no stable
setting for at least one algorithm.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import bench
from .objective import load_problem, save_problem

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_STABLE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softminmax",
        description="Benchmark harness for softmax-smoothed min-max optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="sample a problem instance")
    p_gen.add_argument("--spec", required=True, help="problem spec JSON file")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True, help="output problem JSON file")

    p_run = sub.add_parser("run", help="run one algorithm over several seeds")
    p_run.add_argument("--problem", required=True, help="problem JSON file")
    p_run.add_argument("--algo", required=True, choices=bench.ALGORITHMS)
    p_run.add_argument("--params", default="{}", help="hyperparameters as a JSON object")
    p_run.add_argument("--iters", type=int, required=True)
    p_run.add_argument("--seeds", type=int, default=1, help="number of runs")
    p_run.add_argument("--base-seed", type=int, default=0)
    p_run.add_argument("--w0", type=float, default=10.0, help="initial iterate, every coordinate")
    p_run.add_argument("--out", required=True, help="output directory")

    p_grid = sub.add_parser("gridsearch", help="grid search with the utility filter")
    p_grid.add_argument("--config", required=True, help="experiment config JSON file")
    p_grid.add_argument("--out", required=True, help="output directory")
    p_grid.add_argument("--workers", type=int, default=None)

    p_rep = sub.add_parser("report", help="re-render reports from a results directory")
    p_rep.add_argument("--in", dest="in_dir", required=True)
    p_rep.add_argument("--out", required=True)
    return parser


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _cmd_generate(args) -> int:
    doc = _load_json(args.spec)
    doc = doc.get("problem", doc)  # accept either a bare spec or a full config
    spec = bench.ProblemSpec(
        D=int(doc["D"]),
        n=int(doc["n"]),
        label_count=int(doc["label_count"]),
        lam=float(doc.get("lambda", doc.get("lam", 0.0))),
        a_scale=float(doc.get("a_scale", 1.0)),
        b_scale=float(doc.get("b_scale", 1.0)),
        b_prime_low=float(doc.get("b_prime_low", 0.0)),
        b_prime_high=float(doc.get("b_prime_high", 10000.0)),
    )
    problem = bench.generate_problem(spec, args.seed)
    save_problem(problem, args.out)
    print(f"wrote {args.out}: n={problem.n} D={problem.dim} labels={problem.label_count}")
    return EXIT_OK


def _cmd_run(args) -> int:
    problem = load_problem(args.problem)
    params = json.loads(args.params)
    if not isinstance(params, dict):
        raise ValueError("--params must be a JSON object")
    if args.iters < 1:
        raise ValueError("--iters must be at least 1")
    if args.seeds < 1:
        raise ValueError("--seeds must be at least 1")
    w0 = np.full(problem.dim, args.w0)
    traces = [
        bench.run_once(problem, args.algo, params, args.iters, args.base_seed + r, w0)
        for r in range(args.seeds)
    ]
    rep = bench.utility(traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_traces_csv(traces, out / "traces.csv")
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "algorithm": args.algo,
                "params": params,
                "iterations": args.iters,
                "seeds": [args.base_seed + r for r in range(args.seeds)],
                "total_descent": rep.total_descent,
                "absolute_ascent": rep.absolute_ascent,
                "utility": rep.utility,
                "mean_objective": rep.mean_objective,
                "diverged_runs": sum(tr.diverged for tr in traces),
            },
            fh,
            indent=2,
        )
    bench.write_figure(traces, out / "fig.svg")
    print(f"wrote {out}/traces.csv, summary.json, fig.svg")
    return EXIT_OK


def _cmd_gridsearch(args) -> int:
    config = bench.ExperimentConfig.from_dict(_load_json(args.config))
    result = bench.grid_search(config, workers=args.workers)
    bench.report(result, args.out)
    missing = sorted(a for a, cell in result.winners.items() if cell is None)
    for algorithm, cell in sorted(result.winners.items()):
        if cell is None:
            print(f"{algorithm}: no stable setting")
        else:
            print(
                f"{algorithm}: {json.dumps(cell.params, sort_keys=True)} "
                f"mean_objective={cell.report.mean_objective:.6g}"
            )
    if missing:
        return EXIT_NO_STABLE
    return EXIT_OK


def _cmd_report(args) -> int:
    in_dir = Path(args.in_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces_path = in_dir / "traces.csv"
    if not traces_path.exists():
        raise ValueError(f"no traces.csv in {in_dir}")
    traces = bench.read_traces_csv(traces_path)
    bench.write_figure(traces, out / "fig.svg")
    for name in ("traces.csv", "grid.csv", "winners.csv"):
        src = in_dir / name
        if src.exists() and src.resolve() != (out / name).resolve():
            shutil.copyfile(src, out / name)
    print(f"wrote {out}/fig.svg")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on bad usage
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "generate": _cmd_generate,
        "run": _cmd_run,
        "gridsearch": _cmd_gridsearch,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
