"""Command-line interface.

Subcommands::

    saabo bench run --config cfg.json [--out run.csv]
    saabo bench convergence --config cfg.json [--out conv.csv]
    saabo fit --data data.csv --out model.json [--seed 0] [--restarts 8]
    saabo suggest --model model.json --acqf qei [--q 1] [--bounds "0:1,0:1"]

Config documents are JSON objects mirroring the RunConfig / convergence-study
fields. Exit status is 0 on success and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import acquisition as acq
from .bench import (
    ConvergenceResult,
    RunConfig,
    run_closed_loop,
    run_convergence_study,
    write_convergence_csv,
    write_records_csv,
)
from .gp import Dataset, FitConfig, GPModel, fit_mle
from .optimize import OptimizeConfig, optimize_acqf, optimize_one_shot_kg
from .sampling import draw_base_samples
from .testfunctions import get_test_function


class ConfigError(Exception):
    pass


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _cmd_bench_run(args) -> int:
    doc = _load_config(args.config)
    out = doc.pop("out", None) or args.out
    try:
        config = RunConfig(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    records = run_closed_loop(config)
    fn = get_test_function(config.function)
    if out:
        write_records_csv(records, out, fn.dim)
    else:
        for r in records:
            print(r.trial, r.iteration, r.best_so_far)
    return 0


def _cmd_bench_convergence(args) -> int:
    doc = _load_config(args.config)
    out = doc.pop("out", None) or args.out
    try:
        result = run_convergence_study(
            sizes=[int(n) for n in doc.get("sizes", [16, 32, 64, 128, 256, 512, 1024, 2048, 4096])],
            modes=tuple(doc.get("modes", ["iid", "rqmc"])),
            replications=int(doc.get("replications", 100)),
            optimizers=tuple(doc.get("optimizers", ["saa"])),
            seed=int(doc.get("seed", 0)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if out:
        write_convergence_csv(result, out)
    for key, slope in sorted(result.slopes.items()):
        print(f"{key[0]} {key[1]} {key[2]}: {slope:.3f}")
    return 0


def _cmd_fit(args) -> int:
    try:
        dataset = Dataset.from_csv(args.data)
    except (OSError, ValueError) as e:
        raise ConfigError(str(e)) from e
    model = fit_mle(dataset, FitConfig(n_restarts=args.restarts, seed=args.seed))
    model.save(args.out)
    print(f"fitted model on {dataset.n} points -> {args.out}")
    return 0


def _parse_bounds(spec: str, d: int) -> np.ndarray:
    try:
        rows = []
        for part in spec.split(","):
            lo, hi = part.split(":")
            rows.append((float(lo), float(hi)))
        b = np.asarray(rows, dtype=np.float64)
    except ValueError as e:
        raise ConfigError(f"cannot parse bounds {spec!r}") from e
    if b.shape[0] != d:
        raise ConfigError(f"bounds cover {b.shape[0]} dimensions, model has {d}")
    return b


def _cmd_suggest(args) -> int:
    try:
        model = GPModel.load(args.model)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(str(e)) from e
    ds = model.dataset
    if args.bounds:
        bounds = _parse_bounds(args.bounds, ds.d)
    else:
        bounds = np.column_stack([ds.X.min(axis=0), ds.X.max(axis=0)])
        flat = bounds[:, 0] == bounds[:, 1]
        bounds[flat, 1] = bounds[flat, 0] + 1.0
    cfg = OptimizeConfig(
        bounds=bounds, q=args.q, raw_samples=256 * args.q, num_restarts=8
    )
    best_f = float(ds.Y[:, 0].max())
    seed = args.seed
    if args.acqf == "analytic_ei":
        if args.q != 1:
            raise ConfigError("analytic_ei supports q = 1 only")
        res = optimize_acqf(lambda Z: acq.analytic_ei(model, Z, best_f), cfg, seed)
    elif args.acqf == "qei":
        E = draw_base_samples("rqmc", seed, 128, args.q)
        ctx = acq.AcquisitionContext(model=model, base_samples=E, best_f=best_f)
        res = optimize_acqf(lambda Z: acq.q_expected_improvement(ctx, Z), cfg, seed)
    elif args.acqf == "qnei":
        E = draw_base_samples("rqmc", seed, 128, args.q + ds.n)
        ctx = acq.AcquisitionContext(model=model, base_samples=E, X_baseline=ds.X)
        res = optimize_acqf(
            lambda Z: acq.q_noisy_expected_improvement(ctx, Z), cfg, seed
        )
    elif args.acqf == "qucb":
        E = draw_base_samples("rqmc", seed, 128, args.q)
        ctx = acq.AcquisitionContext(model=model, base_samples=E, beta=args.beta)
        res = optimize_acqf(
            lambda Z: acq.q_upper_confidence_bound(ctx, Z), cfg, seed
        )
    elif args.acqf == "okg":
        E = draw_base_samples("rqmc", seed, 32, args.q)
        ctx = acq.AcquisitionContext(model=model, base_samples=E)
        res = optimize_one_shot_kg(ctx, cfg, seed)
    else:
        raise ConfigError(f"unknown acquisition {args.acqf!r}")
    for row in res.X_star:
        print(",".join(repr(float(v)) for v in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saabo")
    sub = p.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="benchmark harness")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    run = bsub.add_parser("run", help="closed-loop benchmark run")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.set_defaults(func=_cmd_bench_run)
    conv = bsub.add_parser("convergence", help="SAA convergence study")
    conv.add_argument("--config", required=True)
    conv.add_argument("--out")
    conv.set_defaults(func=_cmd_bench_convergence)

    fit = sub.add_parser("fit", help="fit a GP model to CSV data")
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--restarts", type=int, default=8)
    fit.set_defaults(func=_cmd_fit)

    sug = sub.add_parser("suggest", help="propose candidates from a saved model")
    sug.add_argument("--model", required=True)
    sug.add_argument("--acqf", required=True)
    sug.add_argument("--q", type=int, default=1)
    sug.add_argument("--bounds")
    sug.add_argument("--beta", type=float, default=2.0)
    sug.add_argument("--seed", type=int, default=0)
    sug.set_defaults(func=_cmd_suggest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
