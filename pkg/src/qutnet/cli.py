"""Command line front end.

Exit codes: 0 ok, 2 input error, 3 degenerate data, 4 numerical failure.
Every command writes a run manifest; ``qutnet rerun MANIFEST`` replays it.
Set ``QUTNET_NUM_WORKERS`` to run Monte Carlo blocks, restarts and
simulation replicates in parallel; outputs do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .fileio import (InputError, Standardizer, atomic_write, csv_text, format_float,
                     load_model, read_table, save_model)
from .loss_grad import ConstantResponse, EPS_RES
from .network import Architecture, Dataset, ShapeError, forward
from .optimizer import (FitConfig, NonFiniteObjective, OracleInit, RandomInit, fit,
                        multi_start_fit, null_params)
from .qut import QutConfig, quantile_universal_threshold
from .simulation import DESK_GRID, FULL_GRID, recovery_experiment

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _write_manifest(path, args, config, seeds, started):
    manifest = {
        "command": args.command,
        "argv": args._argv,
        "config": config,
        "seeds": seeds,
        "version": __version__,
        "duration_seconds": time.perf_counter() - started,
    }
    atomic_write(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _load_dataset(path, standardize=False):
    table = read_table(path)
    if table.values.shape[1] < 2:
        raise InputError(f"{path}: need at least one feature column plus the response")
    x = table.features
    std = Standardizer.fit(x) if standardize and x.shape[0] else None
    if std is not None:
        x = std.transform(x)
    return table, x, table.response, std


def _fit_config(args, init) -> FitConfig:
    return FitConfig(
        lr_smooth=args.lr_smooth, smooth_iters=args.smooth_iters,
        lr_prox=args.lr_prox, prox_iters=args.prox_iters, tol=args.tol,
        fista=not args.no_fista, init=init,
    )


def cmd_qut(args):
    started = time.perf_counter()
    if args.data:
        _, x, _, _ = _load_dataset(args.data, args.standardize)
        source = {"data": os.path.abspath(args.data), "standardize": args.standardize}
    else:
        if args.n is None or args.p1 is None:
            raise CliError("give --data or both --n and --p1", EXIT_INPUT)
        if args.design != "gaussian":
            raise CliError(f"unknown design {args.design!r}", EXIT_INPUT)
        x = np.random.default_rng(args.seed).standard_normal((args.n, args.p1))
        source = {"n": args.n, "p1": args.p1, "design": args.design}
    if x.shape[0] < 2:
        raise CliError("need at least 2 observations for the null statistic", EXIT_DEGENERATE)
    try:
        config = QutConfig(args.alpha, args.mc, args.seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    est = quantile_universal_threshold(x, Architecture((1, 1)).activation.deriv_at_zero, config)
    os.makedirs(args.out, exist_ok=True)
    payload = est.to_dict()
    payload.update(n=int(x.shape[0]), p1=int(x.shape[1]))
    atomic_write(os.path.join(args.out, "qut.json"), json.dumps(payload, indent=1, sort_keys=True) + "\n")
    _write_manifest(os.path.join(args.out, "manifest.json"), args,
                    {**source, "alpha": args.alpha, "mc": args.mc}, {"seed": args.seed}, started)
    print(format_float(est.lambda_qut))


def _parse_arch(text, p1):
    try:
        hidden = tuple(int(v) for v in text.split(",") if v.strip())
        return Architecture((p1,) + hidden)
    except ValueError as exc:
        raise CliError(f"bad --arch {text!r}: {exc}", EXIT_INPUT) from exc


def cmd_fit(args):
    started = time.perf_counter()
    table, x, y, std = _load_dataset(args.data, args.standardize)
    arch = _parse_arch(args.arch, x.shape[1])
    try:
        ds = Dataset(x, y)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DEGENERATE) from exc
    if np.linalg.norm(y - y.mean()) <= EPS_RES:
        raise CliError("response is constant", EXIT_DEGENERATE)

    qut = None
    if args.lam == "qut":
        qut = quantile_universal_threshold(
            x, arch.activation.deriv_at_zero, QutConfig(args.alpha, args.mc, args.seed))
        lam = qut.lambda_qut
    else:
        try:
            lam = float(args.lam)
        except ValueError:
            raise CliError(f"--lambda must be a number or 'qut', got {args.lam!r}", EXIT_INPUT) from None
        if not lam >= 0:
            raise CliError("--lambda must be nonnegative", EXIT_INPUT)

    if args.init == "null":
        init = OracleInit(null_params(arch, ds, args.seed))
    else:
        init = RandomInit(args.seed)
    config = _fit_config(args, init)
    os.makedirs(args.out, exist_ok=True)
    try:
        if args.restarts > 1:
            res = multi_start_fit(ds, arch, lam, config, restarts=args.restarts, seed=args.seed)
        else:
            res = fit(ds, arch, lam, config)
    except NonFiniteObjective as exc:
        atomic_write(os.path.join(args.out, "trace_failed.csv"),
                     csv_text(["iteration", "objective"], list(enumerate(map(float, exc.trace)))))
        raise CliError(f"optimizer aborted: {exc}", EXIT_NUMERIC) from exc

    names = table.header[:-1]
    save_model(os.path.join(args.out, "model.json"), res.params, arch, std, names)
    sup = res.support
    rows = [("feature", j, names[j]) for j in sorted(sup.selected_features)]
    rows += [("neuron", i, "") for i in sorted(sup.active_neurons)]
    atomic_write(os.path.join(args.out, "support.csv"), csv_text(["kind", "index", "name"], rows))
    boundary = res.phase_boundary
    trace_rows = [
        (i, "init" if i == 0 else ("smooth" if i <= boundary else "prox"), float(o), float(l))
        for i, (o, l) in enumerate(zip(res.objective_trace, res.loss_trace))
    ]
    atomic_write(os.path.join(args.out, "trace.csv"),
                 csv_text(["iteration", "phase", "objective", "loss"], trace_rows))
    summary = {
        "lambda": lam,
        "objective": res.objective,
        "loss": res.loss,
        "converged": res.converged,
        "phase_boundary": boundary,
        "selected_features": sorted(sup.selected_features),
        "n_active_neurons": len(sup.active_neurons),
        "winning_seed": res.seed,
        "qut": None if qut is None else qut.to_dict(),
    }
    atomic_write(os.path.join(args.out, "fit.json"), json.dumps(summary, indent=1, sort_keys=True) + "\n")
    cfg = {k: v for k, v in asdict(config).items() if k != "init"}
    cfg.update(data=os.path.abspath(args.data), arch=list(arch.layer_widths), lam=args.lam,
               alpha=args.alpha, mc=args.mc, restarts=args.restarts, init=args.init,
               standardize=args.standardize)
    _write_manifest(os.path.join(args.out, "manifest.json"), args, cfg, {"seed": args.seed}, started)
    print(f"lambda={format_float(lam)} features={sorted(sup.selected_features)} "
          f"neurons={len(sup.active_neurons)}")


def parse_grid(text: str) -> dict:
    """Parse ``"h=1,2;p1=16,32;p2=16"`` (or ``desk`` / ``full``) into axis tuples."""
    key = text.strip().lower()
    if key == "desk":
        return dict(DESK_GRID)
    if key == "full":
        return dict(FULL_GRID)
    grid = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        name, sep, values = part.partition("=")
        name = name.strip()
        if not sep or name not in ("h", "p1", "p2") or name in grid:
            raise CliError(f"bad grid component {part!r}", EXIT_INPUT)
        try:
            vals = tuple(int(v) for v in values.split(",") if v.strip())
        except ValueError:
            raise CliError(f"bad grid values in {part!r}", EXIT_INPUT) from None
        if not vals or any(v < 1 for v in vals):
            raise CliError(f"grid axis {name!r} needs positive integers", EXIT_INPUT)
        grid[name] = vals
    if set(grid) != {"h", "p1", "p2"}:
        raise CliError(f"grid must define h, p1 and p2, got {sorted(grid)}", EXIT_INPUT)
    return grid


def cmd_simulate(args):
    started = time.perf_counter()
    grid = parse_grid(args.grid)
    n_cells = len(grid["h"]) * len(grid["p1"]) * len(grid["p2"])
    if max(grid["p1"]) >= 256 or max(grid["p2"]) >= 256 or n_cells * args.replicates > 2000:
        print(f"warning: {n_cells} cells x {args.replicates} replicates up to "
              f"p1={max(grid['p1'])}, p2={max(grid['p2'])}; expect a multi-hour run",
              file=sys.stderr)
    config = _fit_config(args, RandomInit(0))
    result = recovery_experiment(
        grid, M=args.replicates, strategy=args.strategy, restarts=args.restarts,
        base_seed=args.seed, lambda_multiplier=args.lambda_multiplier, alpha=args.alpha,
        mc_samples=args.mc, n=args.n, xi=args.xi, fit_config=config, n_test=args.n_test,
        fixed_lambda=args.fixed_lambda,
    )
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "recovery.csv"), result.to_csv())
    cfg = {k: v for k, v in asdict(config).items() if k != "init"}
    cfg.update(grid={k: list(v) for k, v in grid.items()}, replicates=args.replicates,
               strategy=args.strategy, restarts=args.restarts,
               lambda_multiplier=args.lambda_multiplier, fixed_lambda=args.fixed_lambda,
               alpha=args.alpha, mc=args.mc, n=args.n, xi=args.xi, n_test=args.n_test)
    _write_manifest(os.path.join(args.out, "manifest.json"), args, cfg, {"seed": args.seed}, started)
    sys.stdout.write(result.to_csv())


def cmd_predict(args):
    started = time.perf_counter()
    params, arch, std = load_model(args.model)
    table = read_table(args.data)
    p1 = arch.n_features
    width = table.values.shape[1]
    if width == p1:
        x = table.values
    elif width == p1 + 1:
        x = table.values[:, :-1]
    else:
        raise CliError(f"model expects {p1} features; {args.data} has {width} columns", EXIT_INPUT)
    if std is not None and x.shape[0]:
        x = std.transform(x)
    preds = forward(params, arch, x) if x.shape[0] else np.empty(0)
    atomic_write(args.out, csv_text(["prediction"], [(float(v),) for v in preds]))
    _write_manifest(args.out + ".manifest.json", args,
                    {"model": os.path.abspath(args.model), "data": os.path.abspath(args.data)},
                    {}, started)


def cmd_rerun(args):
    try:
        with open(args.manifest) as fh:
            argv = json.load(fh)["argv"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read manifest: {exc}", EXIT_INPUT) from exc
    return main(argv)


def _add_solver_flags(p):
    p.add_argument("--lr-smooth", type=float, default=1e-3)
    p.add_argument("--smooth-iters", type=int, default=5000)
    p.add_argument("--lr-prox", type=float, default=1e-3)
    p.add_argument("--prox-iters", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--no-fista", action="store_true", help="plain ISTA in the proximal phase")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qutnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qut", help="Monte Carlo quantile universal threshold")
    p.add_argument("--data", help="CSV with header; last column is the response")
    p.add_argument("--n", type=int)
    p.add_argument("--p1", type=int)
    p.add_argument("--design", default="gaussian")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mc", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_qut)

    p = sub.add_parser("fit", help="fit the l1-penalized network on a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", required=True, help="hidden widths, e.g. 8 or 16,8")
    p.add_argument("--lambda", dest="lam", default="qut", help="number or 'qut'")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mc", type=int, default=10000)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--init", choices=("random", "null"), default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="support recovery grid with a sparse teacher")
    p.add_argument("--grid", default="desk", help="'h=1,2;p1=16,32;p2=16', 'desk' or 'full'")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--strategy", choices=("oracle", "oracle_w1", "nonoracle"), default="oracle")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--lambda-multiplier", type=float, default=1.0)
    p.add_argument("--fixed-lambda", type=float, default=None,
                   help="use this penalty instead of the threshold (e.g. 0)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mc", type=int, default=10000)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--xi", type=float, default=0.1)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    args._argv = argv
    try:
        rc = args.func(args)
        return rc or EXIT_OK
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InputError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConstantResponse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NonFiniteObjective as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
