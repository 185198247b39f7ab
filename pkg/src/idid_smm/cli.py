"""Command-line front end.

Three subcommands:

* ``estimate``: run one estimator on a CSV file and emit a JSON result.
* ``simulate``: run a Monte Carlo study and emit a JSON report (plus optional
  tidy CSV and SVG summary panels).
* ``replicate-thin``: planted-truth replication of the two-period prescription
  analysis from published marginal frequencies.

Exit codes: 0 success, 2 estimation failure, 1 usage error. Errors are
emitted as structured JSON on stderr with a machine-readable ``code``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .datasets import load_panel_csv, load_rcs_csv, validate, EffectSpec
from .exceptions import IdidSmmError
from .learners import learner_from_config
from .panel_nocov import solve_multiplicative_nocov, wald_additive
from .panel_nonparam import estimate_nonparam
from .panel_param import MSpec, MomentSpec, estimate_param
from .repeated_cs import estimate_rcs_param, solve_rcs_nocov
from .simulation import TwoPeriodMarginals, generate_rcs_planted, run_study

SCHEMA = "idid-smm/1"


def _emit_error(code: str, message: str) -> None:
    json.dump({"schema": SCHEMA, "error": {"code": code, "message": message}},
              sys.stderr)
    sys.stderr.write("\n")


def _write_result(payload: dict, output: str | None) -> None:
    payload = {"schema": SCHEMA, "version": __version__, **payload}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if output:
        out_dir = os.environ.get("IDID_SMM_OUTPUT_DIR", "")
        path = os.path.join(out_dir, output) if out_dir else output
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _estimate_config(args) -> dict:
    return {
        "command": "estimate", "design": args.design, "scale": args.scale,
        "target": args.target, "method": args.method, "input": args.input,
        "covariates": args.covariates, "m_spec": args.m_spec,
        "d_spec": args.d_spec, "learner": args.learner, "folds": args.folds,
        "bootstrap": args.bootstrap, "seed": args.seed, "level": args.level,
    }


def _check_method(args) -> None:
    if args.method == "wald" and (args.scale != "additive" or args.design != "panel"):
        raise ValueError("method wald requires --design panel --scale additive")
    if args.method in ("quadratic", "param", "nonparam") and args.scale != "multiplicative":
        raise ValueError(f"method {args.method} requires --scale multiplicative")
    if args.method == "nonparam" and args.design != "panel":
        raise ValueError("method nonparam requires --design panel")


def _run_estimate(args) -> int:
    _check_method(args)
    covs = [c for c in (args.covariates or "").split(",") if c]
    if args.design == "panel":
        data = load_panel_csv(args.input, covs)
    else:
        data = load_rcs_csv(args.input, covs)
    report = validate(data, EffectSpec(scale=args.scale, target=args.target))
    if not report.ok:
        raise ValueError(f"validation failed: {report.fatal}")

    m_spec = MSpec(basis=tuple(json.loads(args.m_spec))) if args.m_spec else MSpec()
    d_spec = MomentSpec(d_basis=tuple(json.loads(args.d_spec))) if args.d_spec \
        else MomentSpec(d_basis=("1", "z"))
    learner = learner_from_config(json.loads(args.learner)) if args.learner else None

    if args.method == "wald":
        est = wald_additive(data, level=args.level, target=args.target)
    elif args.method == "quadratic" and args.design == "panel":
        variance = "bootstrap" if args.bootstrap else "delta"
        est = solve_multiplicative_nocov(
            data, level=args.level, target=args.target, variance=variance,
            n_boot=args.bootstrap or 200, seed=args.seed)
    elif args.method == "quadratic":
        variance = "bootstrap" if args.bootstrap else "delta"
        est = solve_rcs_nocov(data, level=args.level, target=args.target,
                              variance=variance, n_boot=args.bootstrap or 200,
                              seed=args.seed)
    elif args.method == "param" and args.design == "panel":
        est = estimate_param(data, m_spec, d_spec, level=args.level,
                             target=args.target)
    elif args.method == "param":
        est = estimate_rcs_param(data, m_spec, d_spec, pt_learner=learner,
                                 level=args.level, target=args.target)
    else:
        est = estimate_nonparam(data, learner=learner, n_folds=args.folds,
                                seed=args.seed, level=args.level,
                                target=args.target)

    _write_result({
        "config": _estimate_config(args),
        "validation": report.as_dict(),
        "result": est.as_dict(),
    }, args.output)
    return 0


def _run_simulate(args) -> int:
    n_list = [int(v) for v in args.n.split(",")]
    approaches = args.approaches.split(",")
    report = run_study(
        setting=args.setting, n_list=n_list, reps=args.reps,
        approaches=approaches, master_seed=args.seed, parallelism=args.jobs,
        level=args.level)
    if args.csv:
        report.to_csv(args.csv)
    if args.plot:
        _plot_study(report, args.plot)
    _write_result({
        "config": {"command": "simulate", "setting": args.setting, "n": n_list,
                   "reps": args.reps, "approaches": approaches,
                   "seed": args.seed, "jobs": args.jobs, "level": args.level},
        "result": report.as_dict(),
    }, args.output)
    return 0


def _plot_study(report, path: str) -> None:
    """Three summary panels: sqrt(n)-bias, variance ratio, coverage."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    labels, biases = [], []
    for cell in report.cells:
        label = f"{cell['approach']}\nn={cell['n']}"
        labels.append(label)
        ok = [r for r in cell["records"] if r["ok"]]
        biases.append([np.sqrt(cell["n"]) * (r["beta"] - report.beta_true) for r in ok])
    axes[0].boxplot(biases, tick_labels=labels)
    axes[0].axhline(0.0, color="grey", lw=0.8)
    axes[0].set_title("sqrt(n)-bias")
    axes[1].bar(labels, [c["variance_ratio"] for c in report.cells])
    axes[1].axhline(1.0, color="grey", lw=0.8)
    axes[1].set_title("variance ratio")
    axes[2].bar(labels, [c["coverage"] for c in report.cells])
    axes[2].axhline(0.95, color="grey", lw=0.8)
    axes[2].set_title("coverage")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _run_replicate(args) -> int:
    marg = TwoPeriodMarginals()
    rcs = generate_rcs_planted(marg, args.beta, args.n0, args.n1, args.seed)
    est = solve_rcs_nocov(rcs, level=args.level)
    lo, hi = est.ci
    covered = bool(lo <= args.beta <= hi)
    result = {"beta_planted": args.beta, "estimate": est.as_dict(),
              "covered": covered, "cells": rcs.metadata}
    if args.reps > 1:
        betas, flags = [], []
        children = np.random.SeedSequence(args.seed).spawn(args.reps)
        for child in children:
            data = generate_rcs_planted(marg, args.beta, args.n0, args.n1, child)
            e = solve_rcs_nocov(data, level=args.level)
            betas.append(e.beta)
            flags.append(e.ci[0] <= args.beta <= e.ci[1])
        result["coverage"] = float(np.mean(flags))
        result["mean_beta"] = float(np.mean(betas))
        result["sd_beta"] = float(np.std(betas, ddof=1))
    _write_result({
        "config": {"command": "replicate-thin", "beta": args.beta,
                   "n0": args.n0, "n1": args.n1, "seed": args.seed,
                   "reps": args.reps, "level": args.level},
        "result": result,
    }, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idid-smm",
        description="Exposure effects under structural mean models with an "
                    "instrument for difference-in-differences.")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate an effect from a CSV file")
    est.add_argument("--design", choices=["panel", "rcs"], default="panel")
    est.add_argument("--scale", choices=["additive", "multiplicative"],
                     default="multiplicative")
    est.add_argument("--target", choices=["population", "treated"],
                     default="population")
    est.add_argument("--method", choices=["wald", "quadratic", "param", "nonparam"],
                     required=True)
    est.add_argument("--input", required=True)
    est.add_argument("--output")
    est.add_argument("--covariates", default="",
                     help="comma-separated covariate column names")
    est.add_argument("--m-spec", dest="m_spec",
                     help='JSON list of basis tokens, e.g. \'["1","x1"]\'')
    est.add_argument("--d-spec", dest="d_spec",
                     help='JSON list of basis tokens, e.g. \'["1","x1","z"]\'')
    est.add_argument("--learner", help="JSON learner configuration")
    est.add_argument("--folds", type=int, default=5)
    est.add_argument("--bootstrap", type=int, default=0,
                     help="bootstrap replications (0 = analytic variance)")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--level", type=float, default=0.95)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    sim.add_argument("--setting", type=int, choices=[1, 2, 3, 4], required=True)
    sim.add_argument("--n", default="5000", help="comma-separated sample sizes")
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--approaches", default="nocov")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--level", type=float, default=0.95)
    sim.add_argument("--output")
    sim.add_argument("--csv", help="write one row per replication")
    sim.add_argument("--plot", help="write SVG summary panels")

    rep = sub.add_parser("replicate-thin",
                         help="planted-truth replication from published marginals")
    rep.add_argument("--beta", type=float, default=-1.27)
    rep.add_argument("--n0", type=int, default=1656)
    rep.add_argument("--n1", type=int, default=15234)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--reps", type=int, default=1)
    rep.add_argument("--level", type=float, default=0.95)
    rep.add_argument("--output")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        if args.command == "estimate":
            return _run_estimate(args)
        if args.command == "simulate":
            return _run_simulate(args)
        return _run_replicate(args)
    except IdidSmmError as exc:
        _emit_error(getattr(exc, "code", "estimation-error"), str(exc))
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        _emit_error("usage-error", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
