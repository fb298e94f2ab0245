"""Command line interface.

Subcommands cover the pipeline stages: draw synthetic data, fit the
mean curve, fit the covariance surface, extract principal components
and scores, score a fitted surface against a simulation truth, and
build a report directory of delimited tables with rendered figures.

Every long flag can also be supplied through ``--config FILE`` (JSON
object keyed by the flag names with dashes replaced by underscores);
config values override flags.  Exit codes: 0 on success, 2 for invalid
inputs, 3 for numerical failures.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bandwidth import BandwidthGrid, cv_cov, cv_mean
from .data import read_jsonl, write_jsonl
from .exceptions import NumericalError, ValidationError
from .experiment import CSV_HEADER, ExperimentConfig, run_experiment
from .fpca import blup_scores, discretize_operator, eigenpairs
from .mean import MeanCurve, fit_mean
from .metrics import rmuie, rrmise
from .simulate import DESIGNS, SimTruth, design_geometry, simulate, snr_calibrate
from .smoother import CovSurface, fit_cov_surface, noise_variance

FULL_TABLE_N = (100, 200, 400)
FULL_TABLE_M = (5, 10, 20, 30)


def _design_for(descriptor: str) -> str:
    for design in DESIGNS:
        if design_geometry(design).descriptor() == descriptor:
            return design
    known = ", ".join(design_geometry(d).descriptor() for d in DESIGNS)
    raise ValidationError(
        f"no simulation design for geometry {descriptor!r}; available: {known}")


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required")


def _apply_config(args) -> None:
    path = getattr(args, "config", None)
    if not path:
        return
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    known = set(vars(args)) - {"func", "command", "config"}
    for key, value in values.items():
        if key not in known:
            raise ValidationError(
                f"unknown config key {key!r}; expected one of {sorted(known)}")
        setattr(args, key, value)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    _need(args, "geometry", "subjects", "rate", "output")
    design = _design_for(args.geometry)
    dataset, _ = simulate(design, args.subjects, args.rate, snr=args.snr,
                          seed=args.seed, weight_scheme=args.weights)
    write_jsonl(dataset, args.output)
    print(f"wrote {dataset.n} subjects "
          f"({int(dataset.sizes().sum())} observations) to {args.output}")
    return 0


def _mean_bandwidth(args, dataset, grid):
    if args.bw == "cv":
        result = cv_mean(dataset, folds=args.folds, mean_grid=grid)
        print(f"cross-validated h_mu = {result.h_opt:.6g}")
        return result.h_opt
    _need(args, "h_mu")
    return args.h_mu


def _cov_bandwidth(args, dataset, mean):
    if args.bw == "cv":
        result = cv_cov(dataset, mean, folds=args.folds)
        print(f"cross-validated h_cov = {result.h_opt:.6g}")
        return result.h_opt
    _need(args, "h_cov")
    return args.h_cov


def cmd_fit_mean(args) -> int:
    _need(args, "input", "output")
    dataset = read_jsonl(args.input)
    grid = np.linspace(dataset.domain[0], dataset.domain[1], args.grid)
    h_mu = _mean_bandwidth(args, dataset, grid)
    mean = fit_mean(dataset, h_mu, grid=grid, kernel=args.kernel)
    mean.save(args.output)
    print(f"fitted mean on {args.grid} grid points (h_mu={h_mu:.6g}) "
          f"-> {args.output}")
    return 0


def cmd_fit_cov(args) -> int:
    _need(args, "input", "mean", "output")
    dataset = read_jsonl(args.input)
    mean = MeanCurve.load(args.mean)
    h_cov = _cov_bandwidth(args, dataset, mean)
    grid = None if args.grid is None else np.linspace(
        dataset.domain[0], dataset.domain[1], args.grid)
    surface = fit_cov_surface(dataset, mean, h_cov, kernel=args.kernel,
                              grid=grid)
    surface.save(args.output)
    failed = int(surface.failed.sum())
    note = f", {failed} imputed cells" if failed else ""
    print(f"fitted covariance on a {surface.size}x{surface.size} grid "
          f"(h_cov={h_cov:.6g}{note}) -> {args.output}")
    return 0


def cmd_fpca(args) -> int:
    _need(args, "input", "mean", "cov", "output")
    dataset = read_jsonl(args.input)
    mean = MeanCurve.load(args.mean)
    surface = CovSurface.load(args.cov)
    noise = noise_variance(dataset, mean, surface)
    eigsys = eigenpairs(discretize_operator(surface), args.k)
    scores = blup_scores(dataset, mean, surface, eigsys, noise)
    out = _outdir(args.output)
    eigsys.save(out / "eigensystem.json")
    scores.save(out / "scores.json")
    scores.export_csv(out / "scores.csv")
    with open(out / "noise.json", "w", encoding="utf-8") as fh:
        json.dump({"sigma_sq": noise.sigma_sq, "raw": noise.raw}, fh)
        fh.write("\n")
    vals = ", ".join(f"{v:.6g}" for v in eigsys.eigenvalues)
    print(f"{args.k} components (eigenvalues {vals}), "
          f"sigma_sq={noise.sigma_sq:.6g} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    _need(args, "input", "geometry")
    surface = CovSurface.load(args.input)
    design = _design_for(args.geometry)
    width = snr_calibrate(design, args.snr)
    truth = SimTruth(design, design_geometry(design), width, args.snr)
    uniform = 100.0 * rmuie(surface, truth)
    integrated = 100.0 * rrmise(surface, truth)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump({"rmuie_pct": uniform, "rrmise_pct": integrated}, fh)
            fh.write("\n")
    print(f"rMUIE {uniform:.4f}%  rRMISE {integrated:.4f}%")
    return 0


def _write_mean_csv(mean, path) -> None:
    flat = mean.points.reshape(len(mean.grid), -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{j + 1}" for j in range(flat.shape[1])])
        for t, row in zip(mean.grid, flat):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _write_eigenvalue_csv(eigsys, path) -> None:
    total = float(np.sum(eigsys.eigenvalues))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "eigenvalue", "raw", "fraction"])
        for j in range(eigsys.k):
            lam = float(eigsys.eigenvalues[j])
            frac = lam / total if total > 0 else 0.0
            writer.writerow([j + 1, repr(lam),
                             repr(float(eigsys.raw_eigenvalues[j])),
                             repr(frac)])


def _report_dataset(args) -> int:
    from . import figures
    dataset = read_jsonl(args.input)
    out = _outdir(args.output)
    grid = np.linspace(dataset.domain[0], dataset.domain[1], args.grid)
    h_mu = _mean_bandwidth(args, dataset, grid)
    mean = fit_mean(dataset, h_mu, grid=grid, kernel=args.kernel)
    h_cov = _cov_bandwidth(args, dataset, mean)
    surface = fit_cov_surface(dataset, mean, h_cov, kernel=args.kernel)
    noise = noise_variance(dataset, mean, surface)
    eigsys = eigenpairs(discretize_operator(surface), args.k)
    scores = blup_scores(dataset, mean, surface, eigsys, noise)

    _write_mean_csv(mean, out / "mean.csv")
    surface.export_gnorm_csv(out / "gnorm.csv")
    _write_eigenvalue_csv(eigsys, out / "eigenvalues.csv")
    scores.export_csv(out / "scores.csv")
    summary = {
        "geometry": dataset.geometry.descriptor(),
        "n": dataset.n,
        "observations": int(dataset.sizes().sum()),
        "grid_size": int(args.grid),
        "h_mu": float(h_mu),
        "h_cov": float(h_cov),
        "sigma_sq": noise.sigma_sq,
        "k": int(args.k),
        "eigenvalues": [float(v) for v in eigsys.eigenvalues],
        "imputed_cells": int(surface.failed.sum()),
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    figures.mean_components(mean, out / "mean.png")
    figures.gnorm_heatmap(surface, out / "gnorm.png")
    figures.scree(eigsys, out / "scree.png")
    print(f"report for {dataset.n} subjects -> {out}")
    return 0


def _experiment_config(args, design, n, m) -> ExperimentConfig:
    return ExperimentConfig(
        design=design, n=n, m=m, reps=args.reps, seed=args.seed,
        snr=args.snr, policy=args.bw, h_mu=args.h_mu, h_cov=args.h_cov,
        grid_size=args.grid, folds=args.folds,
        record_timing=args.record_timing)


def _write_report_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for report in reports:
            for i, rep in enumerate(report.rep_ids):
                writer.writerow([
                    report.design, int(report.n), repr(float(report.m)),
                    int(rep), repr(float(report.rmuie[i])),
                    repr(float(report.rrmise[i])),
                    repr(float(report.h_mu[i])), repr(float(report.h_cov[i])),
                    repr(float(report.seconds[i])),
                ])


def _report_experiment(args) -> int:
    from . import figures
    out = _outdir(args.output)
    if args.full_table:
        cells = [(design, n, m) for design in DESIGNS
                 for n in FULL_TABLE_N for m in FULL_TABLE_M]
    else:
        _need(args, "geometry", "subjects", "rate")
        cells = [(_design_for(args.geometry), args.subjects, args.rate)]
    reports = []
    for design, n, m in cells:
        report = run_experiment(_experiment_config(args, design, n, m),
                                jobs=args.jobs)
        print(report.summary())
        reports.append(report)
    _write_report_csv(reports, out / "report.csv")
    summary = [{
        "design": r.design, "n": r.n, "m": r.m, "reps": r.reps,
        "policy": r.policy, "rmuie_mean": r.rmuie_mean,
        "rmuie_sd": r.rmuie_sd, "rrmise_mean": r.rrmise_mean,
        "rrmise_sd": r.rrmise_sd, "elapsed": r.elapsed,
        "failures": [[int(rep), msg] for rep, msg in r.failures],
    } for r in reports]
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if len(reports) == 1:
        figures.metrics_series(reports[0], out / "metrics.png")
    else:
        figures.rate_trend(summary, out / "trend.png")
    print(f"report table -> {out}")
    return 0


def cmd_report(args) -> int:
    _need(args, "output")
    if args.input is not None:
        return _report_dataset(args)
    return _report_experiment(args)


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _add_common(parser, *flags):
    parser.add_argument("--config", help="JSON file overriding flags")
    if "kernel" in flags:
        parser.add_argument("--kernel", default="epanechnikov",
                            help="kernel name (epanechnikov or gauss)")
    if "bw" in flags:
        parser.add_argument("--bw", choices=("fixed", "cv"), default="fixed",
                            help="bandwidth policy")
        parser.add_argument("--folds", type=int, default=5,
                            help="cross-validation folds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfda",
        description="Functional data analysis for manifold-valued curves")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic dataset")
    sim.add_argument("--geometry", help="geometry descriptor, e.g. sphere:2")
    sim.add_argument("-n", "--subjects", type=int, help="number of subjects")
    sim.add_argument("-m", "--rate", type=float,
                     help="mean observations per subject")
    sim.add_argument("--snr", type=float, default=5.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--weights", choices=("obs", "subject"), default="obs")
    sim.add_argument("--output", help="dataset file to write")
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    fm = sub.add_parser("fit-mean", help="fit the mean curve")
    fm.add_argument("--input", help="dataset file")
    fm.add_argument("--h-mu", type=float, help="mean bandwidth")
    fm.add_argument("--grid", type=int, default=51, help="grid size")
    fm.add_argument("--output", help="mean curve file to write")
    _add_common(fm, "kernel", "bw")
    fm.set_defaults(func=cmd_fit_mean)

    fc = sub.add_parser("fit-cov", help="fit the covariance surface")
    fc.add_argument("--input", help="dataset file")
    fc.add_argument("--mean", help="fitted mean curve file")
    fc.add_argument("--h-cov", type=float, help="covariance bandwidth")
    fc.add_argument("--grid", type=int, help="surface grid size "
                    "(default: the mean grid)")
    fc.add_argument("--output", help="surface file to write")
    _add_common(fc, "kernel", "bw")
    fc.set_defaults(func=cmd_fit_cov)

    fp = sub.add_parser("fpca", help="principal components and scores")
    fp.add_argument("--input", help="dataset file")
    fp.add_argument("--mean", help="fitted mean curve file")
    fp.add_argument("--cov", help="fitted surface file")
    fp.add_argument("--k", type=int, default=3, help="number of components")
    fp.add_argument("--output", help="output directory")
    _add_common(fp)
    fp.set_defaults(func=cmd_fpca)

    ev = sub.add_parser("evaluate",
                        help="score a surface against a simulation truth")
    ev.add_argument("--input", help="fitted surface file")
    ev.add_argument("--geometry", help="geometry descriptor of the design")
    ev.add_argument("--snr", type=float, default=5.0)
    ev.add_argument("--output", help="optional JSON metrics file")
    _add_common(ev)
    ev.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("report",
                        help="tables and figures for a dataset or experiment")
    rp.add_argument("--input", help="dataset file (dataset mode)")
    rp.add_argument("--geometry", help="design geometry (experiment mode)")
    rp.add_argument("-n", "--subjects", type=int)
    rp.add_argument("-m", "--rate", type=float)
    rp.add_argument("--reps", type=int, default=100)
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--snr", type=float, default=5.0)
    rp.add_argument("--h-mu", type=float)
    rp.add_argument("--h-cov", type=float)
    rp.add_argument("--grid", type=int, default=51)
    rp.add_argument("--k", type=int, default=3)
    rp.add_argument("--jobs", type=int, default=1)
    rp.add_argument("--record-timing", action="store_true")
    rp.add_argument("--full-table", action="store_true",
                    help="sweep every design, n and m of the error tables")
    rp.add_argument("--output", help="output directory")
    _add_common(rp, "kernel", "bw")
    rp.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
