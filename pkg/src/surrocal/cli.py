"""Command-line entry point: ``surrocal <subcommand> [options]``.

Exit status is 0 on success, 1 when a computation fails and 2 for usage,
input or schema errors.  ``SURROCAL_LOG`` (off, info, debug) sets the log
level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from surrocal import _backend
from surrocal.data import DATASETS, PARAM_NAMES
from surrocal.errors import SchemaError, SurrocalError

log = logging.getLogger("surrocal")

KERNELS = {"powexp": "power_exponential", "matern15": "matern_3_2"}
SIDE_CAR = "run_config.json"


class UsageError(Exception):
    pass


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def _write_sidecar(outdir, args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "output")}
    cfg["backend"] = _backend.BACKEND
    _dump(os.path.join(outdir, SIDE_CAR), cfg)
    return cfg


def _outdir(args):
    os.makedirs(args.output, exist_ok=True)
    return args.output


def _load_fits(archive, fits_dir, dense_fallback):
    from surrocal.archive import read_fit

    fits = {}
    for name in DATASETS:
        path = os.path.join(fits_dir, f"{name}.json")
        if name in archive.ensembles and os.path.exists(path):
            fits[name] = read_fit(path, archive, dense_fallback)
    if not fits:
        raise FileNotFoundError(f"no emulator fit files (<dataset>.json) in {fits_dir}")
    return fits


def _calib_config(args, archive):
    from surrocal.calibration import CalibrationConfig

    bounds = archive.manifest.get("bounds")
    return CalibrationConfig(bounds=None if bounds is None else tuple(map(tuple, bounds)),
                             top_k=args.top_k, max_evals=args.max_evals, seed=args.seed,
                             free_xi_exponents=args.free_xi_exponents)


def cmd_gen_synthetic(args):
    from surrocal.archive import write_world
    from surrocal.synthetic import WorldConfig, generate_world

    overrides = dict(args.world or {})
    overrides["seed"] = args.seed
    try:
        config = WorldConfig.from_dict(overrides)
    except TypeError as exc:
        raise SchemaError(f"world config: {exc}") from exc
    out = _outdir(args)
    write_world(out, generate_world(config))
    _write_sidecar(out, args)
    print(f"wrote synthetic archive to {out}")


def cmd_fit_emulator(args):
    from surrocal.archive import read_archive, write_fit
    from surrocal.emulator import EmulatorConfig, fit_emulator

    archive = read_archive(args.archive)
    cfg = EmulatorConfig(family=KERNELS[args.kernel], threshold_frac=args.threshold,
                         paper_literal=args.paper_literal, seed=args.seed,
                         dense_fallback=args.dense_fallback, max_evals=args.max_evals)
    out = _outdir(args)
    names = args.datasets or [n for n in DATASETS if n in archive.ensembles]
    for name in names:
        if name not in archive.ensembles:
            raise SchemaError(f"dataset {name!r} not in {args.archive}/manifest.json")
        fit = fit_emulator(archive.ensembles[name], cfg)
        write_fit(os.path.join(out, f"{name}.json"), fit, os.path.abspath(args.archive))
        print(f"{name}: loglik {fit.loglik:.6f}, sigma2 {fit.sigma2:.6g}, omega2 {fit.omega2:.6g}")
    _write_sidecar(out, args)


def cmd_calibrate(args):
    from surrocal.archive import read_archive
    from surrocal.calibration import maximize_likelihood

    archive = read_archive(args.archive)
    if archive.observations is None:
        raise SchemaError(f"{args.archive}/manifest.json: field 'observations' is missing")
    fits = _load_fits(archive, args.fits, args.dense_fallback)
    res = maximize_likelihood(archive.observations, fits, _calib_config(args, archive))
    out = _outdir(args)
    _dump(os.path.join(out, "calibration.json"), res.to_dict())
    _write_sidecar(out, args)
    print("theta_hat " + ", ".join(f"{k}={v:.6g}" for k, v in zip(PARAM_NAMES, res.theta_hat))
          + f"; loglik {res.loglik:.6f}")


def cmd_bootstrap(args):
    from surrocal.archive import read_archive
    from surrocal.calibration import CalibrationResult
    from surrocal.uncertainty import parametric_bootstrap, percentile_ci

    archive = read_archive(args.archive)
    fits = _load_fits(archive, args.fits, args.dense_fallback)
    calib = CalibrationResult.from_dict(_load_json(args.calibration))
    samples = parametric_bootstrap(archive.observations, fits, calib, B=args.B,
                                   master_seed=args.seed, workers=args.workers,
                                   config=_calib_config(args, archive), top_k=args.boot_top_k)
    out = _outdir(args)
    samples.to_csv(os.path.join(out, "bootstrap.csv"))
    summary = {"B_requested": args.B, "B": samples.B, "master_seed": args.seed,
               "failures": [list(f) for f in samples.failures], "intervals": {}}
    for j, name in enumerate(PARAM_NAMES):
        x = samples.theta[:, j]
        summary["intervals"][name] = {f"{lv:.2f}": list(percentile_ci(x, lv))
                                      for lv in (0.90, 0.95, 0.99)}
    _dump(os.path.join(out, "bootstrap.json"), summary)
    _write_sidecar(out, args)
    print(f"{samples.B} of {args.B} replicates succeeded")


def _read_bootstrap_csv(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = [c for c in PARAM_NAMES + ("status",) if rows and c not in rows[0]]
    if missing or not rows:
        raise SchemaError(f"{path}: missing columns {missing}" if rows else f"{path}: no rows")
    ok = [r for r in rows if r["status"] == "ok"]
    return np.array([[float(r[c]) for c in PARAM_NAMES] for r in ok])


def cmd_density(args):
    from surrocal.uncertainty import (HPD_COVERAGES, density_at_samples, hpd_region_level,
                                      kde_bivariate, kde_univariate, percentile_ci,
                                      silverman_bandwidth, write_density)

    theta = _read_bootstrap_csv(args.bootstrap)
    out = _outdir(args)
    n = args.grid
    for j, name in enumerate(PARAM_NAMES):
        x = theta[:, j]
        h = silverman_bandwidth(x)
        grid = np.linspace(x.min() - 4 * h, x.max() + 4 * h, n)
        dens = kde_univariate(x, grid, h)
        levels = {c: hpd_region_level(x, density_at_samples(x, h), c) for c in HPD_COVERAGES}
        write_density(os.path.join(out, f"density_{name}"), [grid], dens, levels, [h], [name],
                      {"ci": {f"{lv:.2f}": list(percentile_ci(x, lv)) for lv in (0.90, 0.95, 0.99)}})
    for a in range(3):
        for b in range(a + 1, 3):
            pair = theta[:, [a, b]]
            hs = [silverman_bandwidth(pair[:, k]) for k in range(2)]
            d_at = density_at_samples(pair, hs)
            axes = [np.linspace(pair[:, k].min() - 4 * hs[k], pair[:, k].max() + 4 * hs[k], n)
                    for k in range(2)]
            dens, _ = kde_bivariate(pair, axes[0], axes[1], hs)
            levels = {c: hpd_region_level(pair, d_at, c) for c in HPD_COVERAGES}
            names = [PARAM_NAMES[a], PARAM_NAMES[b]]
            write_density(os.path.join(out, f"density_{names[0]}_{names[1]}"), axes, dens,
                          levels, hs, names)
    _write_sidecar(out, args)
    print(f"wrote densities for {theta.shape[0]} replicates to {out}")


def cmd_sensitivity_demo(args):
    from surrocal.sensitivity import (FeedbackSpec, feedback_sensitivity_samples,
                                      write_sensitivity)

    spec = FeedbackSpec(args.dT0_mean, args.dT0_sd, args.phi_mean, args.phi_sd, args.cap)
    x, summary = feedback_sensitivity_samples(spec, args.n, args.seed)
    out = _outdir(args)
    write_sensitivity(os.path.join(out, "sensitivity"), x, summary, spec, args.seed)
    _write_sidecar(out, args)
    print(f"mean {summary.mean:.4f}, median {summary.median:.4f}, skewness {summary.skewness:.4f} "
          "(illustrative inputs)")


def cmd_verify(args):
    from surrocal.verify import run_checks

    checks = run_checks(args.archive, args.seed)
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    if args.output:
        out = _outdir(args)
        _dump(os.path.join(out, "verify.json"),
              [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks])
        _write_sidecar(out, args)
    if not all(c.passed for c in checks):
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--config", help="JSON file whose keys supply option defaults")
    shared.add_argument("-o", "--output", default=".")

    emu = argparse.ArgumentParser(add_help=False)
    emu.add_argument("--kernel", choices=sorted(KERNELS), default="powexp")
    emu.add_argument("--threshold", type=float, default=0.9)
    emu.add_argument("--paper-literal", action="store_true",
                     help="use the pooled replicate variance unscaled by 1/R")
    emu.add_argument("--dense-fallback", action="store_true")
    emu.add_argument("--max-evals", type=int, default=3000)

    cal = argparse.ArgumentParser(add_help=False)
    cal.add_argument("archive")
    cal.add_argument("--fits", required=True, help="directory of <dataset>.json fit files")
    cal.add_argument("--dense-fallback", action="store_true")
    cal.add_argument("--free-xi-exponents", action="store_true")
    cal.add_argument("--top-k", type=int, default=5)
    cal.add_argument("--max-evals", type=int, default=4000)

    p = argparse.ArgumentParser(prog="surrocal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-synthetic", parents=[shared], help="write a synthetic archive")
    s.add_argument("--world", type=json.loads, help="JSON object of world-config overrides")
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("fit-emulator", parents=[shared, emu], help="fit emulators")
    s.add_argument("archive")
    s.add_argument("--datasets", nargs="+", choices=DATASETS)
    s.set_defaults(func=cmd_fit_emulator)

    s = sub.add_parser("calibrate", parents=[shared, cal], help="maximize the likelihood")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("bootstrap", parents=[shared, cal], help="parametric bootstrap")
    s.add_argument("--calibration", required=True)
    s.add_argument("--B", type=int, default=300)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--boot-top-k", type=int, default=1)
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("density", parents=[shared], help="kernel densities of bootstrap output")
    s.add_argument("bootstrap", help="bootstrap.csv")
    s.add_argument("--grid", type=int, default=128)
    s.set_defaults(func=cmd_density)

    s = sub.add_parser("sensitivity-demo", parents=[shared], help="feedback skewness demo")
    s.add_argument("--n", type=int, default=10**6)
    s.add_argument("--dT0-mean", type=float, default=1.2)
    s.add_argument("--dT0-sd", type=float, default=0.1)
    s.add_argument("--phi-mean", type=float, default=0.5)
    s.add_argument("--phi-sd", type=float, default=0.1)
    s.add_argument("--cap", type=float, default=0.9)
    s.set_defaults(func=cmd_sensitivity_demo)

    s = sub.add_parser("verify", parents=[shared], help="run the oracle cross-checks")
    s.add_argument("archive", nargs="?")
    s.set_defaults(func=cmd_verify, output=None)
    return p


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = _load_json(args.config)
        if not isinstance(cfg, dict):
            raise SchemaError(f"{args.config}: expected a JSON object")
        known = set(vars(args))
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise SchemaError(f"{args.config}: unknown field(s) {unknown}")
        # config supplies defaults; flags given on the command line still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _setup_logging():
    level = os.environ.get("SURROCAL_LOG", "off").lower()
    levels = {"off": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (SchemaError, FileNotFoundError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        code = args.func(args)
    except (SchemaError, FileNotFoundError, UsageError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SurrocalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1
    return code or 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
