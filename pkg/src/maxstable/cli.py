"""Command-line surface.

Subcommands: fit, simulate, extcoef, test, predict, study.  Exit codes:
0 success, 1 usage error, 2 data error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    FORMAT_VERSION,
    _sha256,
    build_report,
    emit_grid,
    load_dataset,
    margins_from_report,
    model_from_report,
    parse_gridspec,
    parse_model_config,
    parse_sim_config,
    read_report,
    result_from_report,
    write_dataset,
    write_report,
)
from .gev import GevParams, frechet_transform, gev_return_level
from .inference import FitOptions, NonConvergence, clrt, fit
from .likelihood import DataError
from .simulate import naive_theta, replication_study, simulate_panel
from .smith import (
    CovMatrix,
    conditional_return_level,
    extremal_coefficient,
    mahalanobis_a,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NONCONVERGENCE = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit(2) on bad usage."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _parse_fix(items):
    fixed = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise _UsageError(f"--fix expects name=value, got {item!r}")
        try:
            fixed[name.strip()] = float(value)
        except ValueError:
            raise _UsageError(f"--fix value must be numeric: {item!r}") from None
    return fixed or None


def _build_parser():
    parser = _Parser(prog="maxstable",
                     description="Smith max-stable process fitting and prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="maximum pairwise composite likelihood fit")
    p_fit.add_argument("--stations", required=True)
    p_fit.add_argument("--maxima", required=True)
    p_fit.add_argument("--model", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--se", choices=("godambe", "hessian"), default="godambe")
    p_fit.add_argument("--grad", choices=("analytic", "fd"), default="analytic")
    p_fit.add_argument("--fix", action="append", metavar="NAME=VALUE",
                       help="freeze a parameter (repeatable); used for nested null fits")

    p_sim = sub.add_parser("simulate", help="simulate block-maxima panels")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out-prefix", required=True)
    p_sim.add_argument("--reps", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)

    p_ext = sub.add_parser("extcoef", help="extremal coefficients from a fit")
    p_ext.add_argument("--fit", required=True)
    p_ext.add_argument("--pairs", help="CSV of separations with header dx,dy")
    p_ext.add_argument("--grid", help="grid spec x0:x1:nx,y0:y1:ny of separations h")
    p_ext.add_argument("--stations")
    p_ext.add_argument("--maxima")
    p_ext.add_argument("--out", required=True)

    p_test = sub.add_parser("test", help="composite likelihood ratio test")
    p_test.add_argument("--fit-full", required=True)
    p_test.add_argument("--fit-null", required=True)
    p_test.add_argument("--restrict", required=True,
                        help="comma-separated restricted parameter names")
    p_test.add_argument("--stations", required=True)
    p_test.add_argument("--maxima", required=True)
    p_test.add_argument("--out", required=True)

    p_pred = sub.add_parser("predict", help="return-level grids")
    p_pred.add_argument("--fit", required=True)
    p_pred.add_argument("--grid", required=True)
    p_pred.add_argument("--T", type=float, required=True)
    p_pred.add_argument("--condition-site")
    p_pred.add_argument("--condition-value", type=float)
    p_pred.add_argument("--stations")
    p_pred.add_argument("--out", required=True)

    p_study = sub.add_parser("study", help="simulate-and-fit replication study")
    p_study.add_argument("--config", required=True)
    p_study.add_argument("--out-dir", required=True)
    p_study.add_argument("--jobs", type=int, default=1)
    return parser


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_fit(args):
    dataset = load_dataset(args.stations, args.maxima)
    model = parse_model_config(args.model)
    options = FitOptions(grad=args.grad, se=args.se, fixed=_parse_fix(args.fix))
    result = fit(dataset, model, options)
    provenance = {
        "stations_sha256": _sha256(args.stations),
        "maxima_sha256": _sha256(args.maxima),
        "model_sha256": _sha256(args.model),
        "package_version": __version__,
        "seed": None,
    }
    write_report(build_report(result, model, provenance), args.out)
    if not result.converged:
        print(f"fit did not converge (gradient norm {result.grad_norm:.3g}); "
              f"report written to {args.out}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    print(f"converged: nll={result.nll:.4f} clic={result.clic:.4f} -> {args.out}")
    return EXIT_OK


def _cmd_simulate(args):
    config, _ = parse_sim_config(args.config)
    if args.reps is not None:
        config.n_replicates = args.reps
    if args.seed is not None:
        config.seed = args.seed
    for rep in range(config.n_replicates):
        panel = simulate_panel(config, replicate=rep)
        stations = f"{args.out_prefix}_rep{rep}_stations.csv"
        maxima = f"{args.out_prefix}_rep{rep}_maxima.csv"
        write_dataset(panel, stations, maxima)
        print(f"replicate {rep}: {stations} {maxima}")
    return EXIT_OK


def _read_pairs(path):
    seps = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["dx", "dy"]:
            raise DataError(f"{path}: expected header 'dx,dy', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected 2")
            try:
                seps.append([float(row[0]), float(row[1])])
            except ValueError:
                raise DataError(f"{path}: non-numeric separation at row {row_no}") from None
    if not seps:
        raise DataError(f"{path}: no separations")
    return np.asarray(seps)


def _cmd_extcoef(args):
    report = read_report(args.fit)
    sigma = CovMatrix(report["sigma"]["s11"], report["sigma"]["s12"],
                      report["sigma"]["s22"])
    modes = sum(x is not None for x in (args.pairs, args.grid, args.stations))
    if modes != 1:
        raise _UsageError("extcoef needs exactly one of --pairs, --grid, or "
                          "--stations/--maxima")

    if args.grid is not None:
        grid = parse_gridspec(args.grid)
        theta = extremal_coefficient(mahalanobis_a(grid.points(), sigma))
        emit_grid(theta, grid, args.out)
    elif args.pairs is not None:
        h = _read_pairs(args.pairs)
        theta = extremal_coefficient(mahalanobis_a(h, sigma))
        with open(args.out, "w", newline="") as fh:
            fh.write(f"# format_version: {FORMAT_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(["dx", "dy", "theta"])
            for (dx, dy), t in zip(h, theta):
                writer.writerow([repr(float(dx)), repr(float(dy)), repr(float(t))])
    else:
        if args.maxima is None:
            raise _UsageError("--stations requires --maxima")
        dataset = load_dataset(args.stations, args.maxima)
        if report.get("designs") is not None:
            mu, scale, xi = margins_from_report(
                report, dataset.coords[:, 0], dataset.coords[:, 1], dataset.alt)
            z, _ = frechet_transform(dataset.maxima, mu, scale, xi)
        else:
            z = dataset.maxima
        pi, pj = np.triu_indices(dataset.n_sites, 1)
        h = dataset.coords[pj] - dataset.coords[pi]
        theta = extremal_coefficient(mahalanobis_a(h, sigma))
        with open(args.out, "w", newline="") as fh:
            fh.write(f"# format_version: {FORMAT_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(["id_i", "id_j", "dx", "dy", "theta_model", "theta_naive"])
            for p, (i, j) in enumerate(zip(pi, pj)):
                try:
                    tn = repr(naive_theta(z[:, i], z[:, j]))
                except ValueError:
                    tn = "NA"
                writer.writerow([dataset.ids[i], dataset.ids[j],
                                 repr(float(h[p, 0])), repr(float(h[p, 1])),
                                 repr(float(theta[p])), tn])
    print(f"extremal coefficients -> {args.out}")
    return EXIT_OK


def _cmd_test(args):
    dataset = load_dataset(args.stations, args.maxima)
    fit_full = result_from_report(read_report(args.fit_full), dataset)
    fit_null = result_from_report(read_report(args.fit_null), dataset)
    restricted = [n.strip() for n in args.restrict.split(",") if n.strip()]
    if not restricted:
        raise _UsageError("--restrict must name at least one parameter")
    res = clrt(fit_full, fit_null, restricted)
    out = {
        "format_version": FORMAT_VERSION,
        "W": res.W,
        "eigenvalues": res.eigenvalues.tolist(),
        "p_rotnitzky_jewell": res.p_rj,
        "p_chandler_bate_chol": res.p_cb_chol,
        "p_chandler_bate_svd": res.p_cb_svd,
        "restricted": res.restricted,
    }
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"W={res.W:.4f} p_RJ={res.p_rj:.4g} p_CB(chol)={res.p_cb_chol:.4g} "
          f"p_CB(svd)={res.p_cb_svd:.4g} -> {args.out}")
    return EXIT_OK


def _cmd_predict(args):
    report = read_report(args.fit)
    grid = parse_gridspec(args.grid)
    points = grid.points()
    alt = np.full(points.shape[0], grid.alt)
    mu, scale, xi = margins_from_report(report, points[:, 0], points[:, 1], alt)

    conditioning = args.condition_site is not None or args.condition_value is not None
    if not conditioning:
        values = np.array([
            gev_return_level(GevParams(m, s, x), args.T)
            for m, s, x in zip(mu, scale, xi)
        ])
    else:
        if args.condition_site is None or args.condition_value is None:
            raise _UsageError("conditional prediction needs both --condition-site "
                              "and --condition-value")
        if args.stations is None:
            raise _UsageError("conditional prediction needs --stations for the "
                              "conditioning site's coordinates")
        site = _find_station(args.stations, args.condition_site)
        mu_i, scale_i, xi_i = margins_from_report(report, site[0], site[1], site[2])
        p_i = GevParams(float(mu_i), float(scale_i), float(xi_i))
        from .gev import to_frechet

        z_i = to_frechet(args.condition_value, p_i)
        sigma = CovMatrix(report["sigma"]["s11"], report["sigma"]["s12"],
                          report["sigma"]["s22"])
        h = points - site[:2]
        a = mahalanobis_a(h, sigma)
        values = np.array([
            conditional_return_level(z_i, args.T, float(ak), GevParams(m, s, x))
            for ak, m, s, x in zip(a, mu, scale, xi)
        ])
    emit_grid(values, grid, args.out)
    print(f"{args.T:g}-block return levels -> {args.out}")
    return EXIT_OK


def _find_station(stations_path, station_id):
    with open(stations_path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if row and row[0].strip() == station_id:
                return np.array([float(row[1]), float(row[2]), float(row[3])])
    raise DataError(f"{stations_path}: no station with id {station_id!r}")


def _cmd_study(args):
    config, model = parse_sim_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = replication_study(config, model, jobs=args.jobs)

    table = result.summary_table()
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        table.to_csv(fh, index=False)
    with open(out_dir / "estimates.csv", "w", newline="") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(result.param_names)
        writer.writerows(result.estimates.tolist())
    meta = {
        "format_version": FORMAT_VERSION,
        "n_replicates": config.n_replicates,
        "n_failed": result.n_failed,
        "nmse_composite": result.nmse_composite,
        "nmse_naive": result.nmse_naive,
    }
    with open(out_dir / "study.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(table.to_string(index=False))
    print(f"study outputs -> {out_dir}")
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "extcoef": _cmd_extcoef,
    "test": _cmd_test,
    "predict": _cmd_predict,
    "study": _cmd_study,
}


def run_cli(argv=None):
    """Parse arguments and dispatch; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
