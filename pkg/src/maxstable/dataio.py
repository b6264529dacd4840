"""File formats: station/maxima CSVs, model and simulation configs,
JSON fit reports and CSV grid emission.

All formats carry an explicit ``format_version`` (a header comment for
CSV grids, a field for JSON) so downstream consumers can detect
incompatible changes.  Reports are written with sorted keys and fixed
separators, making identical fits byte-identical up to the ``created``
timestamp.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .likelihood import DataError, DataSet, Design, ModelSpec, PairwiseProblem
from .smith import CovMatrix

FORMAT_VERSION = "1.0"

_MODEL_KEYS = {"loc", "scale", "shape", "margins", "sigma.init"}


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _parse_float(text, path, row, col):
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"{path}: non-numeric value {text!r} at row {row}, column {col!r}"
        ) from None


def load_dataset(stations_path, maxima_path) -> DataSet:
    """Read a stations CSV (`id,lon,lat,alt`) and a maxima CSV
    (`year,<id...>`, cell `NA` = missing) into a validated DataSet.

    Maxima column ids must match the station ids exactly (as a set);
    columns may appear in any order.
    """
    ids, coords, alt = [], [], []
    with open(stations_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "lon", "lat", "alt"]:
            raise DataError(f"{stations_path}: expected header 'id,lon,lat,alt', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{stations_path}: row {row_no} has {len(row)} fields, expected 4")
            sid = row[0].strip()
            if sid in ids:
                raise DataError(f"{stations_path}: duplicate station id {sid!r} at row {row_no}")
            ids.append(sid)
            coords.append([_parse_float(row[1], stations_path, row_no, "lon"),
                           _parse_float(row[2], stations_path, row_no, "lat")])
            alt.append(_parse_float(row[3], stations_path, row_no, "alt"))
    if not ids:
        raise DataError(f"{stations_path}: no stations")

    with open(maxima_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "year":
            raise DataError(f"{maxima_path}: first header column must be 'year', got {header}")
        col_ids = [h.strip() for h in header[1:]]
        unknown = [c for c in col_ids if c not in ids]
        if unknown:
            raise DataError(f"{maxima_path}: columns with no matching station: {unknown}")
        missing = [s for s in ids if s not in col_ids]
        if missing:
            raise DataError(f"{maxima_path}: stations with no maxima column: {missing}")
        if len(set(col_ids)) != len(col_ids):
            raise DataError(f"{maxima_path}: duplicate maxima columns")

        years, rows = [], []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(col_ids) + 1:
                raise DataError(
                    f"{maxima_path}: row {row_no} has {len(row)} fields, "
                    f"expected {len(col_ids) + 1}"
                )
            year = row[0].strip()
            if year in years:
                raise DataError(f"{maxima_path}: duplicate year {year!r} at row {row_no}")
            years.append(year)
            vals = []
            for col, cell in zip(col_ids, row[1:]):
                cell = cell.strip()
                vals.append(np.nan if cell == "NA"
                            else _parse_float(cell, maxima_path, row_no, col))
            rows.append(vals)
    if not rows:
        raise DataError(f"{maxima_path}: no data rows")

    order = [col_ids.index(s) for s in ids]
    maxima = np.asarray(rows, dtype=float)[:, order]
    try:
        year_arr = np.asarray([int(y) for y in years])
    except ValueError:
        year_arr = np.asarray(years)
    return DataSet(ids=ids, coords=np.asarray(coords), alt=np.asarray(alt),
                   years=year_arr, maxima=maxima)


def write_dataset(dataset: DataSet, stations_path, maxima_path):
    """Write a DataSet as the stations/maxima CSV pair read by load_dataset."""
    with open(stations_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "lon", "lat", "alt"])
        for sid, (lon, lat), a in zip(dataset.ids, dataset.coords, dataset.alt):
            writer.writerow([sid, repr(float(lon)), repr(float(lat)), repr(float(a))])
    with open(maxima_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year"] + list(dataset.ids))
        for year, row in zip(dataset.years, dataset.maxima):
            cells = ["NA" if not np.isfinite(v) else repr(float(v)) for v in row]
            writer.writerow([year] + cells)


# ---------------------------------------------------------------------------
# model / simulation configuration
# ---------------------------------------------------------------------------

def parse_model_config(path) -> ModelSpec:
    """Parse a plain-text model config into a ModelSpec.

    One assignment per line, '#' comments allowed::

        loc = 1 + lat + alt
        scale = 1 + lat + alt
        shape = 1
        sigma.init = 200, 0, 300   # optional
        margins = frechet          # optional: fix unit-Frechet margins
    """
    values = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {line_no}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _MODEL_KEYS:
                raise DataError(f"{path}: line {line_no}: unknown key {key!r} "
                                f"(expected one of {sorted(_MODEL_KEYS)})")
            if key in values:
                raise DataError(f"{path}: line {line_no}: duplicate key {key!r}")
            values[key] = val

    frechet = False
    if "margins" in values:
        if values["margins"] != "frechet":
            raise DataError(f"{path}: margins must be 'frechet', got {values['margins']!r}")
        frechet = True
    sigma_init = None
    if "sigma.init" in values:
        parts = [p.strip() for p in values["sigma.init"].split(",")]
        if len(parts) != 3:
            raise DataError(f"{path}: sigma.init needs 3 comma-separated values")
        sigma_init = tuple(_parse_float(p, path, "sigma.init", k)
                           for k, p in enumerate(parts))
    return ModelSpec(
        loc=values.get("loc", "1"),
        scale=values.get("scale", "1"),
        shape=values.get("shape", "1"),
        frechet_margins=frechet,
        sigma_init=sigma_init,
    )


def parse_sim_config(path):
    """Parse a JSON simulation/study config.

    Returns (SimConfig, ModelSpec): the model block (optional, same keys
    as the plain-text model config) is used by fitting-based commands.

    Required: ``sigma`` = [s11, s12, s22].  Optional: ``sites`` (list of
    [lon, lat]) or ``n_sites``, ``region`` = [x0, x1, y0, y1], ``margins``
    = {"loc": m, "scale": s, "shape": x}, ``alt``, ``n_blocks``,
    ``n_replicates``, ``seed``, ``model``.
    """
    from .gev import GevParams
    from .simulate import SimConfig

    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    if "sigma" not in cfg:
        raise DataError(f"{path}: missing required key 'sigma'")
    try:
        sigma = CovMatrix(*[float(v) for v in cfg["sigma"]])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad sigma block: {exc}") from None

    margins = None
    if cfg.get("margins") is not None:
        m = cfg["margins"]
        margins = GevParams(float(m["loc"]), float(m["scale"]), float(m["shape"]))
    sites = np.asarray(cfg["sites"], dtype=float) if cfg.get("sites") is not None else None
    alt = np.asarray(cfg["alt"], dtype=float) if cfg.get("alt") is not None else None
    try:
        sim = SimConfig(
            sigma=sigma,
            sites=sites,
            n_sites=cfg.get("n_sites"),
            region=tuple(cfg.get("region", (0.0, 40.0, 0.0, 40.0))),
            margins=margins,
            alt=alt,
            n_blocks=int(cfg.get("n_blocks", 100)),
            n_replicates=int(cfg.get("n_replicates", 1)),
            seed=int(cfg.get("seed", 0)),
        )
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None

    model_cfg = cfg.get("model", {})
    model = ModelSpec(
        loc=model_cfg.get("loc", "1"),
        scale=model_cfg.get("scale", "1"),
        shape=model_cfg.get("shape", "1"),
        frechet_margins=bool(model_cfg.get("frechet_margins", margins is None)),
        sigma_init=tuple(model_cfg["sigma_init"]) if model_cfg.get("sigma_init") else None,
    )
    return sim, model


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """A regular lon/lat grid with an optional constant altitude fill."""

    x0: float
    x1: float
    nx: int
    y0: float
    y1: float
    ny: int
    alt: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid resolution must be at least 2x2, got {self.nx}x{self.ny}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError("grid bounding box is empty")

    def points(self):
        """(nx*ny, 2) lon/lat points, row-major (lat outer, lon inner)."""
        xs = np.linspace(self.x0, self.x1, self.nx)
        ys = np.linspace(self.y0, self.y1, self.ny)
        lon, lat = np.meshgrid(xs, ys)
        return np.column_stack([lon.ravel(), lat.ravel()])


def parse_gridspec(text) -> GridSpec:
    """Parse 'x0:x1:nx,y0:y1:ny[,alt=V]' into a GridSpec."""
    parts = text.split(",")
    if len(parts) not in (2, 3):
        raise DataError(f"bad grid spec {text!r}: expected 'x0:x1:nx,y0:y1:ny[,alt=V]'")
    axes = []
    for part in parts[:2]:
        bits = part.split(":")
        if len(bits) != 3:
            raise DataError(f"bad grid axis {part!r}: expected 'lo:hi:n'")
        try:
            axes.append((float(bits[0]), float(bits[1]), int(bits[2])))
        except ValueError:
            raise DataError(f"bad grid axis {part!r}") from None
    alt = 0.0
    if len(parts) == 3:
        key, _, val = parts[2].partition("=")
        if key.strip() != "alt":
            raise DataError(f"bad grid option {parts[2]!r}: expected 'alt=V'")
        try:
            alt = float(val)
        except ValueError:
            raise DataError(f"bad grid altitude {val!r}") from None
    (x0, x1, nx), (y0, y1, ny) = axes
    try:
        return GridSpec(x0=x0, x1=x1, nx=nx, y0=y0, y1=y1, ny=ny, alt=alt)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def emit_grid(values, grid: GridSpec, path):
    """Write a grid-aligned value vector as a `lon,lat,value` CSV.

    Rows follow GridSpec.points() ordering (row-major, deterministic).
    """
    values = np.asarray(values, dtype=float).ravel()
    points = grid.points()
    if values.size != points.shape[0]:
        raise ValueError(f"expected {points.shape[0]} values, got {values.size}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["lon", "lat", "value"])
        for (lon, lat), val in zip(points, values):
            writer.writerow([repr(float(lon)), repr(float(lat)), repr(float(val))])


# ---------------------------------------------------------------------------
# fit reports
# ---------------------------------------------------------------------------

def _design_block(design: Design):
    return {
        "terms": list(design.terms),
        "centers": [float(v) for v in design.centers],
        "scales": [float(v) for v in design.scales],
    }


def _design_from_block(block):
    return Design(
        terms=list(block["terms"]),
        matrix=np.zeros((0, len(block["terms"]))),
        centers=np.asarray(block["centers"], dtype=float),
        scales=np.asarray(block["scales"], dtype=float),
    )


def build_report(result, model: ModelSpec, provenance=None) -> dict:
    """Assemble the JSON-ready fit report dict from a FitResult."""
    problem = result.problem
    report = {
        "format_version": FORMAT_VERSION,
        "created": datetime.now(timezone.utc).isoformat(),
        "model": {
            "loc": model.loc,
            "scale": model.scale,
            "shape": model.shape,
            "frechet_margins": model.frechet_margins,
            "sigma_init": list(model.sigma_init) if model.sigma_init else None,
        },
        "parameters": [
            {"name": n, "estimate": float(e), "se": float(s)}
            for n, e, s in zip(result.param_names, result.psi, result.se)
        ],
        "sigma": {"s11": float(result.psi[0]), "s12": float(result.psi[1]),
                  "s22": float(result.psi[2])},
        "nll": result.nll,
        "clic": result.clic,
        "converged": result.converged,
        "n_iter": result.n_iter,
        "grad_norm": result.grad_norm,
        "matrices": {
            "H": result.H.tolist(),
            "J": result.J.tolist(),
            "godambe": result.godambe.tolist(),
        },
        "designs": None,
        "provenance": provenance or {},
    }
    if problem is not None and not model.frechet_margins:
        report["designs"] = {
            "loc": _design_block(problem.design_mu),
            "scale": _design_block(problem.design_scale),
            "shape": _design_block(problem.design_xi),
        }
    return report


def write_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path) as fh:
        try:
            report = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    if "format_version" not in report:
        raise DataError(f"{path}: not a fit report (missing format_version)")
    return report


def model_from_report(report: dict) -> ModelSpec:
    m = report["model"]
    return ModelSpec(
        loc=m["loc"], scale=m["scale"], shape=m["shape"],
        frechet_margins=m["frechet_margins"],
        sigma_init=tuple(m["sigma_init"]) if m.get("sigma_init") else None,
    )


def result_from_report(report: dict, dataset: DataSet = None):
    """Rebuild a FitResult from a report (attaching the data if given).

    With a dataset the PairwiseProblem is reconstructed, enabling
    likelihood re-evaluation (composite likelihood ratio tests).
    """
    from .inference import FitResult

    model = model_from_report(report)
    problem = PairwiseProblem(dataset, model) if dataset is not None else None
    names = [p["name"] for p in report["parameters"]]
    if problem is not None and problem.param_names != names:
        raise DataError(
            f"report parameters {names} do not match the model/dataset "
            f"parameterization {problem.param_names}"
        )
    return FitResult(
        psi=np.array([p["estimate"] for p in report["parameters"]]),
        param_names=names,
        nll=float(report["nll"]),
        H=np.asarray(report["matrices"]["H"], dtype=float),
        J=np.asarray(report["matrices"]["J"], dtype=float),
        godambe=np.asarray(report["matrices"]["godambe"], dtype=float),
        se=np.array([p["se"] for p in report["parameters"]]),
        clic=float(report["clic"]),
        converged=bool(report["converged"]),
        n_iter=int(report["n_iter"]),
        grad_norm=float(report["grad_norm"]),
        problem=problem,
    )


def margins_from_report(report: dict, lon, lat, alt):
    """Per-location GEV parameters (mu, scale, xi) implied by a report.

    Uses the stored design standardization, so predictions at arbitrary
    locations reproduce the fitted site margins exactly.  Reports from
    fixed unit-Frechet fits carry no marginal model and are rejected.
    """
    if report.get("designs") is None:
        raise DataError("report has fixed unit-Frechet margins: no marginal model to predict from")
    psi = np.array([p["estimate"] for p in report["parameters"]])
    names = [p["name"] for p in report["parameters"]]
    out = []
    offset = 3
    for key in ("loc", "scale", "shape"):
        design = _design_from_block(report["designs"][key])
        beta = psi[offset:offset + len(design.terms)]
        expected = [f"{key}:{t}" for t in design.terms]
        if names[offset:offset + len(design.terms)] != expected:
            raise DataError(f"report parameter block mismatch: expected {expected}")
        vals = design.row(lon, lat, alt) @ beta
        out.append(np.exp(vals) if key == "scale" else vals)
        offset += len(design.terms)
    return tuple(out)
