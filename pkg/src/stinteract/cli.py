"""Command-line interface.

Every subcommand writes a JSON report into ``--out`` that embeds a run
manifest (all resolved parameters plus SHA-256 digests of the inputs).  The
report is a deterministic function of the manifest; wall time, thread count
and timestamps go to a separate ``runtime.json``.

Exit codes: 0 success, 1 runtime failure, 2 input validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .classical import k_surface, knox_statistic, mantel_statistic, omnibus_statistic
from .data import (
    UNIT_SCALE,
    CovariateGrid,
    IngestionError,
    PointPattern,
    build_grid,
    filter_by_mark,
    load_events,
)
from .geometry import GeometryError, Window, read_ascii_grid, read_geojson_window
from .model import (
    ConvergenceError,
    ModelSpec,
    RankDeficientError,
    fit_endemic,
    fit_full,
    spatial_residuals,
    temporal_residuals,
)
from .permute import PermutationAbort, PermutationPlan, run_test
from .rng import stream
from .simulate import SimulationConfig, simulate

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


class UsageError(ValueError):
    """Invalid combination of command-line options."""


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive of stop) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range {text!r} must be start:stop:step")
        a, b, s = (float(p) for p in parts)
        if not s > 0 or b < a:
            raise UsageError(f"range {text!r} needs step > 0 and stop >= start")
        m = int(math.floor((b - a) / s + 1e-9)) + 1
        return [round(a + k * s, 12) for k in range(m)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None


def _names(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [v.strip() for v in text.split(",") if v.strip()]


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def _digest(path: str | Path | None) -> str | None:
    if path is None:
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _common(p: argparse.ArgumentParser, events: bool = True, grid: bool = False) -> None:
    if events:
        p.add_argument("--events", required=True, help="events CSV with header id,x,y,t[,mark]")
        p.add_argument("--mark", help="analyse only events with this mark")
        p.add_argument(
            "--within-day",
            choices=("auto", "none", "offset", "jitter"),
            default="auto",
            help="day-resolution times: add 0.5 day (offset), a uniform draw (jitter), or nothing; "
            "auto offsets only when all times are whole numbers (default)",
        )
        p.add_argument("--drop-invalid", action="store_true", help="drop events outside W x (0,T] instead of failing")
    p.add_argument("--window", required=True, help="window as GeoJSON polygon(s) or ESRI ASCII grid (.asc)")
    p.add_argument("--raster", help="optional ESRI ASCII grid of the same window (dual representation)")
    p.add_argument("--t-max", type=float, help="study period length T in days (default: end of last grid period)")
    p.add_argument("--units", choices=sorted(UNIT_SCALE), default="km", help="unit of all input coordinates")
    if grid:
        p.add_argument("--grid-cells", required=True, help="cells CSV: cell_id,area_km2,population,<covariates>")
        p.add_argument("--grid-periods", required=True, help="periods CSV: period_id,start_day,end_day,<covariates>")
        p.add_argument("--cell-geometry", help="GeoJSON of the cells keyed by property cell_id")
        p.add_argument("--covariates", help="comma-separated endemic covariate columns (default: all)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stinteract", description="Space-time interaction tests for point patterns.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("knox", help="Knox test")
    _common(p)
    p.add_argument("--delta-km", type=float, required=True)
    p.add_argument("--tau-days", type=float, required=True)
    p.add_argument("--B", type=int, default=999)

    p = sub.add_parser("mantel", help="Mantel test (Pearson correlation of pair distances)")
    _common(p)
    p.add_argument("--B", type=int, default=999)

    p = sub.add_parser("kfun", help="space-time K-function, D surface and omnibus test")
    _common(p)
    p.add_argument("--deltas", required=True, help="spatial grid in km, start:stop:step or list")
    p.add_argument("--taus", required=True, help="temporal grid in days, start:stop:step or list")
    p.add_argument("--B", type=int, default=999, help="permutations for the omnibus test (0: surface only)")
    p.add_argument("--edge-method", choices=("auto", "polygon", "raster"), default="auto")

    p = sub.add_parser("fit", help="fit the endemic(-epidemic) model")
    _common(p, grid=True)
    p.add_argument("--delta-km", type=float)
    p.add_argument("--tau-days", type=float)
    p.add_argument("--epidemic", choices=("on", "off"), default="on")
    p.add_argument("--pixel-residuals", type=float, metavar="SIZE", help="pixel size in km for Pearson residuals")
    p.add_argument("--temporal-residuals", action="store_true")

    p = sub.add_parser("epitest", help="model-based permutation test of the epidemic component")
    _common(p, grid=True)
    p.add_argument("--delta-km", type=float, required=True)
    p.add_argument("--tau-days", type=float, required=True)
    p.add_argument("--B", type=int, default=199)
    p.add_argument("--statistic", choices=("tr", "lrd"), default="tr")

    p = sub.add_parser("simulate", help="simulate the endemic-epidemic branching process")
    _common(p, events=False, grid=True)
    p.add_argument("--beta", required=True, help="comma-separated coefficients: intercept then covariates")
    p.add_argument("--gamma0", type=float, default=0.0)
    p.add_argument("--delta-km", type=float, default=0.0)
    p.add_argument("--tau-days", type=float, default=0.0)
    p.add_argument("--max-generations", type=int, default=1000)
    return parser


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------


def _manifest(args: argparse.Namespace) -> dict:
    skip = {"threads", "out", "func"}
    params = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    inputs = {}
    for key in ("events", "window", "raster", "grid_cells", "grid_periods", "cell_geometry"):
        path = getattr(args, key, None)
        if path:
            inputs[key] = {"path": str(path), "sha256": _digest(path)}
    return {"tool": "stinteract", "version": __version__, "subcommand": args.command, "parameters": params, "inputs": inputs}


def _t_max(args) -> float:
    if args.t_max is not None:
        return args.t_max
    periods = getattr(args, "grid_periods", None)
    if periods:
        from .data import read_periods_csv

        ends = read_periods_csv(periods)["end_day"]
        if ends:
            return float(max(ends))
    raise UsageError("--t-max is required when no --grid-periods file is given")


def load_window(args) -> Window:
    scale = UNIT_SCALE[args.units]
    t_max = _t_max(args)
    raster = read_ascii_grid(args.raster, scale) if args.raster else None
    path = str(args.window)
    if path.lower().endswith(".asc"):
        if raster is not None:
            raise UsageError("--raster cannot be combined with a raster --window")
        return Window(None, t_max, read_ascii_grid(path, scale))
    return read_geojson_window(path, t_max, scale, raster)


def load_pattern(args, window: Window) -> PointPattern:
    mode = None if args.within_day == "none" else args.within_day
    rng = stream(args.seed, "jitter") if mode == "jitter" else None
    pattern = load_events(args.events, window, units=args.units, within_day=mode, rng=rng, strict=not args.drop_invalid)
    if args.mark is not None:
        pattern = filter_by_mark(pattern, args.mark)
    return pattern


def load_grid(args, window: Window) -> CovariateGrid:
    return build_grid(args.grid_cells, args.grid_periods, window, args.cell_geometry, units=args.units)


def _spec(args, grid: CovariateGrid, epidemic: bool) -> ModelSpec:
    cols = _names(args.covariates)
    if cols is None:
        cols = list(grid.columns)
    if epidemic and (args.delta_km is None or args.tau_days is None):
        raise UsageError("--delta-km and --tau-days are required for the epidemic component")
    return ModelSpec(args.delta_km or 0.0, args.tau_days or 0.0, tuple(cols), epidemic)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("Infinity" if v > 0 else "-Infinity")
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _pattern_info(pattern: PointPattern) -> dict:
    return {
        "n": pattern.n,
        "rejected": [str(r) for r in pattern.rejected],
        "window_area_km2": pattern.window.area,
        "t_max_days": pattern.window.t_max,
        "window_representation": pattern.window.representation,
    }


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_knox(args, out: Path) -> dict:
    window = load_window(args)
    pattern = load_pattern(args, window)
    result = {"data": _pattern_info(pattern)}
    if args.B > 0:
        report = run_test(
            PermutationPlan(args.B, args.seed, "knox", args.threads), pattern, delta=args.delta_km, tau=args.tau_days
        )
        report.write_replicates_csv(out / "knox_replicates.csv")
        result["test"] = report.to_dict()
    else:
        result["test"] = {"knox": knox_statistic(pattern, args.delta_km, args.tau_days).to_dict()}
    return result


def cmd_mantel(args, out: Path) -> dict:
    window = load_window(args)
    pattern = load_pattern(args, window)
    result = {"data": _pattern_info(pattern)}
    if args.B > 0:
        report = run_test(PermutationPlan(args.B, args.seed, "mantel", args.threads), pattern)
        report.write_replicates_csv(out / "mantel_replicates.csv")
        result["test"] = report.to_dict()
    else:
        result["test"] = {"mantel_r": mantel_statistic(pattern)}
    return result


def cmd_kfun(args, out: Path) -> dict:
    window = load_window(args)
    pattern = load_pattern(args, window)
    deltas, taus = parse_grid(args.deltas), parse_grid(args.taus)
    surface = k_surface(pattern, deltas, taus, method=args.edge_method)
    surface.write_csv(out / "kfun_surface.csv")
    result = {"data": _pattern_info(pattern), "surface": surface.to_dict(), "omnibus": omnibus_statistic(surface)}
    if args.B > 0:
        report = run_test(
            PermutationPlan(args.B, args.seed, "omnibus-k", args.threads), pattern, deltas=deltas, taus=taus
        )
        report.write_replicates_csv(out / "kfun_replicates.csv")
        test = report.to_dict()
        test.pop("surface", None)
        result["test"] = test
    return result


def cmd_fit(args, out: Path) -> dict:
    window = load_window(args)
    pattern = load_pattern(args, window)
    grid = load_grid(args, window)
    epidemic = args.epidemic == "on"
    spec = _spec(args, grid, epidemic)
    endemic = fit_endemic(spec, grid, pattern)
    fit = fit_full(spec, grid, pattern, endemic=endemic) if epidemic else endemic
    result = {"data": _pattern_info(pattern), "fit": fit.to_dict()}
    if epidemic:
        result["endemic_fit"] = endemic.to_dict()
    if args.pixel_residuals is not None:
        res = spatial_residuals(fit, spec, grid, pattern, args.pixel_residuals)
        res.write_csv(out / "pixel_residuals.csv")
        result["pixel_residuals"] = res.summary()
    if args.temporal_residuals:
        tres = temporal_residuals(fit, spec, grid, pattern)
        tres.write_csv(out / "temporal_residuals.csv")
        result["temporal_residuals"] = tres.summary()
    return result


def cmd_epitest(args, out: Path) -> dict:
    window = load_window(args)
    pattern = load_pattern(args, window)
    grid = load_grid(args, window)
    spec = _spec(args, grid, True)
    kind = "model-tr" if args.statistic == "tr" else "model-d"
    report = run_test(PermutationPlan(args.B, args.seed, kind, args.threads), pattern, grid=grid, spec=spec)
    report.write_replicates_csv(out / "epitest_replicates.csv")
    return {"data": _pattern_info(pattern), "test": report.to_dict()}


def cmd_simulate(args, out: Path) -> dict:
    window = load_window(args)
    grid = load_grid(args, window)
    cols = _names(args.covariates)
    if cols is None:
        cols = list(grid.columns)
    config = SimulationConfig(
        grid,
        _floats(args.beta),
        args.gamma0,
        args.delta_km,
        args.tau_days,
        args.seed,
        tuple(cols),
        args.max_generations,
    )
    if not config.subcritical:
        raise UsageError(
            f"refusing a supercritical configuration: expected offspring per event "
            f"gamma0*pi*delta^2*tau = {config.offspring_mean:.6g} >= 1"
        )
    sim = simulate(config, threads=args.threads)
    sim.write(out / "events.csv", out / "provenance.csv")
    return {
        "config": config.to_dict(),
        "n": sim.n,
        "immigrants": int(np.count_nonzero(sim.parent < 0)),
        "max_generation": int(sim.generation.max()) if sim.n else 0,
        "truncated_offspring": sim.truncated,
        "files": ["events.csv", "provenance.csv"],
    }


COMMANDS = {
    "knox": cmd_knox,
    "mantel": cmd_mantel,
    "kfun": cmd_kfun,
    "fit": cmd_fit,
    "epitest": cmd_epitest,
    "simulate": cmd_simulate,
}

REPORT_NAMES = {"simulate": "simulate_manifest.json"}

_VALIDATION_ERRORS = (
    IngestionError,
    GeometryError,
    UsageError,
    RankDeficientError,
    LookupError,
    FileNotFoundError,
    ValueError,
)
_RUNTIME_ERRORS = (ConvergenceError, PermutationAbort)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = COMMANDS[args.command](args, out)
        messages = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
        for m in messages:
            print(f"warning: {m}", file=sys.stderr)
        report = {"manifest": _manifest(args), "result": result, "warnings": messages}
        write_json(out / REPORT_NAMES.get(args.command, f"{args.command}_report.json"), report)
        write_json(
            out / "runtime.json",
            {
                "subcommand": args.command,
                "started_utc": started.isoformat(),
                "wall_time_s": time.perf_counter() - clock,
                "threads": args.threads,
            },
        )
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort classification
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
