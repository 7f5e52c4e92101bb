"""Event and covariate ingestion.

Events live in a :class:`PointPattern` (arrays sorted by time).  The endemic
covariates live on a :class:`CovariateGrid` of spatial cells × time periods;
its locator maps any ``(s, t)`` in ``W × (0, T]`` to one (cell, period).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .geometry import Region, Window, read_geojson_regions

__all__ = [
    "IngestionError",
    "IngestionWarning",
    "Rejection",
    "Event",
    "PointPattern",
    "CovariateGrid",
    "load_events",
    "write_events",
    "filter_by_mark",
    "build_grid",
    "read_cells_csv",
    "read_periods_csv",
]

UNIT_SCALE = {"km": 1.0, "m": 1e-3}


class IngestionError(ValueError):
    """Input files could not be turned into valid data.

    ``problems`` lists one human-readable message per offending row or column.
    """

    def __init__(self, message: str, problems: Sequence[str] = ()):
        self.problems = list(problems)
        detail = "".join(f"\n  - {p}" for p in self.problems[:50])
        if len(self.problems) > 50:
            detail += f"\n  ... and {len(self.problems) - 50} more"
        super().__init__(message + detail)


class IngestionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Rejection:
    row: int  # 1-based data row (header excluded)
    id: str
    reason: str

    def __str__(self) -> str:
        return f"row {self.row} (id={self.id!r}): {self.reason}"


@dataclass(frozen=True)
class Event:
    id: str
    x: float
    y: float
    t: float
    mark: str | None = None

    @property
    def s(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Events observed in ``window``, stored column-wise and sorted by time.

    Attributes
    ----------
    ids : (n,) object array of str
    xy : (n, 2) float array, km
    t : (n,) float array, days in (0, t_max]
    marks : (n,) object array (None entries for unmarked events) or None
    window : Window
    rejected : rows dropped at ingestion, if the pattern was read from a file
    """

    ids: np.ndarray
    xy: np.ndarray
    t: np.ndarray
    marks: np.ndarray | None
    window: Window
    rejected: tuple[Rejection, ...] = field(default=())

    def __post_init__(self):
        n = len(self.t)
        if self.xy.shape != (n, 2) or len(self.ids) != n:
            raise ValueError("ids, xy and t must describe the same number of events")
        if self.marks is not None and len(self.marks) != n:
            raise ValueError("marks must have one entry per event")
        if n > 1 and np.any(np.diff(self.t) < 0):
            raise ValueError("events must be sorted by time (use PointPattern.from_arrays)")
        for arr in (self.ids, self.xy, self.t, self.marks):
            if arr is not None:
                arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, xy, t, window: Window, ids=None, marks=None) -> "PointPattern":
        """Build a pattern from unsorted arrays; sorting by time is stable."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        t = np.asarray(t, dtype=float).ravel()
        n = len(t)
        ids = np.array([f"e{k + 1}" for k in range(n)] if ids is None else [str(i) for i in ids], dtype=object)
        if marks is not None:
            marks = np.array(list(marks), dtype=object)
        order = np.argsort(t, kind="stable")
        return cls(
            ids[order],
            xy[order].copy(),
            t[order].copy(),
            None if marks is None else marks[order],
            window,
        )

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def events(self) -> list[Event]:
        marks = self.marks if self.marks is not None else [None] * self.n
        return [
            Event(str(i), float(p[0]), float(p[1]), float(t), None if m is None else str(m))
            for i, p, t, m in zip(self.ids, self.xy, self.t, marks)
        ]

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return self.n

    def with_times(self, t) -> "PointPattern":
        """Same locations (and their ids/marks) with new times, re-sorted."""
        return PointPattern.from_arrays(self.xy, t, self.window, self.ids, self.marks)

    def subset(self, keep: np.ndarray) -> "PointPattern":
        keep = np.asarray(keep)
        return PointPattern(
            self.ids[keep].copy(),
            self.xy[keep].copy(),
            self.t[keep].copy(),
            None if self.marks is None else self.marks[keep].copy(),
            self.window,
        )


def _parse_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    return v


def load_events(
    path: str | Path,
    window: Window,
    units: str = "km",
    within_day: str | None = None,
    rng: np.random.Generator | None = None,
    strict: bool = False,
) -> PointPattern:
    """Read an events CSV with header ``id,x,y,t[,mark]``.

    Parameters
    ----------
    units : "km" or "m"
        Unit of the x, y columns; metres are converted to km.
    within_day : None, "auto", "offset" or "jitter"
        For day-resolution times: add 0.5 day ("offset") or a uniform draw
        from [0, 1) ("jitter", needs ``rng``) before validation.  "auto"
        applies the offset only when every time is a whole number.
    strict : bool
        Raise :class:`IngestionError` for rows outside the window or period
        instead of dropping them with an :class:`IngestionWarning`.

    Missing columns, unparsable numbers and duplicate ids always raise.
    """
    if units not in UNIT_SCALE:
        raise ValueError(f"units must be one of {sorted(UNIT_SCALE)}, got {units!r}")
    if within_day not in (None, "auto", "offset", "jitter"):
        raise ValueError(f"within_day must be None, 'auto', 'offset' or 'jitter', got {within_day!r}")
    if within_day == "jitter" and rng is None:
        raise ValueError("within_day='jitter' needs an rng")
    scale = UNIT_SCALE[units]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in ("id", "x", "y", "t") if c not in header]
        if missing:
            raise IngestionError(
                f"{path}: missing required column(s) {', '.join(repr(c) for c in missing)}",
                [f"missing column {c!r}" for c in missing],
            )
        reader.fieldnames = header
        rows = list(reader)
    has_mark = "mark" in header

    problems: list[str] = []
    seen: set[str] = set()
    ids, xs, ys, ts, marks, rownum = [], [], [], [], [], []
    for k, row in enumerate(rows, start=1):
        rid = (row.get("id") or "").strip()
        try:
            x = _parse_float(row["x"]) * scale
            y = _parse_float(row["y"]) * scale
            t = _parse_float(row["t"])
        except (TypeError, ValueError) as exc:
            problems.append(f"row {k} (id={rid!r}): unparsable coordinate or time ({exc})")
            continue
        if not rid:
            problems.append(f"row {k}: empty id")
            continue
        if rid in seen:
            problems.append(f"row {k} (id={rid!r}): duplicate id")
            continue
        seen.add(rid)
        ids.append(rid)
        xs.append(x)
        ys.append(y)
        ts.append(t)
        marks.append(((row.get("mark") or "").strip() or None) if has_mark else None)
        rownum.append(k)
    if problems:
        raise IngestionError(f"{path}: {len(problems)} invalid row(s)", problems)

    t = np.array(ts, dtype=float)
    if within_day == "auto":
        within_day = "offset" if len(t) and np.all(t == np.round(t)) else None
    if within_day == "offset":
        t = t + 0.5
    elif within_day == "jitter":
        t = t + rng.random(len(t))
    xy = np.column_stack([xs, ys]) if xs else np.empty((0, 2))

    rejected: list[Rejection] = []
    in_period = (t > 0) & (t <= window.t_max)
    inside = window.contains(xy) if len(xy) else np.zeros(0, bool)
    for k in np.nonzero(~in_period | ~inside)[0]:
        reason = (
            f"time {t[k]!r} outside (0, {window.t_max!r}]"
            if not in_period[k]
            else f"location ({xy[k, 0]!r}, {xy[k, 1]!r}) outside the window"
        )
        rejected.append(Rejection(rownum[k], ids[k], reason))
    if rejected:
        if strict:
            raise IngestionError(f"{path}: {len(rejected)} event(s) outside W x (0, T]", [str(r) for r in rejected])
        warnings.warn(
            f"{path}: dropped {len(rejected)} event(s) outside W x (0, T]: "
            + "; ".join(str(r) for r in rejected[:5]),
            IngestionWarning,
            stacklevel=2,
        )
    keep = in_period & inside
    pattern = PointPattern.from_arrays(
        xy[keep],
        t[keep],
        window,
        ids=[i for i, k in zip(ids, keep) if k],
        marks=[m for m, k in zip(marks, keep) if k] if has_mark else None,
    )
    return replace(pattern, rejected=tuple(rejected))


def write_events(pattern: PointPattern, path: str | Path) -> None:
    """Write ``id,x,y,t[,mark]`` with round-trip float formatting (km, days)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_mark = pattern.marks is not None
        w.writerow(["id", "x", "y", "t"] + (["mark"] if has_mark else []))
        for k in range(pattern.n):
            row = [pattern.ids[k], repr(float(pattern.xy[k, 0])), repr(float(pattern.xy[k, 1])), repr(float(pattern.t[k]))]
            if has_mark:
                m = pattern.marks[k]
                row.append("" if m is None else m)
            w.writerow(row)


def filter_by_mark(pattern: PointPattern, mark: str) -> PointPattern:
    """Events carrying ``mark``, in their original order; the window is kept."""
    if pattern.marks is None:
        keep = np.zeros(pattern.n, dtype=bool)
    else:
        keep = np.array([m == mark for m in pattern.marks], dtype=bool)
    if not keep.any():
        warnings.warn(f"no events with mark {mark!r}", IngestionWarning, stacklevel=2)
    return pattern.subset(keep)


# --------------------------------------------------------------------------
# covariate grid
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CovariateGrid:
    """Endemic grid of ``K`` spatial cells × ``L`` periods.

    ``z[k, l, c]`` is covariate ``columns[c]`` in cell ``k`` during period
    ``l``; cell-level columns are constant over periods and period-level
    columns constant over cells.  Period ``l`` covers ``(start[l], end[l]]``.
    ``regions[k]`` is the cell geometry; it may be None only for a
    single-cell grid, whose cell is the whole window.
    """

    window: Window
    cell_ids: tuple[str, ...]
    area: np.ndarray
    population: np.ndarray
    regions: tuple[Region | None, ...]
    period_ids: tuple[str, ...]
    start: np.ndarray
    end: np.ndarray
    columns: tuple[str, ...]
    z: np.ndarray

    def __post_init__(self):
        K, L = len(self.cell_ids), len(self.period_ids)
        problems = []
        if K == 0 or L == 0:
            problems.append("grid needs at least one cell and one period")
        if self.area.shape != (K,) or self.population.shape != (K,) or len(self.regions) != K:
            problems.append("cell arrays have inconsistent lengths")
        if self.start.shape != (L,) or self.end.shape != (L,):
            problems.append("period arrays have inconsistent lengths")
        if self.z.shape != (K, L, len(self.columns)):
            problems.append(f"z has shape {self.z.shape}, expected {(K, L, len(self.columns))}")
        if problems:
            raise IngestionError("invalid covariate grid", problems)
        if len(set(self.cell_ids)) != K:
            problems.append("duplicate cell ids")
        if len(set(self.columns)) != len(self.columns):
            problems.append("duplicate covariate column names")
        if np.any(self.area <= 0):
            problems.append("cell areas must be positive")
        if np.any(self.population < 0) or not np.all(np.isfinite(self.population)):
            problems.append("cell populations must be finite and >= 0")
        if not np.any(self.population > 0):
            problems.append("at least one cell needs a positive population")
        if not np.all(np.isfinite(self.z)):
            problems.append("covariates must be finite")
        total = float(np.sum(self.area))
        rel = abs(total - self.window.area) / self.window.area
        if rel > 1e-3:
            problems.append(f"cell areas sum to {total:.6g} km^2 but |W| = {self.window.area:.6g} (relative {rel:.2e})")
        if any(r is None for r in self.regions) and K > 1:
            problems.append("cell geometry is required when there is more than one cell")
        for cid, reg, a in zip(self.cell_ids, self.regions, self.area):
            if reg is not None and abs(reg.area - a) / a > 1e-3:
                problems.append(f"cell {cid!r}: geometry area {reg.area:.6g} != area_km2 {a:.6g}")
        tol = 1e-9 * max(1.0, self.window.t_max)
        if L:
            if abs(self.start[0]) > tol:
                problems.append(f"first period must start at 0, starts at {self.start[0]!r}")
            if abs(self.end[-1] - self.window.t_max) > tol:
                problems.append(f"last period must end at t_max={self.window.t_max!r}, ends at {self.end[-1]!r}")
            if np.any(self.end <= self.start):
                problems.append("every period needs end_day > start_day")
            gaps = np.nonzero(np.abs(self.start[1:] - self.end[:-1]) > tol)[0]
            for g in gaps[:10]:
                kind = "gap" if self.start[g + 1] > self.end[g] else "overlap"
                problems.append(f"{kind} between periods {self.period_ids[g]!r} and {self.period_ids[g + 1]!r}")
        if problems:
            raise IngestionError("invalid covariate grid", problems)
        for arr in (self.area, self.population, self.start, self.end, self.z):
            arr.setflags(write=False)

    @classmethod
    def from_tables(
        cls,
        window: Window,
        cells: Mapping[str, Sequence],
        periods: Mapping[str, Sequence],
        regions: Mapping[str, Region] | None = None,
    ) -> "CovariateGrid":
        """Assemble a grid from column dictionaries.

        ``cells`` needs ``cell_id``, ``area_km2`` and ``population``; every
        other key is a cell-level covariate.  ``periods`` needs
        ``period_id``, ``start_day`` and ``end_day`` plus optional
        period-level covariates.  Periods are sorted by start.
        """
        cell_ids = tuple(str(c) for c in cells["cell_id"])
        period_ids = [str(p) for p in periods["period_id"]]
        start = np.asarray(periods["start_day"], dtype=float)
        end = np.asarray(periods["end_day"], dtype=float)
        order = np.argsort(start, kind="stable")
        K, L = len(cell_ids), len(period_ids)
        cell_cols = [c for c in cells if c not in ("cell_id", "area_km2", "population")]
        period_cols = [c for c in periods if c not in ("period_id", "start_day", "end_day")]
        clash = set(cell_cols) & set(period_cols)
        if clash:
            raise IngestionError("covariate names used by both cells and periods", sorted(clash))
        z = np.empty((K, L, len(cell_cols) + len(period_cols)))
        for c, name in enumerate(cell_cols):
            z[:, :, c] = np.asarray(cells[name], dtype=float)[:, None]
        for c, name in enumerate(period_cols):
            z[:, :, len(cell_cols) + c] = np.asarray(periods[name], dtype=float)[order][None, :]
        if regions is None:
            regs: tuple[Region | None, ...] = (None,) * K
        else:
            missing = [c for c in cell_ids if c not in regions]
            if missing:
                raise IngestionError("cells without geometry", [f"cell {c!r}" for c in missing])
            regs = tuple(regions[c] for c in cell_ids)
        return cls(
            window=window,
            cell_ids=cell_ids,
            area=np.asarray(cells["area_km2"], dtype=float).copy(),
            population=np.asarray(cells["population"], dtype=float).copy(),
            regions=regs,
            period_ids=tuple(period_ids[k] for k in order),
            start=start[order].copy(),
            end=end[order].copy(),
            columns=tuple(cell_cols + period_cols),
            z=z,
        )

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    @property
    def n_periods(self) -> int:
        return len(self.period_ids)

    @property
    def duration(self) -> np.ndarray:
        return self.end - self.start

    def column_index(self, names: Sequence[str]) -> list[int]:
        unknown = [c for c in names if c not in self.columns]
        if unknown:
            raise KeyError(f"unknown covariate column(s): {', '.join(unknown)}; available: {', '.join(self.columns)}")
        return [self.columns.index(c) for c in names]

    def locate_cells(self, xy) -> np.ndarray:
        """Cell index of each point; raises if a point is in no cell or several."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self.n_cells == 1 and self.regions[0] is None:
            inside = self.window.contains(xy)
            if not inside.all():
                raise LookupError(f"{np.count_nonzero(~inside)} point(s) outside the window")
            return np.zeros(len(xy), dtype=np.int64)
        cell = np.full(len(xy), -1, dtype=np.int64)
        for k, reg in enumerate(self.regions):
            x0, y0, x1, y1 = reg.bbox
            open_ = cell < 0
            cand = np.nonzero(open_ & (xy[:, 0] >= x0) & (xy[:, 0] <= x1) & (xy[:, 1] >= y0) & (xy[:, 1] <= y1))[0]
            if len(cand) == 0:
                continue
            # First match wins for points on a boundary shared by two cells.
            cell[cand[reg.contains(xy[cand])]] = k
        lost = np.nonzero(cell < 0)[0]
        if len(lost):
            # Points exactly on a cell edge can fail the even-odd test of every cell.
            x0, y0, x1, y1 = self.window.bbox
            tol = 1e-9 * max(x1 - x0, y1 - y0)
            dist = np.stack([reg.boundary_distance(xy[lost]) for reg in self.regions])
            near = np.argmin(dist, axis=0)
            ok = (dist[near, np.arange(len(lost))] <= tol) & self.window.contains(xy[lost])
            cell[lost[ok]] = near[ok]
            if not ok.all():
                bad = lost[~ok]
                raise LookupError(
                    f"{len(bad)} point(s) lie in no cell, e.g. {tuple(float(v) for v in xy[bad[0]])}"
                )
        return cell

    def locate_periods(self, t) -> np.ndarray:
        """Period index of each time in (0, t_max]."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t <= 0) or np.any(t > self.end[-1]):
            raise LookupError("time outside (0, t_max]")
        return np.searchsorted(self.end, t, side="left").astype(np.int64)

    def locate(self, xy, t) -> tuple[np.ndarray, np.ndarray]:
        return self.locate_cells(xy), self.locate_periods(t)


def _read_table(path: str | Path, required: Sequence[str]) -> dict[str, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestionError(f"{path}: missing required column(s)", [f"missing column {c!r}" for c in missing])
    cols: dict[str, list[str]] = {h: [] for h in header}
    for k, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise IngestionError(f"{path}: malformed row", [f"row {k}: {len(r)} fields, expected {len(header)}"])
        for h, v in zip(header, r):
            cols[h].append(v.strip())
    return cols


def _numeric(cols: dict[str, list[str]], path, skip: Sequence[str]) -> dict[str, list]:
    out: dict[str, list] = {}
    problems = []
    for name, values in cols.items():
        if name in skip:
            out[name] = values
            continue
        parsed = []
        for k, v in enumerate(values, start=1):
            try:
                parsed.append(_parse_float(v))
            except ValueError:
                problems.append(f"row {k}, column {name!r}: not a number ({v!r})")
        out[name] = parsed
    if problems:
        raise IngestionError(f"{path}: unparsable values", problems)
    return out


def read_cells_csv(path: str | Path) -> dict[str, list]:
    cols = _read_table(path, ("cell_id", "area_km2", "population"))
    return _numeric(cols, path, skip=("cell_id",))


def read_periods_csv(path: str | Path) -> dict[str, list]:
    cols = _read_table(path, ("period_id", "start_day", "end_day"))
    return _numeric(cols, path, skip=("period_id",))


def build_grid(
    cells_path: str | Path,
    periods_path: str | Path,
    window: Window,
    geometry_path: str | Path | None = None,
    units: str = "km",
) -> CovariateGrid:
    """Read the cells and periods CSVs (and cell geometry GeoJSON keyed by ``cell_id``)."""
    cells = read_cells_csv(cells_path)
    periods = read_periods_csv(periods_path)
    regions = None
    if geometry_path is not None:
        regions = read_geojson_regions(geometry_path, key="cell_id", scale=UNIT_SCALE[units])
    return CovariateGrid.from_tables(window, cells, periods, regions)
