"""Branching-process simulation of the endemic-epidemic model.

Immigrants come from the endemic component: a Poisson number per
(cell, period), placed uniformly in the cell and period.  Each event then
triggers ``Poisson(gamma0 * |b(s, delta) ∩ W| * min(tau, T - t))`` offspring,
uniform on ``b(s, delta) ∩ W`` and on the truncated infectious period.
Every immigrant's cascade draws from its own random stream, so the output is
a pure function of the configuration and seed.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CovariateGrid, Event, PointPattern, write_events
from .geometry import Window, disc_window_areas, sample_uniform
from .rng import stream

__all__ = [
    "SimulationConfig",
    "SimulatedPattern",
    "SimulationWarning",
    "SupercriticalError",
    "offspring_mean",
    "simulate_endemic",
    "simulate_offspring",
    "simulate",
]


class SimulationWarning(UserWarning):
    pass


class SupercriticalError(ValueError):
    """Expected offspring per event is at or above the critical threshold."""


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    grid: CovariateGrid
    beta: np.ndarray
    gamma0: float = 0.0
    delta: float = 0.0
    tau: float = 0.0
    seed: int = 0
    endemic_columns: tuple[str, ...] = ()
    max_generations: int = 1000
    critical: float = 1.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "endemic_columns", tuple(self.endemic_columns))
        if len(beta) != 1 + len(self.endemic_columns):
            raise ValueError(
                f"beta has {len(beta)} entries; expected intercept + {len(self.endemic_columns)} covariate(s)"
            )
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be >= 0 for simulation")
        if self.gamma0 > 0 and not (self.delta > 0 and self.tau > 0):
            raise ValueError("delta and tau must be positive when gamma0 > 0")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")

    @property
    def window(self) -> Window:
        return self.grid.window

    @property
    def offspring_mean(self) -> float:
        return offspring_mean(self.gamma0, self.delta, self.tau)

    @property
    def subcritical(self) -> bool:
        return self.offspring_mean < self.critical

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "endemic_columns": list(self.endemic_columns),
            "gamma0": self.gamma0,
            "delta_km": self.delta,
            "tau_days": self.tau,
            "seed": self.seed,
            "max_generations": self.max_generations,
            "offspring_mean": self.offspring_mean,
        }


def offspring_mean(gamma0: float, delta: float, tau: float) -> float:
    """Unclipped expected offspring per event, gamma0·π·delta²·tau."""
    return gamma0 * math.pi * delta * delta * tau


@dataclass(frozen=True, eq=False)
class SimulatedPattern:
    """A simulated pattern with its family tree.

    ``parent[i]`` is the pattern index of event ``i``'s parent, or -1 for
    immigrants; ``generation`` is 0 for immigrants.
    """

    pattern: PointPattern
    parent: np.ndarray
    generation: np.ndarray
    truncated: int = 0

    @property
    def n(self) -> int:
        return self.pattern.n

    def provenance(self) -> list[tuple[str, str, int]]:
        ids = self.pattern.ids
        return [
            (str(ids[i]), "" if self.parent[i] < 0 else str(ids[self.parent[i]]), int(self.generation[i]))
            for i in range(self.n)
        ]

    def write(self, events_path: str | Path, provenance_path: str | Path) -> None:
        write_events(self.pattern, events_path)
        with open(provenance_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "parent_id", "generation"])
            w.writerows(self.provenance())


def _endemic_means(config: SimulationConfig) -> np.ndarray:
    grid = config.grid
    idx = grid.column_index(config.endemic_columns)
    eta = np.full((grid.n_cells, grid.n_periods), config.beta[0])
    if idx:
        eta = eta + grid.z[:, :, idx] @ config.beta[1:]
    return grid.population[:, None] * np.exp(eta) * grid.duration[None, :]


def _immigrants(config: SimulationConfig) -> tuple[np.ndarray, np.ndarray]:
    grid = config.grid
    mu = _endemic_means(config)
    counts = stream(config.seed, "endemic", "counts").poisson(mu)
    xy_parts, t_parts = [], []
    for k in range(grid.n_cells):
        nk = int(counts[k].sum())
        if nk == 0:
            continue
        rng = stream(config.seed, "endemic", "cell", k)
        target = grid.regions[k] if grid.regions[k] is not None else grid.window
        xy_parts.append(sample_uniform(target, nk, rng))
        per = np.repeat(np.arange(grid.n_periods), counts[k])
        # (1 - U) lies in (0, 1], so times fall in the half-open period (start, end].
        t = grid.start[per] + grid.duration[per] * (1.0 - rng.random(nk))
        t_parts.append(np.minimum(t, grid.end[per]))
    if not xy_parts:
        return np.empty((0, 2)), np.empty(0)
    return np.concatenate(xy_parts), np.concatenate(t_parts)


def simulate_endemic(config: SimulationConfig) -> SimulatedPattern:
    """Immigrants only: the endemic Poisson process on the grid."""
    xy, t = _immigrants(config)
    return _assemble(config.window, xy, t, np.full(len(t), -1), np.zeros(len(t), dtype=np.int64))


def _place_in_disc(center, radius: float, m: int, window: Window, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((m, 2))
    filled = 0
    while filled < m:
        k = 2 * (m - filled) + 8
        r = radius * np.sqrt(rng.random(k))
        a = 2.0 * math.pi * rng.random(k)
        cand = np.column_stack([center[0] + r * np.cos(a), center[1] + r * np.sin(a)])
        cand = cand[window.contains(cand)]
        take = min(len(cand), m - filled)
        out[filled : filled + take] = cand[:take]
        filled += take
    return out


def _children(xy: np.ndarray, t: np.ndarray, config: SimulationConfig, rng: np.random.Generator):
    """Offspring of a batch of parents: (child xy, child t, parent index within batch)."""
    window = config.window
    span = np.maximum(0.0, np.minimum(config.tau, window.t_max - t))
    area = disc_window_areas(xy, config.delta, window)
    counts = rng.poisson(config.gamma0 * area * span)
    if counts.sum() == 0:
        return np.empty((0, 2)), np.empty(0), np.empty(0, dtype=np.int64)
    cxy, ct, cp = [], [], []
    for j in np.nonzero(counts)[0]:
        m = int(counts[j])
        cxy.append(_place_in_disc(xy[j], config.delta, m, window, rng))
        ctime = t[j] + span[j] * (1.0 - rng.random(m))
        ctime = np.minimum(ctime, window.t_max)
        # Guard against rounding onto the parent time itself.
        ctime = np.where(ctime > t[j], ctime, np.nextafter(t[j], math.inf))
        ct.append(ctime)
        cp.append(np.full(m, j, dtype=np.int64))
    return np.concatenate(cxy), np.concatenate(ct), np.concatenate(cp)


def simulate_offspring(parent: Event, config: SimulationConfig, rng: np.random.Generator | None = None) -> list[Event]:
    """Direct offspring of one event (one generation)."""
    if config.gamma0 == 0:
        return []
    if rng is None:
        rng = stream(config.seed, "offspring", parent.id)
    xy = np.array([[parent.x, parent.y]])
    if not config.window.contains(xy)[0]:
        raise ValueError(f"parent {parent.id!r} lies outside the window")
    cxy, ct, _ = _children(xy, np.array([parent.t]), config, rng)
    return [
        Event(f"{parent.id}.{k + 1}", float(p[0]), float(p[1]), float(tt)) for k, (p, tt) in enumerate(zip(cxy, ct))
    ]


def _cascade(i: int, xy0: np.ndarray, t0: float, config: SimulationConfig):
    rng = stream(config.seed, "cascade", i)
    xs, ts, parents, gens = [xy0[None, :]], [np.array([t0])], [np.array([-1])], [np.array([0])]
    frontier_xy, frontier_t, frontier_idx = xy0[None, :], np.array([t0]), np.array([0])
    size = 1
    truncated = 0
    g = 0
    while len(frontier_t):
        cxy, ct, cp = _children(frontier_xy, frontier_t, config, rng)
        if len(ct) == 0:
            break
        if g + 1 > config.max_generations:
            truncated += len(ct)
            break
        g += 1
        idx = np.arange(size, size + len(ct))
        xs.append(cxy)
        ts.append(ct)
        parents.append(frontier_idx[cp])
        gens.append(np.full(len(ct), g))
        size += len(ct)
        frontier_xy, frontier_t, frontier_idx = cxy, ct, idx
    return np.concatenate(xs), np.concatenate(ts), np.concatenate(parents), np.concatenate(gens), truncated


def simulate(config: SimulationConfig, threads: int = 1) -> SimulatedPattern:
    """Immigrants plus all descendant generations up to ``max_generations``.

    A supercritical configuration (offspring mean ≥ ``critical``) only
    warns here; the generation cap then bounds the work.
    """
    if not config.subcritical:
        warnings.warn(
            f"expected offspring per event {config.offspring_mean:.4g} >= {config.critical}; "
            f"cascades are capped at {config.max_generations} generations",
            SimulationWarning,
            stacklevel=2,
        )
    xy, t = _immigrants(config)
    if config.gamma0 == 0 or len(t) == 0:
        return _assemble(config.window, xy, t, np.full(len(t), -1), np.zeros(len(t), dtype=np.int64))

    def run(i):
        return _cascade(i, xy[i], float(t[i]), config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(t))))
    else:
        results = [run(i) for i in range(len(t))]
    all_xy, all_t, all_p, all_g = [], [], [], []
    offset = 0
    truncated = 0
    for cx, ct, cp, cg, tr in results:
        all_xy.append(cx)
        all_t.append(ct)
        all_p.append(np.where(cp >= 0, cp + offset, -1))
        all_g.append(cg)
        offset += len(ct)
        truncated += tr
    if truncated:
        warnings.warn(
            f"generation cap {config.max_generations} reached; {truncated} offspring were not generated",
            SimulationWarning,
            stacklevel=2,
        )
    return _assemble(
        config.window,
        np.concatenate(all_xy),
        np.concatenate(all_t),
        np.concatenate(all_p),
        np.concatenate(all_g),
        truncated,
    )


def _assemble(window, xy, t, parent, generation, truncated: int = 0) -> SimulatedPattern:
    """Sort by time, number the events ``1..n`` and remap parent indices."""
    order = np.lexsort((np.arange(len(t)), t))
    rank = np.empty(len(t), dtype=np.int64)
    rank[order] = np.arange(len(t))
    parent = np.asarray(parent)[order]
    parent = np.where(parent >= 0, rank[np.maximum(parent, 0)], -1)
    width = max(1, len(str(len(t))))
    ids = [f"s{k + 1:0{width}d}" for k in range(len(t))]
    pattern = PointPattern(
        np.array(ids, dtype=object),
        np.asarray(xy, dtype=float)[order].reshape(-1, 2).copy(),
        np.asarray(t, dtype=float)[order].copy(),
        None,
        window,
    )
    return SimulatedPattern(pattern, parent, np.asarray(generation)[order].astype(np.int64), truncated)
