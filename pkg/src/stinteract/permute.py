"""Monte Carlo permutation tests.

Replicate ``r`` shuffles the time labels over the fixed locations with the
permutation drawn from ``stream(seed, "perm", r)``; replicate values are
therefore identical for any number of worker threads.  The p-value is
``(1 + #{replicate >= observed}) / (B + 1)`` over the successful replicates.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .classical import KSurfacePrecompute, MantelPrecompute, close_pairs, knox_statistic
from .data import CovariateGrid, PointPattern
from .model import (
    ConvergenceError,
    FitResult,
    ModelData,
    ModelParams,
    ModelSpec,
    RankDeficientError,
    fit_endemic,
    fit_full,
    reproduction_number,
)
from .rng import stream

__all__ = [
    "KINDS",
    "PermutationPlan",
    "TestReport",
    "PermutationAbort",
    "draw_permutation",
    "permute_times",
    "p_value",
    "run_test",
]

KINDS = ("knox", "mantel", "omnibus-k", "model-tr", "model-d")
MAX_FAILED_FRACTION = 0.05


class PermutationAbort(RuntimeError):
    """Too many replicates failed to produce a statistic."""


@dataclass(frozen=True)
class PermutationPlan:
    B: int
    seed: int
    kind: str
    threads: int = 1
    alternative: str = "greater"

    def __post_init__(self):
        if self.B < 1:
            raise ValueError(f"B must be >= 1, got {self.B}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.kind not in KINDS:
            raise ValueError(f"unknown statistic kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.alternative != "greater":
            raise ValueError("only the one-sided 'greater' alternative is supported")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def resolution(self) -> float:
        return 1.0 / (self.B + 1)


def _clean(v):
    """JSON-safe value: non-finite floats become strings."""
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("Infinity" if v > 0 else "-Infinity")
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return _clean(v.item())
    return v


@dataclass
class TestReport:
    __test__ = False  # not a pytest test class

    kind: str
    observed: float
    replicates: np.ndarray  # NaN marks a failed replicate
    p_value: float
    B: int
    seed: int
    details: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    threads: int = 1

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(np.isnan(self.replicates)))

    @property
    def B_effective(self) -> int:
        return self.B - self.n_failed

    @property
    def exceedances(self) -> int:
        ok = self.replicates[~np.isnan(self.replicates)]
        return int(np.count_nonzero(ok >= self.observed))

    def to_dict(self) -> dict:
        """Deterministic content only; wall time and thread count are left out."""
        return _clean(
            {
                "test": self.kind,
                "observed": float(self.observed),
                "B": self.B,
                "B_effective": self.B_effective,
                "failed_replicates": self.n_failed,
                "exceedances": self.exceedances,
                "p_value": self.p_value,
                "seed": self.seed,
                "alternative": "greater",
                "replicates": [float(v) for v in self.replicates],
                "failures": list(self.failures),
                **self.details,
            }
        )

    def runtime(self) -> dict:
        return {"wall_time_s": self.wall_time, "threads": self.threads}

    def write_replicates_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "statistic", "observed"])
            for r, v in enumerate(self.replicates):
                w.writerow([r, "" if math.isnan(v) else repr(float(v)), repr(float(self.observed))])


def draw_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n)


def permute_times(pattern: PointPattern, rng: np.random.Generator) -> PointPattern:
    """Reassign the times to the locations by a uniform random permutation.

    Ids and marks stay with their locations; the result is re-sorted by time.
    """
    if pattern.n < 2:
        raise ValueError("need at least 2 events to permute")
    perm = draw_permutation(pattern.n, rng)
    return pattern.with_times(pattern.t[perm])


def p_value(observed: float, replicates: Sequence[float]) -> float:
    """``(1 + #{r >= observed}) / (B + 1)``; NaN replicates are ignored."""
    reps = np.asarray(replicates, dtype=float)
    reps = reps[~np.isnan(reps)]
    return (1 + int(np.count_nonzero(reps >= observed))) / (len(reps) + 1)


# --------------------------------------------------------------------------
# statistic evaluators: functions of a time vector aligned with the locations
# --------------------------------------------------------------------------


class _Evaluator:
    observed: float
    details: dict

    def __call__(self, t: np.ndarray) -> float:  # pragma: no cover - interface
        raise NotImplementedError

    def summarise(self, values: np.ndarray, extras: list) -> dict:
        return {}


class _Knox(_Evaluator):
    def __init__(self, pattern: PointPattern, delta: float, tau: float):
        table = knox_statistic(pattern, delta, tau)
        self.i, self.j, _ = close_pairs(pattern.xy, delta)
        self.tau = tau
        self.observed = float(table.close_close)
        self.details = {"knox": table.to_dict()}

    def __call__(self, t):
        return float(np.count_nonzero(np.abs(t[self.i] - t[self.j]) <= self.tau)), None

    def summarise(self, values, extras):
        ok = values[~np.isnan(values)]
        return {"replicate_mean": float(np.mean(ok)) if ok.size else None}


class _Mantel(_Evaluator):
    def __init__(self, pattern: PointPattern):
        self.pre = MantelPrecompute(pattern.xy, pattern.t)
        self.observed = self.pre.correlation(pattern.t)
        self.details = {"mantel_r": self.observed}

    def __call__(self, t):
        return self.pre.correlation(t), None


class _Omnibus(_Evaluator):
    def __init__(self, pattern: PointPattern, deltas, taus, edge_correction: bool = True):
        self.pre = KSurfacePrecompute(pattern, deltas, taus, edge_correction)
        surface = self.pre.surface(pattern.t)
        self.surface = surface
        self.observed = float(np.sum(surface.D))
        self.details = {"surface": surface.to_dict()}

    def __call__(self, t):
        return self.pre.omnibus(t), None


class _Model(_Evaluator):
    def __init__(self, pattern: PointPattern, grid: CovariateGrid, spec: ModelSpec, statistic: str):
        if not spec.epidemic:
            raise ValueError("the model-based test needs the epidemic component")
        self.spec = spec
        self.statistic = statistic
        self.md = ModelData(spec, grid, pattern)
        self.endemic = fit_endemic(spec, grid, self.md)
        self.fit: FitResult = fit_full(spec, grid, self.md, endemic=self.endemic)
        tr = self.fit.T_R
        self.observed = tr if statistic == "tr" else float(self.fit.lr_D)
        self.details = {
            "statistic": "T_R" if statistic == "tr" else "lr_D",
            "observed_T_R": tr,
            "observed_lr_D": self.fit.lr_D,
            "fit": self.fit.to_dict(),
            "endemic_fit": self.endemic.to_dict(),
        }

    def __call__(self, t):
        md = self.md.with_times(t)
        end = fit_endemic(self.spec, None, md, start=self.endemic.beta)
        full = fit_full(self.spec, None, md, endemic=end, start=ModelParams(end.beta, 0.0))
        tr = reproduction_number(full, self.spec)
        return (tr if self.statistic == "tr" else float(full.lr_D)), (tr, float(full.lr_D))

    def summarise(self, values, extras):
        trs = np.array([e[0] for e in extras if e is not None])
        lrs = np.array([e[1] for e in extras if e is not None])
        mean_tr = float(np.mean(trs)) if trs.size else math.nan
        return {
            "replicate_mean_T_R": mean_tr,
            "T_R_excess": self.details["observed_T_R"] - mean_tr,
            "replicate_T_R_se": float(np.std(trs, ddof=1) / math.sqrt(trs.size)) if trs.size > 1 else math.nan,
            "replicate_mean_lr_D": float(np.mean(lrs)) if lrs.size else math.nan,
        }


_REPLICATE_ERRORS = (ConvergenceError, RankDeficientError, np.linalg.LinAlgError, FloatingPointError, ValueError)


def run_test(
    plan: PermutationPlan,
    pattern: PointPattern,
    *,
    delta: float | None = None,
    tau: float | None = None,
    deltas: Sequence[float] | None = None,
    taus: Sequence[float] | None = None,
    grid: CovariateGrid | None = None,
    spec: ModelSpec | None = None,
    edge_correction: bool = True,
    progress: Callable[[int], None] | None = None,
) -> TestReport:
    """Run the permutation test described by ``plan``.

    Required inputs by kind: ``knox`` needs ``delta`` and ``tau``;
    ``omnibus-k`` needs ``deltas`` and ``taus``; the model kinds need
    ``grid`` and ``spec``.
    """
    start = time.perf_counter()
    if pattern.n < 2:
        raise ValueError("a permutation test needs at least 2 events")
    kind = plan.kind
    if kind == "knox":
        if delta is None or tau is None:
            raise ValueError("knox test needs delta and tau")
        ev: _Evaluator = _Knox(pattern, delta, tau)
    elif kind == "mantel":
        ev = _Mantel(pattern)
    elif kind == "omnibus-k":
        if deltas is None or taus is None:
            raise ValueError("omnibus K test needs deltas and taus")
        ev = _Omnibus(pattern, deltas, taus, edge_correction)
    else:
        if grid is None or spec is None:
            raise ValueError("model-based test needs a covariate grid and a model spec")
        ev = _Model(pattern, grid, spec, "tr" if kind == "model-tr" else "lrd")

    t = pattern.t
    n = pattern.n
    values = np.full(plan.B, math.nan)
    extras: list = [None] * plan.B
    failures: list[str] = [""] * plan.B

    def one(r: int) -> None:
        perm = draw_permutation(n, stream(plan.seed, "perm", r))
        try:
            v, extra = ev(t[perm])
        except _REPLICATE_ERRORS as exc:
            failures[r] = f"replicate {r}: {type(exc).__name__}: {exc}"
            return
        if not math.isfinite(v):
            failures[r] = f"replicate {r}: non-finite statistic {v!r}"
            return
        values[r] = v
        extras[r] = extra
        if progress is not None:
            progress(r)

    if plan.threads > 1:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            list(pool.map(one, range(plan.B)))
    else:
        for r in range(plan.B):
            one(r)

    failed = [f for f in failures if f]
    if len(failed) > MAX_FAILED_FRACTION * plan.B:
        raise PermutationAbort(
            f"{len(failed)} of {plan.B} replicates failed (limit {MAX_FAILED_FRACTION:.0%}); first failures:\n  "
            + "\n  ".join(failed[:5])
        )
    details = dict(ev.details)
    details.update(ev.summarise(values, extras))
    return TestReport(
        kind=kind,
        observed=float(ev.observed),
        replicates=values,
        p_value=p_value(ev.observed, values),
        B=plan.B,
        seed=plan.seed,
        details=details,
        failures=failed,
        wall_time=time.perf_counter() - start,
        threads=plan.threads,
    )
