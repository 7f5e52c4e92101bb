"""Endemic-epidemic conditional intensity model with constant interaction kernels.

The conditional intensity at ``(s, t)`` in cell ``k`` and period ``l`` is::

    lambda(s, t) = rho_k / area_k * exp(beta' x_kl) + gamma0 * |I(s, t)|

where ``I(s, t)`` holds the past events ``j`` with ``t_j < t <= t_j + tau``
and ``||s - s_j|| <= delta``.  ``x_kl`` starts with an intercept, so
``exp(beta_0)`` is a rate per person-day.  ``gamma0`` enters on the identity
link and may be negative as long as the intensity stays positive at every
event.

The log-likelihood is::

    l = sum_i log lambda_i - sum_kl rho_k exp(beta' x_kl) d_l
        - gamma0 * sum_j |b(s_j, delta) ∩ W| * min(tau, T - t_j)
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .classical import close_pairs
from .data import CovariateGrid, PointPattern
from .geometry import (
    Window,
    as_polygon_region,
    clip_region_edges,
    disc_edges_areas,
    disc_window_areas,
    edges_area,
)

__all__ = [
    "ModelSpec",
    "ModelParams",
    "ModelData",
    "FitResult",
    "RankDeficientError",
    "ConvergenceError",
    "EpidemicWarning",
    "conditional_intensity",
    "log_likelihood",
    "score",
    "fit_endemic",
    "fit_full",
    "reproduction_number",
    "SpatialResiduals",
    "TemporalResiduals",
    "spatial_residuals",
    "temporal_residuals",
]

INTERCEPT = "(Intercept)"
Z975 = float(stats.norm.ppf(0.975))


class RankDeficientError(ValueError):
    """The endemic design matrix is not of full column rank."""


class ConvergenceError(RuntimeError):
    """The optimiser stopped without meeting the convergence criterion."""

    def __init__(self, message: str, trace: Sequence[float] = (), last=None):
        super().__init__(message)
        self.trace = list(trace)
        self.last = last


class EpidemicWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Interaction radius ``delta`` (km), infectious period ``tau`` (days),
    endemic covariate columns and whether ``gamma0`` is estimated."""

    delta: float
    tau: float
    endemic_columns: tuple[str, ...] = ()
    epidemic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "endemic_columns", tuple(self.endemic_columns))
        if self.epidemic and not (self.delta > 0 and self.tau > 0):
            raise ValueError(f"delta and tau must be positive, got {self.delta}, {self.tau}")
        if INTERCEPT in self.endemic_columns:
            raise ValueError("the intercept is always included; do not list it")

    @property
    def coef_names(self) -> tuple[str, ...]:
        return (INTERCEPT,) + self.endemic_columns

    def to_dict(self) -> dict:
        return {
            "delta_km": self.delta,
            "tau_days": self.tau,
            "endemic_columns": list(self.endemic_columns),
            "epidemic": self.epidemic,
        }


@dataclass(frozen=True)
class ModelParams:
    beta: np.ndarray
    gamma0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())


def _design(grid: CovariateGrid, columns: Sequence[str]) -> np.ndarray:
    """Design array of shape (K, L, p) with a leading intercept column."""
    idx = grid.column_index(columns)
    K, L = grid.n_cells, grid.n_periods
    X = np.empty((K, L, 1 + len(idx)))
    X[:, :, 0] = 1.0
    if idx:
        X[:, :, 1:] = grid.z[:, :, idx]
    return X


def _check_rank(Xu: np.ndarray, names: Sequence[str]) -> None:
    rank = np.linalg.matrix_rank(Xu)
    if rank == Xu.shape[1]:
        return
    bad = []
    for c in range(1, Xu.shape[1] + 1):
        if np.linalg.matrix_rank(Xu[:, :c]) < c - len(bad):
            bad.append(names[c - 1])
    raise RankDeficientError(
        f"endemic design has rank {rank} < {Xu.shape[1]} columns on populated cells; "
        f"collinear column(s): {', '.join(repr(b) for b in bad)}"
    )


class ModelData:
    """Everything the likelihood needs, precomputed for one pattern.

    Grid rows with equal design vectors are merged (their offsets summed on
    the exponential scale), which leaves the likelihood unchanged.  Event
    arrays stay in the pattern's order; :meth:`with_times` rebuilds only the
    time-dependent parts for permuted times.
    """

    def __init__(self, spec: ModelSpec, grid: CovariateGrid, pattern: PointPattern, method: str = "auto"):
        if pattern.window is not grid.window and abs(pattern.window.area - grid.window.area) > 1e-9 * grid.window.area:
            raise ValueError("pattern and grid use different windows")
        self.spec = spec
        self.grid = grid
        self.window: Window = grid.window
        self.names = spec.coef_names
        X = _design(grid, spec.endemic_columns)
        K, L, p = X.shape
        self.p = p
        self._X = X
        pop = grid.population
        off = np.log(np.where(pop > 0, pop, 1.0))[:, None] + np.log(grid.duration)[None, :]
        rows = X.reshape(K * L, p)
        live = np.repeat(pop > 0, L)
        Xu, inv = np.unique(rows[live], axis=0, return_inverse=True)
        inv = inv.ravel()
        off_live = off.reshape(-1)[live]
        # log of summed exp(offset) per unique design row, stabilised.
        m = np.full(len(Xu), -np.inf)
        np.maximum.at(m, inv, off_live)
        acc = np.zeros(len(Xu))
        np.add.at(acc, inv, np.exp(off_live - m[inv]))
        self.Xu = Xu
        self.off_u = m + np.log(acc)
        self.row_to_u = np.full(K * L, -1, dtype=np.int64)
        self.row_to_u[live] = inv
        _check_rank(Xu, self.names)
        self.log_dens_cell = np.where(pop > 0, np.log(np.where(pop > 0, pop, 1.0)) - np.log(grid.area), -np.inf)

        self.n = pattern.n
        self.xy = pattern.xy
        self.cell = grid.locate_cells(pattern.xy)
        if spec.epidemic:
            self.A = disc_window_areas(pattern.xy, spec.delta, self.window, method=method)
            pi, pj, _ = close_pairs(pattern.xy, spec.delta)
        else:
            self.A = np.zeros(self.n)
            pi = pj = np.empty(0, dtype=np.int64)
        self.pair_i, self.pair_j = pi, pj
        self._set_times(np.asarray(pattern.t, dtype=float))

    def _set_times(self, t: np.ndarray) -> None:
        grid, spec = self.grid, self.spec
        self.t = t
        self.period = grid.locate_periods(t)
        self.row = self.cell * grid.n_periods + self.period
        self.x = self._X[self.cell, self.period]
        self.log_dens = self.log_dens_cell[self.cell]
        self.u = self.row_to_u[self.row]
        self.y_u = np.bincount(self.u[self.u >= 0], minlength=len(self.Xu)).astype(float)
        if spec.epidemic:
            self.c = _active_counts(t, self.pair_i, self.pair_j, spec.tau, self.n)
            self.S = float(np.sum(self.A * np.minimum(spec.tau, self.window.t_max - t)))
        else:
            self.c = np.zeros(self.n)
            self.S = 0.0

    def with_times(self, t) -> "ModelData":
        """Copy with the same locations but new times (index-aligned, unsorted allowed)."""
        new = object.__new__(ModelData)
        new.__dict__.update(self.__dict__)
        new._set_times(np.asarray(t, dtype=float))
        return new

    @property
    def identifiable(self) -> bool:
        return bool(np.any(self.c > 0))

    # likelihood pieces -----------------------------------------------------

    def _terms(self, beta, gamma):
        beta = np.asarray(beta, dtype=float)
        with np.errstate(over="ignore"):
            e = np.exp(self.log_dens + self.x @ beta)
            mu = np.exp(self.off_u + self.Xu @ beta)
        lam = e + gamma * self.c
        return e, mu, lam

    def loglik(self, beta, gamma: float = 0.0) -> float:
        e, mu, lam = self._terms(beta, gamma)
        if not np.all(lam > 0) or not np.all(np.isfinite(lam)):
            return -math.inf
        val = float(np.sum(np.log(lam)) - np.sum(mu) - gamma * self.S)
        return val if math.isfinite(val) else -math.inf

    def score(self, beta, gamma: float = 0.0) -> np.ndarray:
        e, mu, lam = self._terms(beta, gamma)
        gb = self.x.T @ (e / lam) - self.Xu.T @ mu
        if not self.spec.epidemic:
            return gb
        gg = float(np.sum(self.c / lam) - self.S)
        return np.append(gb, gg)

    def hessian(self, beta, gamma: float = 0.0) -> np.ndarray:
        e, mu, lam = self._terms(beta, gamma)
        l2 = lam * lam
        Hbb = (self.x * (e * gamma * self.c / l2)[:, None]).T @ self.x - (self.Xu * mu[:, None]).T @ self.Xu
        if not self.spec.epidemic:
            return Hbb
        Hbg = -(self.x.T @ (e * self.c / l2))
        Hgg = -float(np.sum(self.c * self.c / l2))
        p = self.p
        H = np.empty((p + 1, p + 1))
        H[:p, :p] = Hbb
        H[:p, p] = H[p, :p] = Hbg
        H[p, p] = Hgg
        return H

    def endemic_total(self, beta) -> float:
        return float(np.sum(np.exp(self.off_u + self.Xu @ np.asarray(beta, dtype=float))))


def _active_counts(t: np.ndarray, pi: np.ndarray, pj: np.ndarray, tau: float, n: int) -> np.ndarray:
    """|I(s_i, t_i)| for every event from the spatially close pairs."""
    ti, tj = t[pi], t[pj]
    j_at_i = (tj < ti) & (ti - tj <= tau)
    i_at_j = (ti < tj) & (tj - ti <= tau)
    c = np.bincount(pi[j_at_i], minlength=n) + np.bincount(pj[i_at_j], minlength=n)
    return c.astype(float)


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    """Maximum-likelihood fit of the endemic-only or the full model."""

    spec: ModelSpec
    names: tuple[str, ...]
    beta: np.ndarray
    gamma0: float
    loglik: float
    se_beta: np.ndarray
    se_gamma0: float | None
    cov: np.ndarray
    converged: bool
    iterations: int
    epidemic: bool
    n: int
    trace: list[float] = field(default_factory=list)
    lr_D: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.beta, self.gamma0)

    @property
    def T_R(self) -> float:
        return reproduction_number(self, self.spec)

    def coef_table(self) -> list[dict]:
        rows = []
        for name, b, se in zip(self.names, self.beta, self.se_beta):
            z = b / se if se > 0 else math.nan
            rows.append(
                {
                    "term": name,
                    "estimate": float(b),
                    "se": float(se),
                    "RR": math.exp(b),
                    "RR_ci_lower": math.exp(b - Z975 * se),
                    "RR_ci_upper": math.exp(b + Z975 * se),
                    "z": float(z),
                    "p_value": float(2 * stats.norm.sf(abs(z))) if math.isfinite(z) else math.nan,
                }
            )
        return rows

    def gamma_row(self) -> dict | None:
        if not self.epidemic:
            return None
        se = self.se_gamma0 if self.se_gamma0 is not None else math.nan
        z = self.gamma0 / se if se and se > 0 else math.nan
        return {
            "term": "gamma0",
            "estimate": self.gamma0,
            "se": se,
            "ci_lower": self.gamma0 - Z975 * se,
            "ci_upper": self.gamma0 + Z975 * se,
            "z": z,
            "p_value": float(2 * stats.norm.sf(abs(z))) if math.isfinite(z) else math.nan,
        }

    def to_dict(self) -> dict:
        return {
            "model": "endemic-epidemic" if self.epidemic else "endemic",
            "spec": self.spec.to_dict(),
            "n": self.n,
            "endemic": self.coef_table(),
            "epidemic": self.gamma_row(),
            "gamma0": self.gamma0,
            "loglik": self.loglik,
            "lr_D": self.lr_D,
            "T_R": self.T_R,
            "converged": self.converged,
            "iterations": self.iterations,
            "trace": list(self.trace),
            "notes": list(self.notes),
        }


def _se(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov = np.full(H.shape, math.nan)
    d = np.diag(cov)
    se = np.where(d > 0, np.sqrt(np.abs(d)), math.nan)
    return cov, se


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def _as_data(spec, grid, pattern) -> ModelData:
    if isinstance(pattern, ModelData):
        return pattern
    return ModelData(spec, grid, pattern)


def fit_endemic(
    spec: ModelSpec,
    grid: CovariateGrid | None,
    pattern: PointPattern | ModelData,
    start: np.ndarray | None = None,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> FitResult:
    """Poisson regression of the aggregated cell × period counts (IRLS).

    Offsets are ``log(rho_k * d_l)``; the reported log-likelihood is on the
    point-process scale, so it can be compared with :func:`fit_full`.
    """
    md = _as_data(spec, grid, pattern)
    if np.any(md.u < 0):
        k = int(md.cell[np.argmax(md.u < 0)])
        raise ValueError(
            f"{int(np.sum(md.u < 0))} event(s) lie in cells with zero population (e.g. cell "
            f"{md.grid.cell_ids[k]!r}); the endemic model gives them zero intensity"
        )
    X, y, off = md.Xu, md.y_u, md.off_u
    n = float(np.sum(y))
    if start is None:
        beta = np.zeros(md.p)
        beta[0] = math.log(n / float(np.sum(np.exp(off)))) if n > 0 else -30.0
    else:
        beta = np.asarray(start, dtype=float).copy()

    def dev(b):
        eta = off + X @ b
        return float(np.sum(np.exp(eta)) - y @ eta)

    cur = dev(beta)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = off + X @ beta
        mu = np.exp(eta)
        g = X.T @ (y - mu)
        info = (X * mu[:, None]).T @ X
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError as exc:
            raise RankDeficientError(f"information matrix is singular: {exc}") from None
        t = 1.0
        while True:
            cand = beta + t * step
            new = dev(cand)
            if math.isfinite(new) and new <= cur + 1e-12 * max(1.0, abs(cur)):
                break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("endemic IRLS step halving failed", trace, beta)
        beta, cur = cand, new
        trace.append(-cur)
        if np.max(np.abs(t * step)) < tol * (1.0 + np.max(np.abs(beta))):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"endemic IRLS did not converge in {max_iter} iterations", trace, beta)
    H = md.hessian(beta, 0.0)[: md.p, : md.p] if spec.epidemic else md.hessian(beta, 0.0)
    cov, se = _se(H)
    return FitResult(
        spec=ModelSpec(spec.delta, spec.tau, spec.endemic_columns, epidemic=False),
        names=md.names,
        beta=beta,
        gamma0=0.0,
        loglik=_endemic_loglik(md, beta),
        se_beta=se,
        se_gamma0=None,
        cov=cov,
        converged=True,
        iterations=it,
        epidemic=False,
        n=md.n,
        trace=trace,
    )


def _endemic_loglik(md: ModelData, beta) -> float:
    e, mu, _ = md._terms(beta, 0.0)
    return float(np.sum(np.log(e)) - np.sum(mu))


def fit_full(
    spec: ModelSpec,
    grid: CovariateGrid | None,
    pattern: PointPattern | ModelData,
    endemic: FitResult | None = None,
    start: ModelParams | None = None,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> FitResult:
    """Joint maximum-likelihood fit of ``(beta, gamma0)``.

    Damped Newton iterations on the analytic score and Hessian; a step that
    makes the intensity non-positive at any event (log-likelihood ``-inf``)
    or lowers the likelihood is halved.  Converged when every score
    component times its standard error is below ``tol``.  ``lr_D`` is taken
    against ``endemic`` (fitted here when not given).
    """
    md = _as_data(spec, grid, pattern)
    if not spec.epidemic:
        return fit_endemic(spec, None, md)
    if endemic is None:
        endemic = fit_endemic(spec, None, md, start=None if start is None else start.beta)
    notes: list[str] = []
    p = md.p
    if not md.identifiable:
        msg = "no event has an active predecessor; gamma0 is not identifiable and is fixed at 0"
        warnings.warn(msg, EpidemicWarning, stacklevel=2)
        notes.append(msg)
        H = md.hessian(endemic.beta, 0.0)
        cov, se = _se(H[:p, :p])
        return FitResult(
            spec=spec, names=md.names, beta=endemic.beta.copy(), gamma0=0.0, loglik=endemic.loglik,
            se_beta=se, se_gamma0=None, cov=cov, converged=True, iterations=0, epidemic=True,
            n=md.n, trace=[endemic.loglik], lr_D=0.0, notes=notes,
        )

    theta = np.append(endemic.beta if start is None else start.beta, 0.0 if start is None else start.gamma0)
    cur = md.loglik(theta[:p], theta[p])
    if not math.isfinite(cur):
        theta = np.append(endemic.beta, 0.0)
        cur = md.loglik(theta[:p], theta[p])
    trace = [cur]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = md.score(theta[:p], theta[p])
        info = -md.hessian(theta[:p], theta[p])
        step, inv = _damped_solve(info, g)
        crit = float(np.max(np.abs(g) * np.sqrt(np.abs(np.diag(inv)))))
        if crit < tol:
            converged = True
            break
        t = 1.0
        accepted = False
        while t > 2.0**-50:
            cand = theta + t * step
            new = md.loglik(cand[:p], cand[p])
            if math.isfinite(new) and new >= cur - 1e-12 * max(1.0, abs(cur)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if crit < 1e-3:
                notes.append(f"line search stalled at scaled gradient {crit:.2e}; accepted as converged")
                converged = True
                break
            raise ConvergenceError(
                f"line search failed at iteration {it} (scaled gradient {crit:.3g})", trace,
                ModelParams(theta[:p], theta[p]),
            )
        theta, cur = cand, new
        trace.append(cur)
    if not converged:
        raise ConvergenceError(
            f"full-model fit did not converge in {max_iter} iterations", trace, ModelParams(theta[:p], theta[p])
        )
    H = md.hessian(theta[:p], theta[p])
    cov, se = _se(H)
    return FitResult(
        spec=spec,
        names=md.names,
        beta=theta[:p].copy(),
        gamma0=float(theta[p]),
        loglik=cur,
        se_beta=se[:p],
        se_gamma0=float(se[p]),
        cov=cov,
        converged=True,
        iterations=it,
        epidemic=True,
        n=md.n,
        trace=trace,
        lr_D=2.0 * (cur - endemic.loglik),
        notes=notes,
    )


def _damped_solve(info: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Newton step ``info^-1 g``, adding Levenberg damping until ``info`` is positive definite."""
    scale = np.sqrt(np.abs(np.diag(info)))
    scale[scale == 0] = 1.0
    M = info / np.outer(scale, scale)
    lam = 0.0
    eye = np.eye(len(g))
    while True:
        try:
            L = np.linalg.cholesky(M + lam * eye)
            break
        except np.linalg.LinAlgError:
            lam = 1e-8 if lam == 0 else lam * 10
            if lam > 1e8:
                raise ConvergenceError("information matrix cannot be regularised") from None
    Linv = np.linalg.inv(L)
    inv_s = (Linv.T @ Linv) / np.outer(scale, scale)
    return inv_s @ g, inv_s


def reproduction_number(fit: FitResult | float, spec: ModelSpec) -> float:
    """Expected offspring of one event over the unclipped disc and full period: gamma0·π·delta²·tau."""
    gamma0 = fit.gamma0 if isinstance(fit, FitResult) else float(fit)
    if gamma0 == 0:
        return 0.0
    return gamma0 * math.pi * spec.delta**2 * spec.tau


# --------------------------------------------------------------------------
# direct evaluation
# --------------------------------------------------------------------------


def conditional_intensity(
    spec: ModelSpec,
    grid: CovariateGrid,
    params: ModelParams,
    pattern: PointPattern,
    s,
    t: float,
) -> float:
    """λ(s, t) given the history in ``pattern`` (events with ``t_j < t``)."""
    s = np.asarray(s, dtype=float).reshape(1, 2)
    k = int(grid.locate_cells(s)[0])
    l = int(grid.locate_periods([t])[0])
    X = _design(grid, spec.endemic_columns)
    if grid.population[k] > 0:
        endemic = grid.population[k] / grid.area[k] * math.exp(float(X[k, l] @ params.beta))
    else:
        endemic = 0.0
    if not spec.epidemic or params.gamma0 == 0:
        return endemic
    dt = t - pattern.t
    d = np.sqrt(np.sum((pattern.xy - s) ** 2, axis=1))
    active = (dt > 0) & (dt <= spec.tau) & (d <= spec.delta)
    return endemic + params.gamma0 * int(np.count_nonzero(active))


def log_likelihood(spec: ModelSpec, grid: CovariateGrid, pattern: PointPattern | ModelData, params: ModelParams) -> float:
    """Point-process log-likelihood; ``-inf`` if λ ≤ 0 at any event."""
    md = _as_data(spec, grid, pattern)
    return md.loglik(params.beta, params.gamma0 if spec.epidemic else 0.0)


def score(spec: ModelSpec, grid: CovariateGrid, pattern: PointPattern | ModelData, params: ModelParams) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` in ``(beta, gamma0)`` (``beta`` only without epidemic)."""
    md = _as_data(spec, grid, pattern)
    return md.score(params.beta, params.gamma0 if spec.epidemic else 0.0)


# --------------------------------------------------------------------------
# residuals
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpatialResiduals:
    """Pearson residuals on a pixel grid; ``infinite`` flags pixels with
    events but zero expected count."""

    pixel_size: float
    x_edges: np.ndarray
    y_edges: np.ndarray
    observed: np.ndarray
    expected: np.ndarray
    residual: np.ndarray

    @property
    def infinite(self) -> np.ndarray:
        return np.isinf(self.residual)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x0", "y0", "x1", "y1", "observed", "expected", "residual"])
            for a in range(len(self.x_edges) - 1):
                for b in range(len(self.y_edges) - 1):
                    w.writerow(
                        [
                            repr(float(self.x_edges[a])), repr(float(self.y_edges[b])),
                            repr(float(self.x_edges[a + 1])), repr(float(self.y_edges[b + 1])),
                            int(self.observed[a, b]), repr(float(self.expected[a, b])),
                            repr(float(self.residual[a, b])),
                        ]
                    )

    def summary(self) -> dict:
        finite = self.residual[np.isfinite(self.residual)]
        return {
            "pixel_size_km": self.pixel_size,
            "n_pixels": int(self.residual.size),
            "n_infinite": int(np.count_nonzero(self.infinite)),
            "observed_total": int(self.observed.sum()),
            "expected_total": float(self.expected.sum()),
            "max_abs_finite": float(np.max(np.abs(finite))) if finite.size else 0.0,
        }


def _pixel_edges(lo: float, hi: float, h: float) -> np.ndarray:
    m = max(1, int(math.ceil((hi - lo) / h - 1e-9)))
    return lo + h * np.arange(m + 1)


def spatial_residuals(
    fit: FitResult, spec: ModelSpec, grid: CovariateGrid, pattern: PointPattern, pixel_size: float
) -> SpatialResiduals:
    """Observed minus expected event counts per pixel, over √expected."""
    if not pixel_size > 0:
        raise ValueError("pixel size must be positive")
    window = grid.window
    x0, y0, x1, y1 = window.bbox
    xe = _pixel_edges(x0, x1, pixel_size)
    ye = _pixel_edges(y0, y1, pixel_size)
    nx, ny = len(xe) - 1, len(ye) - 1
    obs = np.zeros((nx, ny), dtype=np.int64)
    ix = np.clip(np.searchsorted(xe, pattern.xy[:, 0], side="right") - 1, 0, nx - 1)
    iy = np.clip(np.searchsorted(ye, pattern.xy[:, 1], side="right") - 1, 0, ny - 1)
    np.add.at(obs, (ix, iy), 1)

    X = _design(grid, spec.endemic_columns)
    beta = fit.beta
    cell_total = np.where(
        grid.population > 0,
        grid.population * np.sum(np.exp(X @ beta) * grid.duration[None, :], axis=1),
        0.0,
    )
    exp_ = np.zeros((nx, ny))
    w_region = as_polygon_region(window)
    regions = [w_region] if grid.n_cells == 1 and grid.regions[0] is None else list(grid.regions)
    for k, reg in enumerate(regions):
        if cell_total[k] == 0:
            continue
        rx0, ry0, rx1, ry1 = reg.bbox
        a0 = max(0, int(np.searchsorted(xe, rx0, side="right")) - 1)
        a1 = min(nx, int(np.searchsorted(xe, rx1, side="left")))
        b0 = max(0, int(np.searchsorted(ye, ry0, side="right")) - 1)
        b1 = min(ny, int(np.searchsorted(ye, ry1, side="left")))
        for a in range(a0, a1):
            for b in range(b0, b1):
                ea, eb = clip_region_edges(reg, (xe[a], ye[b], xe[a + 1], ye[b + 1]))
                piece = edges_area(ea, eb)
                if piece > 0:
                    exp_[a, b] += cell_total[k] * piece / reg.area

    if fit.epidemic and fit.gamma0 != 0:
        weight = fit.gamma0 * np.minimum(spec.tau, window.t_max - pattern.t)
        r = spec.delta
        lo_a = np.clip(np.searchsorted(xe, pattern.xy[:, 0] - r, side="right") - 1, 0, nx - 1)
        hi_a = np.clip(np.searchsorted(xe, pattern.xy[:, 0] + r, side="left"), 1, nx)
        lo_b = np.clip(np.searchsorted(ye, pattern.xy[:, 1] - r, side="right") - 1, 0, ny - 1)
        hi_b = np.clip(np.searchsorted(ye, pattern.xy[:, 1] + r, side="left"), 1, ny)
        cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        touched: dict[tuple[int, int], list[int]] = {}
        for j in range(pattern.n):
            for a in range(lo_a[j], hi_a[j]):
                for b in range(lo_b[j], hi_b[j]):
                    touched.setdefault((a, b), []).append(j)
        for (a, b), js in touched.items():
            if (a, b) not in cache:
                cache[(a, b)] = clip_region_edges(w_region, (xe[a], ye[b], xe[a + 1], ye[b + 1]))
            ea, eb = cache[(a, b)]
            if len(ea) == 0:
                continue
            js_arr = np.asarray(js)
            areas = disc_edges_areas(pattern.xy[js_arr], r, ea, eb)
            exp_[a, b] += float(np.sum(areas * weight[js_arr]))

    with np.errstate(divide="ignore", invalid="ignore"):
        res = (obs - exp_) / np.sqrt(exp_)
    res = np.where(exp_ > 0, res, np.where(obs > 0, math.inf, 0.0))
    return SpatialResiduals(pixel_size, xe, ye, obs, exp_, res)


@dataclass(frozen=True, eq=False)
class TemporalResiduals:
    """Rescaled times ``Lambda*(t_i)`` and their normalised version ``U``."""

    t: np.ndarray
    Lambda: np.ndarray
    total: float
    U: np.ndarray
    ks_distance: float
    ks_bound: float

    @property
    def within_bound(self) -> bool:
        return self.ks_distance <= self.ks_bound

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "Lambda", "U"])
            for a, b, c in zip(self.t, self.Lambda, self.U):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])

    def summary(self) -> dict:
        return {
            "n": int(len(self.t)),
            "Lambda_T": self.total,
            "ks_distance": self.ks_distance,
            "ks_bound_95": self.ks_bound,
            "within_bound": self.within_bound,
        }


def cumulative_intensity(fit: FitResult, spec: ModelSpec, grid: CovariateGrid, pattern: PointPattern, t) -> np.ndarray:
    """∫_0^t ∫_W λ(s, u) ds du at each time in ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    X = _design(grid, spec.endemic_columns)
    rate = np.where(grid.population[:, None] > 0, grid.population[:, None] * np.exp(X @ fit.beta), 0.0)
    per_day = rate.sum(axis=0)  # endemic events per day in each period
    cum = np.concatenate([[0.0], np.cumsum(per_day * grid.duration)])
    l = grid.locate_periods(t)
    endemic = cum[l] + per_day[l] * (t - grid.start[l])
    if not fit.epidemic or fit.gamma0 == 0:
        return endemic
    order = np.argsort(pattern.t, kind="stable")
    ts = pattern.t[order]
    A = disc_window_areas(pattern.xy, spec.delta, grid.window)[order]
    SA = np.concatenate([[0.0], np.cumsum(A)])
    SAt = np.concatenate([[0.0], np.cumsum(A * ts)])
    a = np.searchsorted(ts, t - spec.tau, side="right")
    b = np.searchsorted(ts, t, side="left")
    b = np.maximum(a, b)
    epi = spec.tau * SA[a] + t * (SA[b] - SA[a]) - (SAt[b] - SAt[a])
    return endemic + fit.gamma0 * epi


def temporal_residuals(fit: FitResult, spec: ModelSpec, grid: CovariateGrid, pattern: PointPattern) -> TemporalResiduals:
    """Time-rescaled residual process and its Kolmogorov-Smirnov distance to uniformity."""
    Lam = cumulative_intensity(fit, spec, grid, pattern, pattern.t)
    total = float(cumulative_intensity(fit, spec, grid, pattern, [grid.window.t_max])[0])
    U = Lam / total
    n = len(U)
    ks = float(stats.kstest(U, "uniform").statistic) if n else 0.0
    return TemporalResiduals(pattern.t.copy(), Lam, total, U, ks, 1.358 / math.sqrt(n) if n else math.inf)
