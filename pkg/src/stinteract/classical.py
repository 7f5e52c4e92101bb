"""Classical space-time interaction statistics: Knox, Mantel, K-function.

All pair statistics count unordered pairs ``i < j`` and use closed
thresholds (``d_s <= delta``, ``d_t <= tau``).  Spatial distance is always
evaluated as ``sqrt(dx*dx + dy*dy)`` so that the fast paths and the
brute-force paths agree bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .data import PointPattern
from .geometry import GeometryError, Window, ripley_weights, temporal_weights

__all__ = [
    "PairDistances",
    "KnoxTable",
    "DSurface",
    "MantelPrecompute",
    "KSurfacePrecompute",
    "close_pairs",
    "time_close_count",
    "time_close_pairs",
    "knox_statistic",
    "knox_expected",
    "mantel_statistic",
    "k_surface",
    "omnibus_statistic",
]

# Rows per block when streaming over all n(n-1)/2 pairs.
_PAIR_BLOCK_ELEMENTS = 4_000_000
# Largest pair count for which the Mantel spatial distances are cached.
_MANTEL_CACHE_PAIRS = 20_000_000


def _dist(xy: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    dx = xy[i, 0] - xy[j, 0]
    dy = xy[i, 1] - xy[j, 1]
    return np.sqrt(dx * dx + dy * dy)


def close_pairs(xy, delta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unordered pairs ``(i, j)``, ``i < j``, with spatial distance ``<= delta``.

    Returns index arrays sorted lexicographically and the distances.
    """
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 2 or delta < 0:
        e = np.empty(0, dtype=np.int64)
        return e, e, np.empty(0)
    # The tree's own distance test may differ from ours by an ulp; query a
    # slightly larger radius and filter exactly.
    pad = 1e-9 * max(delta, 1e-300) + 1e-12 * float(np.max(np.abs(xy)) + 1.0)
    pairs = cKDTree(xy).query_pairs(delta + pad, output_type="ndarray")
    if len(pairs) == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e, np.empty(0)
    i = np.minimum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    j = np.maximum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    d = _dist(xy, i, j)
    keep = d <= delta
    i, j, d = i[keep], j[keep], d[keep]
    order = np.lexsort((j, i))
    return i[order], j[order], d[order]


def _time_upper(t_sorted: np.ndarray, tau: float) -> np.ndarray:
    """For each i, one past the last index j with ``t[j] - t[i] <= tau``.

    Floating-point subtraction is monotone in ``t[j]``, so the close set is a
    contiguous run; searchsorted finds it approximately and a fix-up loop
    makes it exact.
    """
    n = len(t_sorted)
    idx = np.searchsorted(t_sorted, t_sorted + tau, side="right")
    base = np.arange(n)
    idx = np.maximum(idx, base + 1)
    while True:
        nxt = np.minimum(idx, n - 1)
        grow = (idx < n) & (t_sorted[nxt] - t_sorted <= tau)
        if not grow.any():
            break
        idx = idx + grow
    while True:
        prv = np.maximum(idx - 1, 0)
        shrink = (idx - 1 > base) & (t_sorted[prv] - t_sorted > tau)
        if not shrink.any():
            break
        idx = idx - shrink
    return idx


def time_close_count(t, tau: float) -> int:
    """Number of unordered pairs with ``|t_i - t_j| <= tau``."""
    ts = np.sort(np.asarray(t, dtype=float))
    if len(ts) < 2:
        return 0
    up = _time_upper(ts, tau)
    return int(np.sum(up - np.arange(len(ts)) - 1))


def time_close_pairs(t_sorted: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Unordered pairs ``i < j`` of a sorted time vector with lag ``<= tau``."""
    n = len(t_sorted)
    if n < 2:
        e = np.empty(0, dtype=np.int64)
        return e, e
    up = _time_upper(t_sorted, tau)
    counts = up - np.arange(n) - 1
    i = np.repeat(np.arange(n, dtype=np.int64), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    j = i + 1 + (np.arange(len(i), dtype=np.int64) - start)
    return i, j


@dataclass(frozen=True)
class PairDistances:
    """Lazy access to the pair distances of a pattern.

    Spatially close pairs are found with a k-d tree, so memory is linear in
    the number of close pairs rather than in ``n(n-1)/2``.
    """

    xy: np.ndarray
    t: np.ndarray

    @classmethod
    def of(cls, pattern: PointPattern) -> "PairDistances":
        return cls(pattern.xy, pattern.t)

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def n_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    def space_close(self, delta: float):
        return close_pairs(self.xy, delta)

    def time_close_count(self, tau: float) -> int:
        return time_close_count(self.t, tau)

    def blocks(self):
        """Yield ``(d_s, d_t)`` over all unordered pairs in row blocks."""
        n = self.n
        step = max(1, _PAIR_BLOCK_ELEMENTS // max(n, 1))
        for i0 in range(0, n - 1, step):
            ii, jj = _rows_upper(i0, min(n - 1, i0 + step), n)
            yield _dist(self.xy, ii, jj), np.abs(self.t[ii] - self.t[jj])


def _rows_upper(i0: int, i1: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(i0, i1, dtype=np.int64)
    counts = n - rows - 1
    i = np.repeat(rows, counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    j = i + 1 + (np.arange(len(i), dtype=np.int64) - start)
    return i, j


# --------------------------------------------------------------------------
# Knox
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KnoxTable:
    """2×2 table of unordered pairs by spatial and temporal closeness."""

    delta: float
    tau: float
    n: int
    close_close: int
    close_far: int  # close in space only
    far_close: int  # close in time only
    far_far: int

    @property
    def statistic(self) -> int:
        return self.close_close

    @property
    def space_close(self) -> int:
        return self.close_close + self.close_far

    @property
    def time_close(self) -> int:
        return self.close_close + self.far_close

    @property
    def total(self) -> int:
        return self.close_close + self.close_far + self.far_close + self.far_far

    @property
    def expected(self) -> float:
        return knox_expected(self.space_close, self.time_close, self.total)

    def to_dict(self) -> dict:
        return {
            "delta_km": self.delta,
            "tau_days": self.tau,
            "n": self.n,
            "T_knox": self.close_close,
            "expected": self.expected,
            "table": {
                "space_close_time_close": self.close_close,
                "space_close_time_far": self.close_far,
                "space_far_time_close": self.far_close,
                "space_far_time_far": self.far_far,
            },
            "margins": {"space_close": self.space_close, "time_close": self.time_close, "total": self.total},
        }


def knox_expected(space_close: int, time_close: int, total: int) -> float:
    """Expected close-close count under independence: row margin × column margin / total."""
    if total <= 0:
        raise ValueError("total pair count must be positive")
    return space_close * time_close / total


def _table(delta, tau, n, cc, sc, tc) -> KnoxTable:
    total = n * (n - 1) // 2
    return KnoxTable(float(delta), float(tau), n, cc, sc - cc, tc - cc, total - sc - tc + cc)


def knox_statistic(pattern: PointPattern | PairDistances, delta: float, tau: float, method: str = "tree") -> KnoxTable:
    """Knox 2×2 table at thresholds ``delta`` (km) and ``tau`` (days).

    ``method="brute"`` scans every pair and exists for cross-checking.
    """
    pd_ = pattern if isinstance(pattern, PairDistances) else PairDistances.of(pattern)
    n = pd_.n
    if n < 2:
        raise ValueError(f"Knox statistic needs at least 2 events, got {n}")
    if not (delta > 0 and tau > 0):
        raise ValueError(f"delta and tau must be positive, got {delta}, {tau}")
    if method == "brute":
        cc = sc = tc = 0
        for ds, dt in pd_.blocks():
            s = ds <= delta
            c = dt <= tau
            sc += int(np.count_nonzero(s))
            tc += int(np.count_nonzero(c))
            cc += int(np.count_nonzero(s & c))
        return _table(delta, tau, n, cc, sc, tc)
    if method != "tree":
        raise ValueError(f"unknown method {method!r}")
    i, j, _ = pd_.space_close(delta)
    cc = int(np.count_nonzero(np.abs(pd_.t[i] - pd_.t[j]) <= tau))
    return _table(delta, tau, n, cc, len(i), pd_.time_close_count(tau))


# --------------------------------------------------------------------------
# Mantel
# --------------------------------------------------------------------------


class MantelPrecompute:
    """Time-invariant parts of the Mantel correlation for repeated evaluation.

    The spatial distances (and hence their mean and spread) do not change
    when times are permuted; neither do the mean and spread of the temporal
    distances, because they depend only on the multiset of times.
    """

    def __init__(self, xy, t):
        self.xy = np.asarray(xy, dtype=float)
        t = np.asarray(t, dtype=float)
        n = len(t)
        if n < 3:
            raise ValueError(f"Mantel statistic needs at least 3 events, got {n}")
        self.n = n
        self.m = n * (n - 1) // 2
        pdist = PairDistances(self.xy, t)
        self._cache = self.m <= _MANTEL_CACHE_PAIRS
        if self._cache:
            i, j = np.triu_indices(n, 1)
            self._i, self._j = i.astype(np.int64), j.astype(np.int64)
            ds = _dist(self.xy, self._i, self._j)
            self.mean_s = float(np.mean(ds))
            self._cs = ds - self.mean_s
            self.ss = float(np.dot(self._cs, self._cs))
        else:
            tot = 0.0
            for ds, _ in pdist.blocks():
                tot += math.fsum(ds) if len(ds) < 64 else float(np.sum(ds))
            self.mean_s = tot / self.m
            ss = 0.0
            for ds, _ in pdist.blocks():
                c = ds - self.mean_s
                ss += float(np.dot(c, c))
            self.ss = ss
        tot = 0.0
        for _, dt in pdist.blocks():
            tot += float(np.sum(dt))
        self.mean_t = tot / self.m
        tt = 0.0
        for _, dt in pdist.blocks():
            c = dt - self.mean_t
            tt += float(np.dot(c, c))
        self.tt = tt
        if self.ss == 0.0:
            raise ValueError("Mantel statistic undefined: all spatial distances are equal (zero variance)")
        if self.tt == 0.0:
            raise ValueError("Mantel statistic undefined: all temporal distances are equal (zero variance)")

    def correlation(self, t) -> float:
        """Pearson correlation of spatial and temporal pair distances for times ``t``."""
        t = np.asarray(t, dtype=float)
        if self._cache:
            ct = np.abs(t[self._i] - t[self._j]) - self.mean_t
            st = float(np.dot(self._cs, ct))
        else:
            st = 0.0
            for ds, dt in PairDistances(self.xy, t).blocks():
                st += float(np.dot(ds - self.mean_s, dt - self.mean_t))
        r = st / math.sqrt(self.ss * self.tt)
        return min(1.0, max(-1.0, r))


def mantel_statistic(pattern: PointPattern) -> float:
    """Pearson correlation between spatial and temporal distances over all unordered pairs."""
    return MantelPrecompute(pattern.xy, pattern.t).correlation(pattern.t)


# --------------------------------------------------------------------------
# space-time K-function
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DSurface:
    """K-function estimates on a ``deltas × taus`` grid.

    ``K[a, b]`` is K̂(deltas[a], taus[b]); ``D = K - outer(Ks, Kt)``.
    """

    deltas: np.ndarray
    taus: np.ndarray
    K: np.ndarray
    Ks: np.ndarray
    Kt: np.ndarray
    D: np.ndarray
    edge_correction: bool = True
    window_representation: str = "polygon"
    pair_sums: np.ndarray | None = None  # weighted ordered-pair counts behind K

    def rows(self) -> list[tuple[float, float, float, float, float, float]]:
        return [
            (float(d), float(t), float(self.K[a, b]), float(self.Ks[a]), float(self.Kt[b]), float(self.D[a, b]))
            for a, d in enumerate(self.deltas)
            for b, t in enumerate(self.taus)
        ]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "tau", "K", "Ks", "Kt", "D"])
            for row in self.rows():
                w.writerow([repr(v) for v in row])

    def to_dict(self) -> dict:
        return {
            "deltas_km": self.deltas.tolist(),
            "taus_days": self.taus.tolist(),
            "K": self.K.tolist(),
            "Ks": self.Ks.tolist(),
            "Kt": self.Kt.tolist(),
            "D": self.D.tolist(),
            "edge_correction": self.edge_correction,
            "window_representation": self.window_representation,
        }


def _check_grid(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} grid is empty")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} grid must contain finite non-negative values")
    if np.any(np.diff(arr) <= 0):
        raise ValueError(f"{name} grid must be strictly increasing")
    return arr


class KSurfacePrecompute:
    """Permutation-invariant parts of the K-function surface.

    K̂_s depends only on locations and K̂_t only on the multiset of times, so
    both are computed once; per replicate only the joint K̂ is re-accumulated
    over the spatially close ordered pairs.
    """

    def __init__(self, pattern: PointPattern, deltas, taus, edge_correction: bool = True, method: str = "auto"):
        self.deltas = _check_grid(deltas, "delta")
        self.taus = _check_grid(taus, "tau")
        n = pattern.n
        if n < 2:
            raise ValueError(f"K-function needs at least 2 events, got {n}")
        window: Window = pattern.window
        self.window = window
        self.t_max = window.t_max
        self.n = n
        self.edge_correction = edge_correction
        self.method = method
        self.representation = window.representation if method == "auto" else method
        nn1 = float(n) * float(n - 1)
        self.pre_st = window.area * window.t_max / nn1
        self.pre_s = window.area / nn1
        self.pre_t = window.t_max / nn1

        xy, t = pattern.xy, pattern.t
        i, j, d = close_pairs(xy, float(self.deltas[-1]))
        # Ordered pairs: both directions of every unordered pair.
        self.oi = np.concatenate([i, j])
        self.oj = np.concatenate([j, i])
        ds = np.concatenate([d, d])
        if edge_correction:
            self.w = ripley_weights(xy[self.oi], ds, window, method=method)
        else:
            self.w = np.ones(len(ds))
        self.dbin = np.searchsorted(self.deltas, ds, side="left")

        na, nb = len(self.deltas), len(self.taus)
        self.Ks = self.pre_s * np.cumsum(np.bincount(self.dbin, weights=self.w, minlength=na)[:na])
        ti, tj = time_close_pairs(t, float(self.taus[-1]))
        lag = np.concatenate([t[tj] - t[ti]] * 2)
        centre = np.concatenate([t[ti], t[tj]])
        v = self._temporal(centre, lag)
        tbin = np.searchsorted(self.taus, lag, side="left")
        self.Kt = self.pre_t * np.cumsum(np.bincount(tbin, weights=v, minlength=nb)[:nb])

    def _temporal(self, centre: np.ndarray, lag: np.ndarray) -> np.ndarray:
        if not self.edge_correction:
            return np.ones(len(lag))
        try:
            return temporal_weights(centre, lag, self.t_max)
        except GeometryError as exc:
            raise GeometryError(f"{exc}: largest tau must be small relative to t_max") from None

    def joint(self, t) -> np.ndarray:
        """K̂ on the grid for times ``t`` attached to the pattern's locations."""
        return self.pre_st * self.joint_sums(t)

    def joint_sums(self, t) -> np.ndarray:
        """Edge-weighted ordered-pair counts ``sum w_ij v_ij`` per grid point."""
        t = np.asarray(t, dtype=float)
        na, nb = len(self.deltas), len(self.taus)
        lag = np.abs(t[self.oi] - t[self.oj])
        ok = lag <= self.taus[-1]
        tbin = np.searchsorted(self.taus, lag[ok], side="left")
        wv = self.w[ok] * self._temporal(t[self.oi][ok], lag[ok])
        flat = self.dbin[ok] * nb + tbin
        counts = np.bincount(flat, weights=wv, minlength=na * nb)[: na * nb].reshape(na, nb)
        return np.cumsum(np.cumsum(counts, axis=0), axis=1)

    def surface(self, t) -> DSurface:
        sums = self.joint_sums(t)
        K = self.pre_st * sums
        D = K - np.outer(self.Ks, self.Kt)
        return DSurface(
            self.deltas.copy(), self.taus.copy(), K, self.Ks.copy(), self.Kt.copy(), D,
            self.edge_correction, self.representation, sums,
        )

    def omnibus(self, t) -> float:
        return omnibus_statistic(self.surface(t))


def k_surface(
    pattern: PointPattern,
    deltas: Sequence[float],
    taus: Sequence[float],
    edge_correction: bool = True,
    method: str = "auto",
) -> DSurface:
    """Edge-corrected space-time K-function and the D̂ surface.

    ``method`` selects the window representation used for the spatial edge
    weights (``"polygon"``, ``"raster"`` or ``"auto"``).  With
    ``edge_correction=False`` all weights are 1.
    """
    pre = KSurfacePrecompute(pattern, deltas, taus, edge_correction, method)
    return pre.surface(pattern.t)


def omnibus_statistic(d: DSurface | np.ndarray) -> float:
    """Sum of D̂ over the whole grid."""
    D = d.D if isinstance(d, DSurface) else np.asarray(d, dtype=float)
    return float(np.sum(D))
