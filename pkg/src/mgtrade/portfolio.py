r"""Equal-weight portfolio returns and mean-variance efficient frontiers.

Frontier points minimise :math:`w' \Sigma w` subject to :math:`w' \mu = r` and
:math:`w' 1 = 1` with short sales allowed, using the closed-form Lagrangian
solution

.. math::

   w = \Sigma^{-1}(\lambda_1 \mu + \lambda_2 1), \quad
   \lambda_1 = (C r - A) / D, \quad \lambda_2 = (B - A r) / D

with :math:`A = 1'\Sigma^{-1}\mu`, :math:`B = \mu'\Sigma^{-1}\mu`,
:math:`C = 1'\Sigma^{-1}1` and :math:`D = BC - A^2`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

DEFAULT_RIDGE = 1e-8
N_TARGETS = 50
# D / (B C) below this means mu is (numerically) parallel to 1
DEGENERATE_TOL = 1e-10
MAX_CONDITION = 1e12


class FrontierError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReturnMatrix:
    """Aligned simple returns, shape ``(periods, assets)``."""

    assets: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] != len(self.assets):
            raise ValueError(f"values must have shape (periods, {len(self.assets)})")
        v.setflags(write=False)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "values", v)

    @classmethod
    def from_columns(cls, columns: dict[str, Sequence[float]]) -> "ReturnMatrix":
        lengths = {len(c) for c in columns.values()}
        if len(lengths) > 1:
            raise ValueError("all assets need the same number of periods")
        if not columns:
            return cls((), np.empty((0, 0)))
        return cls(tuple(columns), np.column_stack([np.asarray(c, float) for c in columns.values()]))

    @property
    def periods(self) -> int:
        return self.values.shape[0]

    def subset(self, cols: Sequence[int]) -> "ReturnMatrix":
        cols = list(cols)
        return ReturnMatrix(tuple(self.assets[i] for i in cols), self.values[:, cols])


@dataclass(frozen=True, eq=False)
class FrontierPoint:
    target_return: float
    stdev: float
    weights: np.ndarray


def equal_weight_returns(matrix: ReturnMatrix) -> np.ndarray:
    if matrix.values.size == 0:
        raise ValueError("empty return matrix")
    return matrix.values.mean(axis=1)


def rolling_window_return(series, window: int) -> np.ndarray:
    """Compounded return over each trailing window of ``window`` periods."""
    r = np.asarray(series, dtype=np.float64)
    if window < 1 or window > len(r):
        raise ValueError(f"window {window} longer than series of length {len(r)}")
    if window == 1:
        return r.copy()
    # log-space sums drift for long series; multiply directly
    out = np.empty(len(r) - window + 1)
    for i in range(len(out)):
        out[i] = np.prod(1.0 + r[i : i + window]) - 1.0
    return out


def moments(matrix: ReturnMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-asset sample mean and sample covariance (ddof=1)."""
    if matrix.periods < 2 or not matrix.assets:
        raise FrontierError("need at least two periods and one asset")
    mu = matrix.values.mean(axis=0)
    cov = np.atleast_2d(np.cov(matrix.values, rowvar=False))
    return mu, cov


def _factor(cov: np.ndarray, ridge: float):
    def attempt(c):
        try:
            factor = sla.cho_factor(c, lower=True)
        except np.linalg.LinAlgError:
            return None
        d = np.diag(factor[0]) ** 2
        if d.min() <= 0 or d.max() / d.min() > MAX_CONDITION:
            return None
        return factor

    factor = attempt(cov)
    if factor is None and ridge > 0:
        factor = attempt(cov + ridge * np.eye(len(cov)))
    if factor is None:
        raise FrontierError("covariance matrix is singular even after ridge")
    return factor


@dataclass(frozen=True)
class _Frontier:
    mu: np.ndarray
    inv_mu: np.ndarray
    inv_one: np.ndarray
    a: float
    b: float
    c: float
    d: float

    @property
    def degenerate(self) -> bool:
        return self.d <= DEGENERATE_TOL * self.b * self.c

    @property
    def gmv_mean(self) -> float:
        return self.a / self.c

    def gmv_weights(self) -> np.ndarray:
        return self.inv_one / self.c

    def weights(self, r: float) -> np.ndarray:
        lam1 = (self.c * r - self.a) / self.d
        lam2 = (self.b - self.a * r) / self.d
        return lam1 * self.inv_mu + lam2 * self.inv_one


def _frontier(mu: np.ndarray, cov: np.ndarray, ridge: float) -> _Frontier:
    factor = _factor(cov, ridge)
    ones = np.ones(len(mu))
    inv_mu = sla.cho_solve(factor, mu)
    inv_one = sla.cho_solve(factor, ones)
    a, b, c = float(ones @ inv_mu), float(mu @ inv_mu), float(ones @ inv_one)
    return _Frontier(mu, inv_mu, inv_one, a, b, c, b * c - a * a)


def global_min_variance(matrix: ReturnMatrix, ridge: float = DEFAULT_RIDGE) -> FrontierPoint:
    mu, cov = moments(matrix)
    w = _frontier(mu, cov, ridge).gmv_weights()
    return FrontierPoint(float(w @ mu), float(np.sqrt(max(w @ cov @ w, 0.0))), w)


def default_targets(matrices: Sequence[ReturnMatrix], n: int = N_TARGETS, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Evenly spaced targets from the lowest minimum-variance mean to the highest asset mean."""
    lo = min(global_min_variance(m, ridge).target_return for m in matrices)
    hi = max(float(moments(m)[0].max()) for m in matrices)
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def frontier_from_moments(
    mu,
    cov,
    targets: Sequence[float],
    ridge: float = DEFAULT_RIDGE,
    efficient_only: bool = False,
) -> list[FrontierPoint]:
    """Minimum-variance portfolio for each target mean return.

    When every asset has the same mean only that mean is attainable and other
    targets are skipped. ``efficient_only`` also skips targets below the
    minimum-variance portfolio's mean.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    if targets.size == 0:
        raise FrontierError("empty target grid")
    f = _frontier(mu, cov, ridge)
    scale = max(np.abs(mu).max(), 1e-300)
    points = []
    for r in targets:
        if f.degenerate:
            if abs(r - f.gmv_mean) > 1e-9 * scale:
                continue
            w = f.gmv_weights()
        else:
            if efficient_only and r < f.gmv_mean - 1e-12 * scale:
                continue
            w = f.weights(r)
        var = float(w @ cov @ w)
        points.append(FrontierPoint(float(r), float(np.sqrt(max(var, 0.0))), w))
    return points


def efficient_frontier(
    matrix: ReturnMatrix,
    targets: Sequence[float] | None = None,
    ridge: float = DEFAULT_RIDGE,
    efficient_only: bool = False,
) -> list[FrontierPoint]:
    """Frontier of the sample mean and covariance of ``matrix``."""
    if targets is None:
        targets = default_targets([matrix], ridge=ridge)
    mu, cov = moments(matrix)
    return frontier_from_moments(mu, cov, targets, ridge, efficient_only)


def draw_subsets(n_assets: int, subset_size: int, n_subsets: int, seed: int) -> list[np.ndarray]:
    """Seeded uniform draws without replacement, each returned in ascending order."""
    if subset_size > n_assets:
        raise FrontierError(f"subset size {subset_size} exceeds {n_assets} assets")
    if subset_size < 1 or n_subsets < 1:
        raise FrontierError("subset_size and n_subsets must be >= 1")
    rng = np.random.default_rng(seed)
    return [np.sort(rng.choice(n_assets, size=subset_size, replace=False)) for _ in range(n_subsets)]


def subset_frontiers(
    matrix: ReturnMatrix,
    subset_size: int,
    n_subsets: int,
    targets: Sequence[float],
    seed: int = 0,
    ridge: float = DEFAULT_RIDGE,
) -> np.ndarray:
    """Frontier stdev per (subset, target); NaN where a subset skips the target."""
    targets = np.asarray(targets, dtype=np.float64)
    out = np.full((n_subsets, len(targets)), np.nan)
    for k, cols in enumerate(draw_subsets(len(matrix.assets), subset_size, n_subsets, seed)):
        pts = {p.target_return: p.stdev for p in
               efficient_frontier(matrix.subset(cols), targets, ridge)}
        out[k] = [pts.get(float(t), np.nan) for t in targets]
    return out


def median_frontier(
    matrix: ReturnMatrix,
    subset_size: int,
    n_subsets: int,
    targets: Sequence[float] | None = None,
    seed: int = 0,
    ridge: float = DEFAULT_RIDGE,
) -> list[tuple[float, float]]:
    """Per-target median stdev over random asset subsets (NaN if no subset reaches it)."""
    if targets is None:
        targets = default_targets([matrix], ridge=ridge)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise FrontierError("empty target grid")
    table = subset_frontiers(matrix, subset_size, n_subsets, targets, seed, ridge)
    result = []
    for j, t in enumerate(targets):
        col = table[:, j]
        col = col[~np.isnan(col)]
        result.append((float(t), float(np.median(col)) if col.size else float("nan")))
    return result
