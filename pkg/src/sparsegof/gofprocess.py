"""Partial-sum processes, Kolmogorov-Smirnov functionals and parametric bootstraps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .estimation import EstimatorSpec, fit_batch
from .measure import BinnedCounts, Grid, MeasureContext, NumericError, StatisticKernel
from .parallel import run_blocks
from .statistics import parallel_part


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed to refit."""


@dataclass(frozen=True)
class ScanningFamily:
    """Nested sets ``A_{j/K}`` = the first ``j`` bins in ``order``."""

    K: int
    order: np.ndarray | None = None

    def __post_init__(self):
        if self.order is None:
            object.__setattr__(self, "order", np.arange(self.K))
        order = np.asarray(self.order, dtype=int)
        if order.shape != (self.K,) or not np.array_equal(np.sort(order), np.arange(self.K)):
            raise ValueError("order must be a permutation of the bin indices")
        object.__setattr__(self, "order", order)

    @property
    def t_values(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    def mask(self, j: int) -> np.ndarray:
        """Indicator of ``A_{j/K}`` over bins in their natural order."""
        out = np.zeros(self.K, bool)
        out[self.order[:j]] = True
        return out


def _values(kernel, counts, means):
    if isinstance(counts, BinnedCounts):
        counts = counts.counts
    if isinstance(means, MeasureContext):
        means = means.means
    vals = kernel(np.asarray(counts, dtype=float), np.asarray(means, dtype=float))
    if not np.all(np.isfinite(vals)):
        raise NumericError("kernel is not finite at an observed count")
    return vals


def _cumulate(vals, order):
    K = vals.shape[-1]
    cs = np.cumsum(vals[..., order], axis=-1) / np.sqrt(K)
    zero = np.zeros(vals.shape[:-1] + (1,))
    return np.concatenate([zero, cs], axis=-1)


def partial_sums(kernel: StatisticKernel, data, means, scan: ScanningFamily | None = None) -> np.ndarray:
    """``S(t_j) = K^{-1/2} sum_{k in A_{t_j}} g(x_k, nu_k)`` for ``j = 0..K``."""
    vals = _values(kernel, data, means)
    scan = scan or ScanningFamily(vals.shape[-1])
    return _cumulate(vals, scan.order)


def ks_statistic(kernel: StatisticKernel, data, means, scan: ScanningFamily | None = None):
    """``max_t |S(t)|`` with the kernel evaluated at the given (fitted) means."""
    return np.max(np.abs(partial_sums(kernel, data, means, scan)), axis=-1)


@dataclass
class BootstrapPlan:
    replicates: int
    mode: str = "classical"
    seed: int = 0
    statistic: str = "ks"
    workers: int = 1
    max_failure_rate: float = 0.01

    def __post_init__(self):
        if self.mode not in ("classical", "projected"):
            raise ValueError(f"unknown bootstrap mode {self.mode!r}")
        if self.statistic not in ("ks", "single"):
            raise ValueError(f"unknown bootstrap statistic {self.statistic!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if self.replicates < 1000:
            warnings.warn("fewer than 1000 bootstrap replicates", stacklevel=2)


@dataclass
class BootstrapResult:
    pvalue: float
    observed: float
    replicates: np.ndarray
    failures: int
    mode: str

    @property
    def n_valid(self) -> int:
        return int(self.replicates.size)


def pvalue_from(observed: float, reps: np.ndarray) -> float:
    reps = np.asarray(reps)
    return float((1 + np.count_nonzero(reps >= observed)) / (1 + reps.size))


def _functional(vals, statistic, order):
    if statistic == "ks":
        return np.max(np.abs(_cumulate(vals, order)), axis=-1)
    return vals.sum(axis=-1) / np.sqrt(vals.shape[-1])


def classical_replicates(plan: BootstrapPlan, model_hat, spec: EstimatorSpec, kernel: StatisticKernel,
                         grid: Grid, scan: ScanningFamily | None = None):
    """Resample from ``m_{theta_hat}``, refit, recompute; returns ``(stats, failures)``."""
    scan = scan or ScanningFamily(grid.K)
    m_hat = model_hat.bin_means(grid)
    theta0 = model_hat.theta

    def job(b, n, rng):
        z = rng.poisson(m_hat, (n, grid.K)).astype(float)
        th, conv, _ = fit_batch(spec, model_hat, z, grid, theta0)
        ok = conv.copy()
        out = np.full(n, np.nan)
        if np.any(ok):
            m_star, _ = model_hat.batch_means(th[ok], grid)
            with np.errstate(all="ignore"):
                vals = kernel(z[ok], m_star)
            fin = np.all(np.isfinite(vals), axis=-1)
            stat = np.full(vals.shape[0], np.nan)
            stat[fin] = _functional(vals[fin], plan.statistic, scan.order)
            out[ok] = stat
        return (out,)

    (stats,) = run_blocks(job, plan.replicates, plan.seed, plan.workers)
    good = np.isfinite(stats)
    return stats[good], int((~good).sum())


def projected_replicates(plan: BootstrapPlan, model_hat, spec: EstimatorSpec, kernel: StatisticKernel,
                         grid: Grid, scan: ScanningFamily | None = None):
    """Simulate ``v(g_par 1_A) - <g_par 1_A, psi^T><b, psi^T>^{-1} v(b)`` at fixed ``theta_hat``.

    The coefficients of ``v(b)`` for every set in the scan are computed once;
    each replicate then costs one cumulative sum and a ``p x K`` product.
    """
    scan = scan or ScanningFamily(grid.K)
    ctx = MeasureContext.from_model(model_hat, grid)
    m, dm = ctx.means, ctx.dmeans
    K = grid.K
    g_par = parallel_part(kernel)
    w = g_par.coef(m)
    q = dm / m
    # <g_par 1_{A_t}, psi_j> = (1/K) sum_{k in A_t} w_k m_k q_jk, for every t
    A = np.cumsum((w * m)[None, scan.order] * q[:, scan.order], axis=-1).T / K  # (K, p)
    B = (spec.b_cov(m, dm) @ q.T) / K
    coef = A @ np.linalg.inv(B)  # (K, p)
    order = scan.order

    def job(b, n, rng):
        z = rng.poisson(m, (n, K)).astype(float)
        lin = np.cumsum((w * (z - m))[:, order], axis=-1)
        vb = spec.b_values(z, m, dm).sum(axis=-1)  # (n, p)
        path = (lin - vb @ coef.T) / np.sqrt(K)
        if plan.statistic == "ks":
            stat = np.max(np.abs(path), axis=-1)
        else:
            stat = path[:, -1]
        return (stat,)

    (stats,) = run_blocks(job, plan.replicates, plan.seed, plan.workers)
    return stats, 0


def bootstrap_pvalue(plan: BootstrapPlan, observed: float, model_hat, spec: EstimatorSpec,
                     kernel: StatisticKernel, grid: Grid, scan: ScanningFamily | None = None) -> BootstrapResult:
    """Parametric bootstrap p-value ``(1 + #{T* >= T_obs}) / (1 + R)``."""
    if plan.mode == "classical":
        stats, fails = classical_replicates(plan, model_hat, spec, kernel, grid, scan)
    else:
        stats, fails = projected_replicates(plan, model_hat, spec, kernel, grid, scan)
    if fails > plan.max_failure_rate * plan.replicates:
        raise BootstrapError(f"{fails} of {plan.replicates} bootstrap refits failed")
    return BootstrapResult(pvalue_from(observed, stats), float(observed), stats, fails, plan.mode)


def observed_ks(kernel: StatisticKernel, counts, model_hat, grid: Grid, scan: ScanningFamily | None = None,
                parallel: bool = False) -> float:
    """KS statistic on observed data at ``theta_hat``; ``parallel`` uses ``g_par``."""
    g = parallel_part(kernel) if parallel else kernel
    return float(ks_statistic(g, counts, model_hat.bin_means(grid), scan))

