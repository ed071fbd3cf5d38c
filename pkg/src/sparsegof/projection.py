"""The projector induced by parameter estimation, Gaussian tests and shifts.

Substituting an estimate into a divisible statistic replaces ``g`` by
``Pi g = g - <g, psi^T> <b, psi^T>^{-1} b`` to first order. For the MLE,
``b = psi`` and ``Pi`` is the orthogonal projection off the score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .estimation import EstimatorSpec, RankError, orthonormal_score, score_kernel
from .measure import (
    LinearKernel,
    MeasureContext,
    StatisticKernel,
    c_function,
    gram,
    inner_product,
    norm2,
)
from .models import AltSpec, hhat_on_grid


class DegenerateVariance(ValueError):
    """A Gaussian test was asked for with nonpositive variance."""


@dataclass
class Projector:
    """``Pi`` at a fixed parameter; Gram matrices are computed once."""

    ctx: MeasureContext
    spec: EstimatorSpec
    b_kernels: list
    psi: list
    B: np.ndarray
    B_inv: np.ndarray
    bb: np.ndarray | None = None

    def coefficients(self, g: StatisticKernel) -> np.ndarray:
        """``<g, psi^T> <b, psi^T>^{-1}``: the weights on ``b`` removed from ``g``."""
        A = np.array([inner_product(g, s, self.ctx) for s in self.psi])
        return A @ self.B_inv

    def apply(self, g: StatisticKernel) -> StatisticKernel:
        coef = self.coefficients(g)
        out = g
        for cj, bj in zip(coef, self.b_kernels):
            out = out - bj * cj
        out.name = f"Pi({g.name})"
        return out

    __call__ = apply

    def covariance(self, g: StatisticKernel) -> np.ndarray:
        """``C(x; Pi g) = C(x; g) - coef . C(x; b)`` per bin."""
        m = self.ctx.means
        coef = self.coefficients(g)
        Cb = np.array([c_function(b, m, self.ctx.truncation_tol) for b in self.b_kernels])
        return c_function(g, m, self.ctx.truncation_tol) - coef @ Cb

    def variance(self, g: StatisticKernel) -> float:
        """``||Pi g||^2`` expanded through Gram matrices."""
        coef = self.coefficients(g)
        gb = np.array([inner_product(g, b, self.ctx) for b in self.b_kernels])
        if self.bb is None:
            self.bb = gram(self.b_kernels, self.b_kernels, self.ctx)
        return float(norm2(g, self.ctx) - 2.0 * coef @ gb + coef @ self.bb @ coef)

    def variance_mle(self, g: StatisticKernel) -> float:
        """``||g||^2 - sum_j <g, s_j>^2``; equals :meth:`variance` for the MLE."""
        s = orthonormal_score(self.ctx)
        return float(norm2(g, self.ctx) - sum(inner_product(g, sj, self.ctx) ** 2 for sj in s))


def build_projector(spec: EstimatorSpec, ctx: MeasureContext) -> Projector:
    """Projector for estimating equations ``spec`` at the context's parameter."""
    psi = score_kernel(ctx)
    b = spec.kernels(ctx)
    B = gram(b, psi, ctx)
    if not np.all(np.isfinite(B)):
        raise RankError("<b, psi^T> is not finite")
    sv = np.linalg.svd(B, compute_uv=False)
    if sv.min() <= 1e-12 * max(sv.max(), 1e-300):
        raise RankError("<b, psi^T> is singular")
    return Projector(ctx, spec, b, psi, B, np.linalg.inv(B))


def gaussian_test(value: float, variance: float, sides: int = 2) -> float:
    """p-value of ``value`` under ``N(0, variance)``; ``sides=1`` is the upper tail."""
    if not variance > 0:
        raise DegenerateVariance("variance must be positive")
    zs = value / np.sqrt(variance)
    if sides == 2:
        return float(2.0 * stats.norm.sf(abs(zs)))
    if sides == 1:
        return float(stats.norm.sf(zs))
    raise ValueError("sides must be 1 or 2")


def _c_of(ctx, g, projector):
    if projector is None:
        return c_function(g, ctx.means, ctx.truncation_tol)
    return projector.covariance(g)


def shift(g: StatisticKernel, alt: AltSpec, ctx: MeasureContext, estimated: bool = False,
          spec: EstimatorSpec | None = None, use_hhat: bool = False) -> float:
    """Limiting mean of the statistic under the alternative.

    ``(1/sqrt(c)) (1/K) sum_k C(x_k; G) h(x_k)`` with ``G = Pi g`` when the
    parameter is estimated and ``G = g`` otherwise. ``use_hhat`` swaps ``h``
    for its binned projection off the tangent directions; for the MLE both
    give the same number.
    """
    model, grid = ctx.model, ctx.grid
    proj = build_projector(spec or EstimatorSpec("mle"), ctx) if estimated else None
    C = _c_of(ctx, g, proj)
    h = alt(grid.centers)
    if use_hhat:
        h = hhat_on_grid(h, model, grid)
    c = float(ctx.means.sum() / ctx.K)
    return float(np.mean(C * h) / np.sqrt(c))


def statistic_sd(g: StatisticKernel, ctx: MeasureContext, estimated: bool = False,
                 spec: EstimatorSpec | None = None) -> float:
    """Null standard deviation ``||g||`` or ``||Pi g||``."""
    if not estimated:
        return float(np.sqrt(norm2(g, ctx)))
    return float(np.sqrt(build_projector(spec or EstimatorSpec("mle"), ctx).variance(g)))


def no_power_check(g: StatisticKernel, ctx: MeasureContext, spec: EstimatorSpec | None = None,
                   tol: float = 1e-9) -> bool:
    """True iff ``C(x; Pi g)`` vanishes at every bin, so no direction shifts the statistic."""
    proj = build_projector(spec or EstimatorSpec("mle"), ctx)
    return bool(np.max(np.abs(proj.covariance(g))) < tol)


def projected_linear(g: LinearKernel, proj: Projector) -> LinearKernel:
    """``Pi g`` for a linear kernel and MLE projector, kept in linear form."""
    coef = proj.coefficients(g)
    w = g.coef(proj.ctx.means) - sum(cj * b.coef(proj.ctx.means) for cj, b in zip(coef, proj.b_kernels))
    return LinearKernel(w, name=f"Pi({g.name})")
