"""Score functions, estimating equations and their batched Newton solver.

An estimating equation is ``v_{theta,K}(b_theta) = 0`` with ``b`` a
p-vector of centered kernels. The solver uses the expected Jacobian
``-sqrt(K) <b, psi^T>``, which needs only ``C(x; b_j)`` per bin, and runs on
a whole batch of count vectors at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .measure import (
    BinnedCounts,
    Grid,
    LinearKernel,
    MeasureContext,
    StatisticKernel,
    c_function,
    second_moment,
)
from .statistics import parse_kernel


class RankError(np.linalg.LinAlgError):
    """A Gram matrix or Jacobian is singular."""


class DegenerateKernel(ValueError):
    """A kernel has zero variance in some bin."""


def inv_sqrtm(A: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Inverse symmetric square root via eigendecomposition."""
    A = np.asarray(A, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    if vals.min() < floor:
        raise RankError(f"matrix is not positive definite (smallest eigenvalue {vals.min():.3g})")
    return (vecs / np.sqrt(vals)) @ vecs.T


# --------------------------------------------------------------------------- #
# Kernels at a fixed parameter
# --------------------------------------------------------------------------- #


def score_kernel(ctx: MeasureContext) -> list[LinearKernel]:
    """``psi_j = (mdot_j / m)(z - m)`` at the context's parameter."""
    return [LinearKernel(d / ctx.means, name=f"psi{j}") for j, d in enumerate(ctx.dmeans)]


def least_squares_kernel(ctx: MeasureContext) -> list[LinearKernel]:
    """``b_j = -2 mdot_j (z - m)``, the gradient of the squared-error loss."""
    return [LinearKernel(-2.0 * d, name=f"ls{j}") for j, d in enumerate(ctx.dmeans)]


def fisher_information(ctx: MeasureContext) -> np.ndarray:
    """``<psi, psi^T> = (1/K) sum_k mdot mdot^T / m``."""
    q = ctx.dmeans / ctx.means
    return (q * ctx.means) @ q.T / ctx.K


def orthonormal_score(ctx: MeasureContext) -> list[LinearKernel]:
    """``s = <psi, psi^T>^{-1/2} psi`` with ``<s, s^T> = I``."""
    W = inv_sqrtm(fisher_information(ctx))
    coef = W @ (ctx.dmeans / ctx.means)
    return [LinearKernel(c, name=f"s{j}") for j, c in enumerate(coef)]


def gamma_weight(g: StatisticKernel, m, dm) -> np.ndarray:
    """``gamma_j = E[g psi_j] / E[g^2] = (mdot_j / m) C(x; g) / E[g^2]``."""
    m = np.asarray(m, dtype=float)
    C = c_function(g, m)
    sq = second_moment(g, m)
    if np.any(sq <= 0):
        raise DegenerateKernel(f"{g.name} has zero variance in some bin")
    return np.asarray(dm) / m[..., None, :] * (C / sq)[..., None, :]


def optimal_gamma(g: StatisticKernel, ctx: MeasureContext) -> list[StatisticKernel]:
    """The weighted kernels ``gamma_j g`` minimizing estimator variance within ``omega g``."""
    gam = gamma_weight(g, ctx.means, ctx.dmeans)
    return [g * gj for gj in gam]


# --------------------------------------------------------------------------- #
# Estimator specification
# --------------------------------------------------------------------------- #


@dataclass
class EstimatorSpec:
    """Which estimating equation to solve.

    ``method`` is ``mle``, ``ls``, ``weighted`` (``b = omega g`` with
    ``omega = mdot`` unless ``weight`` is given) or ``gamma``
    (``b = gamma g``). ``base`` is the kernel ``g`` for the last two.
    """

    method: str = "mle"
    base: StatisticKernel | None = None
    weight: Callable | None = None

    def __post_init__(self):
        if self.method not in ("mle", "ls", "weighted", "gamma"):
            raise ValueError(f"unknown estimator {self.method!r}")
        if self.method in ("weighted", "gamma") and self.base is None:
            raise ValueError(f"{self.method} estimator needs a base kernel")

    @property
    def name(self) -> str:
        return self.method if self.base is None else f"{self.method}:{self.base.name}"

    def _omega(self, m, dm):
        if self.method == "weighted":
            return np.asarray(self.weight(m, dm)) if self.weight is not None else np.asarray(dm)
        return gamma_weight(self.base, m, dm)

    def b_values(self, z, m, dm) -> np.ndarray:
        """``b(x_k, z_k)`` with shape ``(..., p, K)``."""
        z = np.asarray(z, dtype=float)[..., None, :]
        mm = np.asarray(m)[..., None, :]
        if self.method == "mle":
            return dm / mm * (z - mm)
        if self.method == "ls":
            return -2.0 * dm * (z - mm)
        return self._omega(m, dm) * self.base(z, mm)

    def b_cov(self, m, dm) -> np.ndarray:
        """``C(x; b_j)`` per bin, shape ``(..., p, K)``."""
        mm = np.asarray(m)[..., None, :]
        if self.method == "mle":
            return np.asarray(dm, dtype=float)
        if self.method == "ls":
            return -2.0 * dm * mm
        return self._omega(m, dm) * c_function(self.base, m)[..., None, :]

    def kernels(self, ctx: MeasureContext) -> list[StatisticKernel]:
        """The ``b_j`` as kernels frozen at the context's parameter."""
        if self.method == "mle":
            return score_kernel(ctx)
        if self.method == "ls":
            return least_squares_kernel(ctx)
        om = self._omega(ctx.means, ctx.dmeans)
        return [self.base * w for w in om]


def parse_estimator(spec: str) -> EstimatorSpec:
    """``mle | ls | gamma:<kernel>``."""
    name, _, arg = spec.strip().partition(":")
    name = name.lower()
    if name == "mle" and not arg:
        return EstimatorSpec("mle")
    if name in ("ls", "least_squares") and not arg:
        return EstimatorSpec("ls")
    if name == "gamma" and arg:
        return EstimatorSpec("gamma", base=parse_kernel(arg))
    if name == "weighted" and arg:
        return EstimatorSpec("weighted", base=parse_kernel(arg))
    raise ValueError(f"unknown estimator {spec!r}")


# --------------------------------------------------------------------------- #
# Solver
# --------------------------------------------------------------------------- #


@dataclass
class FitResult:
    theta_hat: np.ndarray
    iterations: int
    converged: bool
    residual: float
    gram: dict = field(default_factory=dict)


def _equations(spec, model, grid, counts, theta):
    m, dm = model.batch_means(theta, grid)
    K = grid.K
    F = spec.b_values(counts, m, dm).sum(axis=-1) / np.sqrt(K)
    return F, m, dm


def fit_batch(spec: EstimatorSpec, model, counts, grid: Grid, init, tol: float = 1e-10,
              max_iter: int = 50):
    """Solve the estimating equations for every row of ``counts``.

    Returns ``(theta_hat (R, p), converged (R,), iterations (R,))``.
    Fisher scoring with step halving: a step is halved while it leaves the
    admissible region or increases ``max|F|``.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    R, K = counts.shape
    theta = np.broadcast_to(np.asarray(init, dtype=float), (R, model.p)).copy()
    bad0 = ~model.admissible(theta)
    if np.any(bad0):
        raise ValueError("initial parameter outside the admissible region")
    converged = np.zeros(R, bool)
    iters = np.zeros(R, int)
    active = np.arange(R)
    with np.errstate(all="ignore"):
        F, m, dm = _equations(spec, model, grid, counts, theta)
        fnorm = np.max(np.abs(F), axis=-1)
        for it in range(max_iter + 1):
            done = fnorm[active] < tol
            converged[active[done]] = True
            iters[active[done]] = it
            active = active[~done]
            if active.size == 0 or it == max_iter:
                break
            a = active
            if spec.method in ("mle", "ls"):
                J = -(spec.b_cov(m[a], dm[a])[:, :, None, :] * (dm[a] / m[a][:, None, :])[:, None, :, :]
                      ).sum(axis=-1) / np.sqrt(K)
            else:
                J = _fd_jacobian(spec, model, grid, counts[a], theta[a])
            ok = np.isfinite(J).all(axis=(1, 2)) & (np.abs(np.linalg.det(J)) > 1e-300)
            step = np.zeros((a.size, model.p))
            if np.any(ok):
                step[ok] = -np.linalg.solve(J[ok], F[a][ok][..., None])[..., 0]
            pending = ok.copy()
            new_theta = theta[a].copy()
            new_F = F[a].copy()
            new_m, new_dm = m[a].copy(), dm[a].copy()
            scale = 1.0
            for _ in range(60):
                if not np.any(pending):
                    break
                idx = np.flatnonzero(pending)
                cand = theta[a][idx] + scale * step[idx]
                adm = model.admissible(cand)
                Fc = np.full((idx.size, model.p), np.inf)
                mc = np.ones((idx.size, K))
                dmc = np.zeros((idx.size, model.p, K))
                if np.any(adm):
                    Fa, ma, dma = _equations(spec, model, grid, counts[a][idx][adm], cand[adm])
                    pos = np.all(ma > 0, axis=-1) & np.all(np.isfinite(Fa), axis=-1)
                    Fa[~pos] = np.inf
                    Fc[adm], mc[adm], dmc[adm] = Fa, ma, dma
                accept = np.max(np.abs(Fc), axis=-1) < fnorm[a][idx]
                # near the root, rounding can stall the strict decrease
                accept |= np.isfinite(Fc).all(axis=-1) & (np.max(np.abs(Fc), axis=-1) < tol)
                ai = idx[accept]
                new_theta[ai], new_F[ai] = cand[accept], Fc[accept]
                new_m[ai], new_dm[ai] = mc[accept], dmc[accept]
                pending[ai] = False
                scale *= 0.5
            # replicates whose step could not be accepted are stuck
            stuck = ~(ok & ~pending)
            theta[a], F[a], m[a], dm[a] = new_theta, new_F, new_m, new_dm
            fnorm[a] = np.max(np.abs(new_F), axis=-1)
            if np.any(stuck):
                iters[a[stuck]] = it + 1
                active = a[~stuck]
    iters[active] = max_iter
    return theta, converged, iters


def _fd_jacobian(spec, model, grid, counts, theta):
    """Central-difference Jacobian of the estimating equations, shape ``(R, p, p)``."""
    R, p = theta.shape
    J = np.empty((R, p, p))
    for j in range(p):
        h = 1e-6 * np.maximum(1.0, np.abs(theta[:, j]))
        tp, tm = theta.copy(), theta.copy()
        tp[:, j] += h
        tm[:, j] -= h
        Fp = _equations(spec, model, grid, counts, tp)[0]
        Fm = _equations(spec, model, grid, counts, tm)[0]
        J[:, :, j] = (Fp - Fm) / (2.0 * h[:, None])
    return J


def _gram_at(spec, model, grid, theta):
    m, dm = model.batch_means(theta, grid)
    m, dm = m[0], dm[0]
    q = dm / m
    K = grid.K
    return {
        "b_psi": (spec.b_cov(m, dm) @ q.T) / K,
        "psi_psi": (q * m) @ q.T / K,
    }


def solve(spec: EstimatorSpec, data, grid: Grid, model, init=None, tol: float = 1e-10,
          max_iter: int = 50) -> FitResult:
    """Fit one data set; ``init`` defaults to the method-of-moments start."""
    counts = data.counts if isinstance(data, BinnedCounts) else np.asarray(data)
    if counts.sum() == 0:
        return FitResult(np.full(model.p, np.nan), 0, False, np.inf)
    if init is None:
        init = model.moment_init(counts, grid)
    theta, conv, it = fit_batch(spec, model, counts[None, :], grid, init, tol, max_iter)
    theta = theta[0]
    if not conv[0] and model.p == 2:
        theta = _bracket_fallback(spec, model, counts, grid, theta, tol)
    F = _equations(spec, model, grid, counts[None, :].astype(float), theta[None, :])[0][0]
    res = float(np.max(np.abs(F)))
    ok = res < max(tol, 1e-8)
    gram = _gram_at(spec, model, grid, theta) if ok else {}
    return FitResult(theta, int(it[0]), bool(ok), res, gram)


def _bracket_fallback(spec, model, counts, grid, theta, tol):
    """One shape parameter: profile out ``c`` and bisect on the beta equation."""
    counts = counts.astype(float)

    def profiled(beta):
        c = counts.mean()
        for _ in range(50):
            th = np.array([[c, beta]])
            F, m, dm = _equations(spec, model, grid, counts[None, :], th)
            Jcc = -(spec.b_cov(m, dm)[0, 0] * dm[0, 0] / m[0]).sum() / np.sqrt(grid.K)
            c_new = c - F[0, 0] / Jcc
            if abs(c_new - c) < 1e-14 * c:
                c = c_new
                break
            c = max(c_new, 1e-12)
        return F[0, 1], c

    from .models import _bracket
    lo, hi = _bracket(model.family, float(np.nan_to_num(theta[1], nan=model.family.default_beta()[0])))
    grid_b = np.linspace(lo, hi, 81)
    vals = []
    for b in grid_b:
        try:
            vals.append(profiled(b)[0] if model.admissible(np.array([1.0, b])) else np.nan)
        except (ValueError, FloatingPointError):
            vals.append(np.nan)
    vals = np.array(vals)
    for i in range(len(grid_b) - 1):
        if np.isfinite(vals[i]) and np.isfinite(vals[i + 1]) and vals[i] * vals[i + 1] <= 0:
            b = optimize.brentq(lambda x: profiled(x)[0], grid_b[i], grid_b[i + 1], xtol=1e-13)
            return np.array([profiled(b)[1], b])
    return theta
