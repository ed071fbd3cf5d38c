"""Asymptotically distribution-free partial-sum tests.

The standardized partial sums ``l_t = 1_{A_t} (z - m)/sqrt(m)`` are first
projected off a fixed orthonormal block basis ``r`` and then mapped by a
unitary chain ``U_p`` that carries ``r_j`` into the orthonormalized score
``s_j``. The result is orthogonal to the score, so estimating the parameter
does not change its law, and its limit is ``p`` independent rescaled
Brownian bridges whatever the model.

All kernels involved are linear, ``w(x)(z - m)``. In the standardized
coordinates ``f_k = w_k sqrt(m_k)`` the inner product is ``f . g / K`` and
``v(f) = K^{-1/2} f . eps`` with ``eps = (z - m)/sqrt(m)``. The batched path
keeps every transformed ``l_t`` as ``l_t + c_t . D`` with ``D = [r; s]``,
so the whole process costs ``O(K p^2)`` per replicate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import EstimatorSpec, fit_batch, inv_sqrtm
from .measure import Grid, LinearKernel, MeasureContext, StatisticKernel, inner_product
from .parallel import run_blocks


# --------------------------------------------------------------------------- #
# Kolmogorov distribution
# --------------------------------------------------------------------------- #


def kolmogorov_cdf(y, tol: float = 1e-12) -> np.ndarray:
    """CDF of ``sup |B(t)|`` for a standard Brownian bridge.

    Uses ``1 - 2 sum (-1)^{k-1} exp(-2 k^2 y^2)`` for ``y >= 1`` and the
    Jacobi-dual ``sqrt(2 pi)/y sum exp(-(2k-1)^2 pi^2 / (8 y^2))`` below;
    each series stops once a term falls below ``tol``.
    """
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape)
    big = y >= 1.0
    if np.any(big):
        yb = y[big]
        acc = np.zeros(yb.shape)
        k = 1
        while True:
            term = np.exp(-2.0 * k * k * yb * yb)
            acc += (-1) ** (k - 1) * term
            if np.all(term < tol):
                break
            k += 1
        out[big] = 1.0 - 2.0 * acc
    small = (y > 0) & ~big
    if np.any(small):
        ys = y[small]
        acc = np.zeros(ys.shape)
        k = 1
        while True:
            term = np.exp(-((2 * k - 1) ** 2) * np.pi**2 / (8.0 * ys * ys))
            acc += term
            if np.all(np.sqrt(2.0 * np.pi) / ys * term < tol):
                break
            k += 1
        out[small] = np.sqrt(2.0 * np.pi) / ys * acc
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def limit_cdf(y, p: int, K: int | None = None) -> np.ndarray:
    """``[Kolmogorov(sqrt(p) (y + 0.6/sqrt(K)))]^p``; ``K=None`` drops the correction."""
    y = np.asarray(y, dtype=float)
    yy = y + (0.0 if K is None else 0.6 / np.sqrt(K))
    out = np.where(y < 0, 0.0, kolmogorov_cdf(np.sqrt(p) * np.maximum(yy, 0.0)) ** p)
    return out[()] if out.ndim == 0 else out


def limit_pvalue(y: float, p: int, K: int | None = None) -> float:
    return float(1.0 - limit_cdf(y, p, K))


# --------------------------------------------------------------------------- #
# Kernel-level objects
# --------------------------------------------------------------------------- #


def block_edges(K: int, p: int) -> np.ndarray:
    """Block ``j`` holds scan positions ``floor(jK/p) .. floor((j+1)K/p) - 1``."""
    if not 1 <= p <= K:
        raise ValueError("need 1 <= p <= K")
    return (np.arange(p + 1) * K) // p


@dataclass
class RBasis:
    """Orthonormal block basis ``r_j = sqrt(K/|B_j|) 1_{B_j} (z - m)/sqrt(m)``.

    With ``K`` divisible by ``p`` the scale is ``sqrt(p)``; otherwise blocks
    differ in size by one bin and the scale keeps each ``r_j`` unit norm.
    """

    K: int
    p: int
    order: np.ndarray | None = None

    def __post_init__(self):
        self.order = np.arange(self.K) if self.order is None else np.asarray(self.order)
        self.edges = block_edges(self.K, self.p)

    def standardized(self) -> np.ndarray:
        """``(p, K)`` array of standardized coefficients in natural bin order."""
        R = np.zeros((self.p, self.K))
        for j in range(self.p):
            idx = self.order[self.edges[j]:self.edges[j + 1]]
            R[j, idx] = np.sqrt(self.K / idx.size)
        return R

    def kernels(self, means) -> list[LinearKernel]:
        sd = np.sqrt(np.asarray(means, dtype=float))
        return [LinearKernel(row / sd, name=f"r{j}") for j, row in enumerate(self.standardized())]

    @property
    def t_breaks(self) -> np.ndarray:
        return self.edges / self.K


def ell_kernel(j: int, means, order=None) -> LinearKernel:
    """``l_t`` for ``t = j/K``: standardized linear kernel on the first ``j`` scanned bins."""
    means = np.asarray(means, dtype=float)
    K = means.size
    order = np.arange(K) if order is None else np.asarray(order)
    w = np.zeros(K)
    w[order[:j]] = 1.0
    return LinearKernel(w / np.sqrt(means), name=f"l[{j}]")


def apply_uab(a: StatisticKernel, b: StatisticKernel, f: StatisticKernel, ctx: MeasureContext,
              tol: float = 1e-14) -> StatisticKernel:
    """``U_{a,b} f = f - <f, a - b>/(1 - <a, b>) (a - b)``; identity when ``<a, b> = 1``."""
    ab = inner_product(a, b, ctx)
    if abs(1.0 - ab) < tol:
        return f
    d = a - b
    coef = inner_product(f, d, ctx) / (1.0 - ab)
    return f - d * coef


@dataclass
class UnitaryChain:
    """``U_p = U_{a_p, s_p} ... U_{a_1, s_1}`` with ``a_1 = r_1``, ``a_j = U_{j-1} r_j``."""

    pairs: list
    ctx: MeasureContext

    @property
    def p(self) -> int:
        return len(self.pairs)

    def apply(self, f: StatisticKernel) -> StatisticKernel:
        for a, s in self.pairs:
            f = apply_uab(a, s, f, self.ctx)
        return f

    __call__ = apply


def build_chain(r: list[StatisticKernel], s: list[StatisticKernel], ctx: MeasureContext) -> UnitaryChain:
    if len(r) != len(s):
        raise ValueError("r and s must have the same length")
    pairs: list = []
    chain = UnitaryChain(pairs, ctx)
    for rj, sj in zip(r, s):
        pairs.append((chain.apply(rj), sj))
    return chain


def transformed_kernel(j: int, chain: UnitaryChain, r: list[StatisticKernel], means, order=None) -> StatisticKernel:
    """``U_p Pi_r l_t`` at ``t = j/K`` as a kernel."""
    ell = ell_kernel(j, means, order)
    f = ell
    for rj in r:
        f = f - rj * inner_product(ell, rj, chain.ctx)
    return chain.apply(f)


def variance_profile(j_values, r: RBasis) -> np.ndarray:
    """``||l_t||^2 - sum_j <l_t, r_j>^2`` for each scan index."""
    K = r.K
    R = r.standardized()[:, r.order]
    cs = np.concatenate([np.zeros((r.p, 1)), np.cumsum(R, axis=-1)], axis=-1) / K
    j = np.asarray(j_values)
    return j / K - (cs[:, j] ** 2).sum(axis=0)


# --------------------------------------------------------------------------- #
# Batched transformed process
# --------------------------------------------------------------------------- #


def _chain_coefficients(G, cum, p):
    """Coefficients ``c_t`` of ``U_p Pi_r l_t = l_t + c_t . D`` for all ``t``.

    ``G`` is the ``(n, 2p, 2p)`` Gram matrix of ``D = [r; s]`` and ``cum``
    the ``(n, T, 2p)`` inner products ``<l_t, D_i>``.
    """
    n, T, P = cum.shape
    eye = np.eye(P)
    # Pi_r l_t: subtract <l_t, r_j> r_j
    c = np.zeros((n, T, P))
    c[..., :p] = -cum[..., :p]
    # a_j in D coordinates, built up step by step
    a_list = []
    for j in range(p):
        aj = np.broadcast_to(eye[j], (n, P)).copy()
        for i, (ai, di, den) in enumerate(a_list):
            proj = np.einsum("np,npq,nq->n", aj, G, di)
            aj = aj - (proj / den)[:, None] * di
        sj = np.broadcast_to(eye[p + j], (n, P))
        d = aj - sj
        ab = np.einsum("np,npq,nq->n", aj, G, sj)
        den = 1.0 - ab
        ident = np.abs(den) < 1e-14
        d = np.where(ident[:, None], 0.0, d)
        den = np.where(ident, 1.0, den)
        a_list.append((aj, d, den))
    for aj, d, den in a_list:
        # <l_t + c_t D, d D> = cum . d + c_t G d
        Gd = np.einsum("npq,nq->np", G, d)
        inner = np.einsum("ntp,np->nt", cum, d) + np.einsum("ntp,np->nt", c, Gd)
        c = c - (inner / den[:, None])[..., None] * d[:, None, :]
    return c


def transformed_paths(eps, s_std, R_std, order):
    """``v(U_p Pi_r l_t)`` for ``t = 0, 1/K, ..., 1``.

    ``eps`` are standardized residuals ``(n, K)``, ``s_std`` the
    standardized score ``(n, p, K)`` and ``R_std`` the block basis ``(p, K)``.
    """
    n, K = eps.shape
    p = R_std.shape[0]
    D = np.concatenate([np.broadcast_to(R_std, (n, p, K)), s_std], axis=1)  # (n, 2p, K)
    G = np.einsum("npk,nqk->npq", D, D) / K
    Do = D[..., order]
    cum = np.concatenate([np.zeros((n, 2 * p, 1)), np.cumsum(Do, axis=-1)], axis=-1) / K
    cum = np.swapaxes(cum, 1, 2)  # (n, K+1, 2p)
    c = _chain_coefficients(G, cum, p)
    e_o = eps[:, order]
    lin = np.concatenate([np.zeros((n, 1)), np.cumsum(e_o, axis=-1)], axis=-1)
    De = np.einsum("npk,nk->np", D, eps)
    return (lin + np.einsum("ntp,np->nt", c, De)) / np.sqrt(K)


def _standardized_score(m, dm):
    """Rows of ``I^{-1/2} mdot/sqrt(m)`` for a batch ``m (n, K)``, ``dm (n, p, K)``."""
    K = m.shape[-1]
    q = dm / np.sqrt(m)[:, None, :]
    info = np.einsum("npk,nqk->npq", q, q) / K
    W = np.stack([inv_sqrtm(I) for I in info])
    return np.einsum("npq,nqk->npk", W, q)


def ks_star(process) -> np.ndarray:
    """``max_t |v(U_p Pi_r l_t)|``."""
    return np.max(np.abs(process), axis=-1)


def ks_bar(counts, m_hat, order=None) -> np.ndarray:
    """Untransformed ``max_t |v_{theta_hat}(l_t)|``, for comparison."""
    eps = (counts - m_hat) / np.sqrt(m_hat)
    if order is not None:
        eps = eps[..., order]
    return np.max(np.abs(np.cumsum(eps, axis=-1)), axis=-1) / np.sqrt(eps.shape[-1])


@dataclass
class DfreeResult:
    statistic: float
    pvalue: float
    p: int
    K: int
    theta_hat: np.ndarray
    process: np.ndarray


def transformed_process(counts, model_hat, grid: Grid, p: int | None = None, order=None) -> np.ndarray:
    """Transformed process at a fitted model for one count vector (length ``K + 1``)."""
    m, dm = model_hat.batch_means(model_hat.theta, grid)
    p = p or model_hat.p
    order = np.arange(grid.K) if order is None else np.asarray(order)
    R = RBasis(grid.K, p, order).standardized()
    if p != dm.shape[1]:
        raise ValueError("the block basis needs one block per estimated parameter")
    counts = np.asarray(counts, dtype=float)[None, :]
    eps = (counts - m) / np.sqrt(m)
    return transformed_paths(eps, _standardized_score(m, dm), R, order)[0]


def dfree_test(counts, model, grid: Grid, init=None, order=None) -> DfreeResult:
    """Fit by MLE and return ``KS*`` with its limit-law p-value."""
    from .estimation import solve

    fit = solve(EstimatorSpec("mle"), counts, grid, model, init=init)
    if not fit.converged:
        from .measure import NumericError

        raise NumericError("maximum-likelihood fit did not converge")
    mh = model.with_theta(fit.theta_hat)
    proc = transformed_process(counts, mh, grid, order=order)
    y = float(ks_star(proc))
    return DfreeResult(y, limit_pvalue(y, mh.p, grid.K), mh.p, grid.K, fit.theta_hat, proc)


def null_ks_star(model, grid: Grid, reps: int, seed: int, workers: int = 1, order=None,
                 untransformed: bool = False):
    """Null draws of ``KS*`` (or of the untransformed statistic) with MLE refits.

    Returns ``(statistics, failures)``.
    """
    m0 = model.bin_means(grid)
    K, p = grid.K, model.p
    order = np.arange(K) if order is None else np.asarray(order)
    R = RBasis(K, p, order).standardized()
    spec = EstimatorSpec("mle")

    def job(b, n, rng):
        z = rng.poisson(m0, (n, K)).astype(float)
        th, conv, _ = fit_batch(spec, model, z, grid, model.theta)
        out = np.full(n, np.nan)
        if np.any(conv):
            m, dm = model.batch_means(th[conv], grid)
            if untransformed:
                out[conv] = ks_bar(z[conv], m, order)
            else:
                eps = (z[conv] - m) / np.sqrt(m)
                out[conv] = ks_star(transformed_paths(eps, _standardized_score(m, dm), R, order))
        return (out,)

    (stats,) = run_blocks(job, reps, seed, workers)
    good = np.isfinite(stats)
    return stats[good], int((~good).sum())

