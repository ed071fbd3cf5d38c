"""Poisson kernel numerics and the geometry of the binned Hilbert space.

Kernels are evaluated as ``g(z, m)`` with numpy broadcasting. The bin
index always lives on the *last* axis, so a per-bin weight vector of
length ``K`` multiplies cleanly against a ``(Z, K)`` evaluation grid or a
``(R, K)`` batch of Monte Carlo counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

DEFAULT_TOL = 1e-14


class NumericError(ArithmeticError):
    """A kernel or sum produced a non-finite value."""


# --------------------------------------------------------------------------- #
# Grid and data
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Grid:
    """Equal-volume partition of the interval ``[low, high]`` into ``K`` bins."""

    low: float
    high: float
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if not self.high > self.low:
            raise ValueError("domain must have positive length")

    @property
    def volume(self) -> float:
        return self.high - self.low

    @property
    def delta(self) -> float:
        return self.volume / self.K

    @property
    def edges(self) -> np.ndarray:
        e = self.low + self.delta * np.arange(self.K + 1)
        e[-1] = self.high
        return e

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])


@dataclass(frozen=True)
class BinnedCounts:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("counts must be nonnegative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    def __len__(self):
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


# --------------------------------------------------------------------------- #
# Poisson primitives
# --------------------------------------------------------------------------- #


def poisson_pmf(z, t):
    """Poisson probability ``e^{-t} t^z / z!`` computed in log space.

    Negative ``z`` gives 0; ``t == 0`` puts all mass at ``z == 0``.
    """
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Poisson rate must be nonnegative")
    zz = np.maximum(z, 0.0)
    with np.errstate(divide="ignore"):
        logp = special.xlogy(zz, t) - t - special.gammaln(zz + 1.0)
    out = np.exp(logp)
    out = np.where(z < 0, 0.0, out)
    return out[()] if out.ndim == 0 else out


def poisson_cdf(q, t):
    """``P(q | t) = sum_{z <= q} p(z | t)`` via the regularized gamma function."""
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Poisson rate must be nonnegative")
    qf = np.floor(q)
    out = np.where(qf < 0, 0.0, special.pdtr(np.maximum(qf, 0.0), t))
    return out[()] if out.ndim == 0 else out


def _support_limit(m_max: float, tol: float) -> int:
    """Smallest z whose upper tail under Poisson(m_max) is below ``tol``."""
    z = int(m_max + 10.0 * np.sqrt(m_max) + 20)
    while special.pdtrc(z, m_max) > tol:
        z = int(z * 1.5) + 1
    return z


# --------------------------------------------------------------------------- #
# Kernels
# --------------------------------------------------------------------------- #


def _combine(fa, fb, op):
    if fa is None or fb is None:
        return None
    return lambda m: op(fa(m), fb(m))


class StatisticKernel:
    """A function ``g(z, m)`` defining a divisible statistic.

    ``known_C`` optionally maps bin means to the covariance function
    ``C(x; g) = E[g(x, nu) (nu - m)]``; ``known_sq`` maps them to ``E[g^2]``.
    Sums, differences and per-bin rescalings return new kernels, with the
    closed-form ``C`` carried along whenever every operand provides one.
    """

    def __init__(self, func: Callable, name: str = "custom", known_C=None,
                 known_sq=None, centered: bool = True):
        self.func = func
        self.name = name
        self.known_C = known_C
        self.known_sq = known_sq
        self.centered = centered

    def __call__(self, z, m):
        return self.func(np.asarray(z, dtype=float), np.asarray(m, dtype=float))

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"

    # algebra ------------------------------------------------------------- #
    def __add__(self, other: StatisticKernel) -> StatisticKernel:
        if not isinstance(other, StatisticKernel):
            return NotImplemented
        fa, fb = self.func, other.func
        return StatisticKernel(
            lambda z, m: fa(z, m) + fb(z, m),
            name=f"({self.name}+{other.name})",
            known_C=_combine(self.known_C, other.known_C, np.add),
            centered=self.centered and other.centered,
        )

    def __neg__(self) -> StatisticKernel:
        return self * -1.0

    def __sub__(self, other: StatisticKernel) -> StatisticKernel:
        if not isinstance(other, StatisticKernel):
            return NotImplemented
        return self + (-other)

    def __mul__(self, w) -> StatisticKernel:
        w = np.asarray(w, dtype=float)
        f = self.func
        kc = self.known_C
        ks = self.known_sq
        return StatisticKernel(
            lambda z, m: w * f(z, m),
            name=self.name if w.ndim else f"{float(w):g}*{self.name}",
            known_C=None if kc is None else (lambda m: w * kc(m)),
            known_sq=None if ks is None else (lambda m: w * w * ks(m)),
            centered=self.centered,
        )

    __rmul__ = __mul__

    def restrict(self, mask) -> StatisticKernel:
        """Multiply by the indicator of a set of bins."""
        return self * np.asarray(mask, dtype=float)


class LinearKernel(StatisticKernel):
    """Weighted linear kernel ``w(x) (z - m)``.

    The weight is either a fixed per-bin array or a function of the bin
    means, so the kernel can be re-evaluated at an estimated parameter.
    Closed under the algebra, and inner products between two linear kernels
    reduce to ``(1/K) sum_k w_k w'_k m_k`` with no Poisson summation.
    """

    def __init__(self, coef, name: str = "linear"):
        if callable(coef):
            wfun = coef
        else:
            arr = np.asarray(coef, dtype=float)
            wfun = lambda m: arr  # noqa: E731
        self.weight = wfun
        super().__init__(
            lambda z, m: wfun(m) * (z - m),
            name=name,
            known_C=lambda m: wfun(m) * m,
            known_sq=lambda m: wfun(m) ** 2 * m,
            centered=True,
        )

    def coef(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        return np.broadcast_to(self.weight(m), m.shape)

    def __add__(self, other):
        if isinstance(other, LinearKernel):
            fa, fb = self.weight, other.weight
            return LinearKernel(lambda m: fa(m) + fb(m), name=f"({self.name}+{other.name})")
        return super().__add__(other)

    def __mul__(self, w):
        w = np.asarray(w, dtype=float)
        f = self.weight
        return LinearKernel(lambda m: w * f(m), name=self.name)

    __rmul__ = __mul__


def zero_kernel() -> LinearKernel:
    return LinearKernel(0.0, name="zero")


# --------------------------------------------------------------------------- #
# Expectations
# --------------------------------------------------------------------------- #


def _grid_sum(func, m, tol):
    """Sum ``func(z, m) p(z|m)`` over z with the two-part stopping rule.

    Summation runs until the omitted Poisson mass is below ``tol`` and the
    last term is below ``tol`` times the accumulated absolute sum; the grid
    is extended until both hold in every bin.
    """
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise ValueError("bin means must be positive")
    zmax = _support_limit(float(m.max()), tol)
    while True:
        z = np.arange(zmax + 1, dtype=float).reshape((-1,) + (1,) * m.ndim)
        pmf = poisson_pmf(z, m)
        vals = func(z, m)
        terms = vals * pmf
        if not np.all(np.isfinite(terms)):
            raise NumericError("kernel is not finite on the Poisson support")
        abs_sum = np.abs(terms).sum(axis=0)
        last = np.abs(terms[-1])
        if np.all(last <= tol * np.maximum(abs_sum, np.finfo(float).tiny)):
            return terms.sum(axis=0)
        zmax *= 2


def expect(kernel: StatisticKernel, m, power: int = 1, tol: float = DEFAULT_TOL):
    """``E[g(nu, m)^power]`` for ``nu ~ Poisson(m)``; ``power`` is 1 or 2."""
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    if power == 1:
        return _grid_sum(kernel, m, tol)
    return _grid_sum(lambda z, mm: kernel(z, mm) ** 2, m, tol)


def c_function(kernel: StatisticKernel, m, tol: float = DEFAULT_TOL, use_known: bool = True):
    """Covariance function ``C(x; g) = E[g(x, nu)(nu - m)]`` per bin."""
    m = np.asarray(m, dtype=float)
    if use_known and kernel.known_C is not None:
        return np.broadcast_to(kernel.known_C(m), m.shape).astype(float)
    return _grid_sum(lambda z, mm: kernel(z, mm) * (z - mm), m, tol)


def second_moment(kernel: StatisticKernel, m, tol: float = DEFAULT_TOL):
    """``E[g^2]`` per bin, from ``known_sq`` when available."""
    m = np.asarray(m, dtype=float)
    if kernel.known_sq is not None:
        return np.broadcast_to(kernel.known_sq(m), m.shape).astype(float)
    return expect(kernel, m, power=2, tol=tol)


# --------------------------------------------------------------------------- #
# Context and inner products
# --------------------------------------------------------------------------- #


@dataclass
class MeasureContext:
    """Bin means (and their parameter derivatives) at a fixed parameter value.

    ``means`` has shape ``(K,)``; ``dmeans`` has shape ``(p, K)``.
    """

    means: np.ndarray
    dmeans: np.ndarray | None = None
    truncation_tol: float = DEFAULT_TOL
    model: object = None
    grid: Grid | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        if np.any(self.means <= 0):
            raise ValueError("all bin means must be positive")
        if self.dmeans is not None:
            self.dmeans = np.atleast_2d(np.asarray(self.dmeans, dtype=float))

    @classmethod
    def from_model(cls, model, grid: Grid, truncation_tol: float = DEFAULT_TOL):
        return cls(model.bin_means(grid), model.dm_dtheta(grid),
                   truncation_tol=truncation_tol, model=model, grid=grid)

    @property
    def K(self) -> int:
        return self.means.shape[-1]

    @property
    def p(self) -> int:
        return 0 if self.dmeans is None else self.dmeans.shape[0]


def inner_product(a: StatisticKernel, b: StatisticKernel, ctx: MeasureContext) -> float:
    """``<a, b> = (1/K) sum_k E[a(x_k, nu) b(x_k, nu)]`` under the bin means."""
    m = ctx.means
    if isinstance(a, LinearKernel) and isinstance(b, LinearKernel):
        per_bin = a.coef(m) * b.coef(m) * m
    elif isinstance(b, LinearKernel) and a.known_C is not None:
        per_bin = b.coef(m) * a.known_C(m)
    elif isinstance(a, LinearKernel) and b.known_C is not None:
        per_bin = a.coef(m) * b.known_C(m)
    else:
        per_bin = _grid_sum(lambda z, mm: a(z, mm) * b(z, mm), m, ctx.truncation_tol)
    return float(np.mean(per_bin))


def norm2(g: StatisticKernel, ctx: MeasureContext) -> float:
    return inner_product(g, g, ctx)


def gram(a: list[StatisticKernel], b: list[StatisticKernel], ctx: MeasureContext) -> np.ndarray:
    """Matrix of inner products ``<a_i, b_j>``."""
    return np.array([[inner_product(ai, bj, ctx) for bj in b] for ai in a])


def evaluate_statistic(kernel: StatisticKernel, counts, means) -> np.ndarray:
    """Divisible statistic ``K^{-1/2} sum_k g(nu_k, m_k)``.

    ``counts`` may be a single vector ``(K,)`` or a batch ``(R, K)``.
    """
    if isinstance(counts, BinnedCounts):
        counts = counts.counts
    if isinstance(means, MeasureContext):
        means = means.means
    counts = np.asarray(counts, dtype=float)
    vals = kernel(counts, means)
    if not np.all(np.isfinite(vals)):
        raise NumericError("kernel is not finite at an observed count")
    K = counts.shape[-1]
    out = vals.sum(axis=-1) / np.sqrt(K)
    return float(out) if np.ndim(out) == 0 else out
