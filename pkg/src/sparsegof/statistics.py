"""Catalogue of divisible-statistic kernels and the ``g = g_par + g_perp`` split.

Every kernel is a function of ``(z, m)`` only, so the same object is
evaluated at the true parameter or at an estimate by passing different
bin means.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .measure import (
    DEFAULT_TOL,
    LinearKernel,
    MeasureContext,
    StatisticKernel,
    _grid_sum,
    c_function,
    poisson_cdf,
    poisson_pmf,
)


class KernelError(ValueError):
    """Unknown kernel name or invalid kernel parameter."""


# --------------------------------------------------------------------------- #
# E[nu ln nu] with a per-value cache
# --------------------------------------------------------------------------- #

_NULOGNU_CACHE: dict[float, float] = {}
_CACHE_LIMIT = 200_000


def expected_nu_log_nu(m, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``E[nu ln nu]`` for ``nu ~ Poisson(m)``, cached per distinct value of ``m``."""
    m = np.asarray(m, dtype=float)
    uniq, inv = np.unique(m, return_inverse=True)
    vals = np.empty(uniq.shape)
    missing = []
    for i, u in enumerate(uniq):
        hit = _NULOGNU_CACHE.get(float(u))
        if hit is None:
            missing.append(i)
        else:
            vals[i] = hit
    if missing:
        mm = uniq[missing]
        pos = mm > 0
        out = np.zeros(mm.shape)
        if np.any(pos):
            out[pos] = _grid_sum(lambda z, t: special.xlogy(z, z) + 0.0 * t, mm[pos], tol)
        vals[missing] = out
        if len(_NULOGNU_CACHE) + len(missing) > _CACHE_LIMIT:
            _NULOGNU_CACHE.clear()
        _NULOGNU_CACHE.update(zip(mm.tolist(), out.tolist()))
    return vals[inv].reshape(m.shape)


def clear_cache() -> None:
    _NULOGNU_CACHE.clear()


# --------------------------------------------------------------------------- #
# Catalogue
# --------------------------------------------------------------------------- #


def pearson() -> StatisticKernel:
    """Centered Pearson kernel ``(z - m)^2 / m - 1``."""
    return StatisticKernel(
        lambda z, m: (z - m) ** 2 / m - 1.0,
        name="pearson",
        known_C=lambda m: np.ones_like(m),
        known_sq=lambda m: 2.0 + 1.0 / m,
    )


def weighted_linear() -> LinearKernel:
    """``(z - m) / m``, the collinear part of Pearson."""
    return LinearKernel(lambda m: 1.0 / m, name="wlinear")


def linear() -> LinearKernel:
    return LinearKernel(lambda m: np.ones_like(m), name="linear")


def cash() -> StatisticKernel:
    """Centered Poisson likelihood-ratio kernel.

    ``z ln z - E[nu ln nu] - (z - m)(1 + ln m)``; summing it gives half the
    usual ``2 sum [z ln(z/m) - (z - m)]`` minus its null mean.
    """
    return StatisticKernel(
        lambda z, m: special.xlogy(z, z) - expected_nu_log_nu(m) - (z - m) * (1.0 + np.log(m)),
        name="cash",
    )


def spectral(q: int) -> StatisticKernel:
    """Cumulative spectral kernel ``1{z <= q} - P(q | m)``."""
    if int(q) != q or q < 0:
        raise KernelError("spectral q must be a nonnegative integer")
    q = int(q)

    def sq(m):
        P = poisson_cdf(q, m)
        return P * (1.0 - P)

    return StatisticKernel(
        lambda z, m: (z <= q).astype(float) - poisson_cdf(q, m),
        name=f"spectral:{q}",
        known_C=lambda m: -m * poisson_pmf(q, m),
        known_sq=sq,
    )


def empty_boxes() -> StatisticKernel:
    """``1{z = 0} - e^{-m}``; depends on the data only through occupancy."""

    def sq(m):
        p0 = np.exp(-m)
        return p0 * (1.0 - p0)

    return StatisticKernel(
        lambda z, m: (z == 0).astype(float) - np.exp(-m),
        name="empty",
        known_C=lambda m: -m * np.exp(-m),
        known_sq=sq,
    )


def spectral_parallel_shifted(q: int) -> LinearKernel:
    """``-p(q - 1 | m)(z - m)``: the collinear spectral statistic in its shifted-index form.

    The exact collinear part of ``spectral(q)`` has weight ``-p(q | m)``; this
    variant, whose weight is the one of ``1{z <= q - 1}``, is kept because
    published power figures for the spectral family were computed with it.
    """
    if int(q) != q or q < 1:
        raise KernelError("shifted spectral form needs an integer q >= 1")
    q = int(q)
    return LinearKernel(lambda m: -poisson_pmf(q - 1, m), name=f"spectral_par:{q}")


def custom(base: StatisticKernel, weight) -> StatisticKernel:
    """``omega(x) * g(x, z)`` for a per-bin weight array ``omega``."""
    return base * np.asarray(weight, dtype=float)


_FACTORIES = {
    "pearson": pearson,
    "wlinear": weighted_linear,
    "weighted_linear": weighted_linear,
    "linear": linear,
    "cash": cash,
    "empty": empty_boxes,
    "empty_boxes": empty_boxes,
}


def make_kernel(name: str, **params) -> StatisticKernel:
    """Kernel by catalogue name; ``spectral`` takes ``q``, ``custom`` takes ``base`` and ``weight``."""
    key = name.lower()
    if key in _FACTORIES:
        if params:
            raise KernelError(f"kernel {name!r} takes no parameters")
        return _FACTORIES[key]()
    if key == "spectral":
        if "q" not in params:
            raise KernelError("spectral kernel needs q")
        return spectral(params["q"])
    if key == "custom":
        base = params.get("base")
        if isinstance(base, str):
            base = parse_kernel(base)
        if base is None or "weight" not in params:
            raise KernelError("custom kernel needs base and weight")
        return custom(base, params["weight"])
    raise KernelError(f"unknown kernel {name!r}")


def parse_kernel(spec: str) -> StatisticKernel:
    """Kernel from a selection string.

    ``pearson | cash | linear | wlinear | empty | spectral:<q>`` select catalogue
    kernels; ``par:<kernel>`` takes the exact collinear part of another
    kernel and ``spectral_par:<q>`` the shifted-index collinear spectral form.
    """
    name, _, arg = spec.strip().partition(":")
    if name.lower() == "par":
        if not arg:
            raise KernelError("par: needs a kernel, e.g. par:pearson")
        return parallel_part(parse_kernel(arg))
    if name.lower() in ("spectral_par", "spectral-par"):
        try:
            return spectral_parallel_shifted(float(arg))
        except ValueError:
            raise KernelError(f"bad spectral parameter in {spec!r}") from None
    if name.lower() == "spectral":
        try:
            q = float(arg)
        except ValueError:
            raise KernelError(f"bad spectral parameter in {spec!r}") from None
        return spectral(q)
    if name.lower() == "custom":
        raise KernelError("custom kernels need a weight vector; build them in code or config")
    if arg:
        raise KernelError(f"kernel {name!r} takes no parameter")
    return make_kernel(name)


# --------------------------------------------------------------------------- #
# Decomposition
# --------------------------------------------------------------------------- #


def covariance(kernel: StatisticKernel, m, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``C(x; g)`` at the given bin means."""
    return c_function(kernel, m, tol)


def parallel_part(kernel: StatisticKernel, tol: float = DEFAULT_TOL) -> LinearKernel:
    """``g_par = (C(x; g) / m) (z - m)`` as a function of the bin means."""
    if isinstance(kernel, LinearKernel):
        return kernel
    return LinearKernel(lambda m: c_function(kernel, m, tol) / m, name=f"{kernel.name}_par")


def decompose(kernel: StatisticKernel, ctx: MeasureContext | None = None):
    """Split ``g`` into the part collinear with ``z - m`` and its orthogonal rest.

    Returns ``(g_par, g_perp)``. The sign of ``C`` is kept, so
    ``g = g_par + g_perp`` holds exactly.
    """
    tol = ctx.truncation_tol if ctx is not None else DEFAULT_TOL
    g_par = parallel_part(kernel, tol)
    if isinstance(kernel, LinearKernel):
        g_perp = LinearKernel(lambda m: np.zeros_like(m), name=f"{kernel.name}_perp")
    else:
        g_perp = kernel - g_par
        g_perp.name = f"{kernel.name}_perp"
        g_perp.known_C = lambda m: np.zeros_like(np.asarray(m, dtype=float))
        if kernel.known_sq is not None and kernel.known_C is not None:
            ks, kc = kernel.known_sq, kernel.known_C
            g_perp.known_sq = lambda m: ks(m) - kc(m) ** 2 / m
    return g_par, g_perp


def is_c_homogeneous(kernel: StatisticKernel, ctx: MeasureContext, tol: float = 1e-9) -> bool:
    """True iff ``C(x; g)`` is constant across bins."""
    C = c_function(kernel, ctx.means, ctx.truncation_tol)
    return bool(np.max(np.abs(C - C.flat[0])) < tol)
