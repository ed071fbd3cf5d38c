"""Parametric mean models, per-bin expected counts and contiguous alternatives.

A model is ``m_theta(x_k) = c K * Lambda_beta(bin_k)`` with ``theta = (c, beta)``
and ``lambda_beta`` a density on ``[low, high]``. Each family supplies an
unnormalized density ``g(x; beta)``; most also supply its antiderivative so
bin masses are exact. Families without one fall back to 5-point
Gauss-Legendre per bin.

All family methods accept ``beta`` with shape ``(..., n_beta)`` and return
arrays whose last axis runs over the ``x`` values, so a batch of parameter
vectors is evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special

from .measure import BinnedCounts, Grid


class ModelError(ValueError):
    """Invalid model specification or parameter value."""


class AlternativeTooStrong(ModelError):
    """A perturbed bin mean became nonpositive."""


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def _col(beta, i):
    return np.asarray(beta, dtype=float)[..., i : i + 1]


def _expm1_over(u, L):
    """``expm1(u L) / u`` and its u-derivative, stable at ``u -> 0``."""
    small = np.abs(u) < 1e-7
    us = np.where(small, 1.0, u)
    val = np.where(small, L + 0.5 * u * L**2, np.expm1(us * L) / us)
    dval = np.where(
        small,
        L**2 / 2.0 + u * L**3 / 3.0,
        (L * np.exp(us * L) * us - np.expm1(us * L)) / us**2,
    )
    return val, dval


def _power_integral(x, a, beta):
    """``int_a^x t^{-beta} dt`` and its derivative in ``beta`` (x >= a > 0)."""
    u = 1.0 - beta
    L = np.log(x / a)
    e, de = _expm1_over(u, L)
    scale = a**u
    val = scale * e
    dval_du = np.log(a) * val + scale * de
    return val, -dval_du


# --------------------------------------------------------------------------- #
# Families
# --------------------------------------------------------------------------- #


class Family:
    """Base class for a shape family ``lambda_beta`` on ``[low, high]``."""

    name = "family"
    n_beta = 0
    beta_names: tuple = ()

    def __init__(self, low: float, high: float):
        if not high > low:
            raise ModelError("domain must have positive length")
        self.low = float(low)
        self.high = float(high)

    @property
    def length(self):
        return self.high - self.low

    def spec(self) -> str:
        return self.name

    # subclasses override -------------------------------------------------- #
    def density_unnorm(self, x, beta):
        raise NotImplementedError

    def ddensity_unnorm(self, x, beta):
        """List of ``n_beta`` arrays with the beta-derivatives of the density."""
        return []

    def antiderivative(self, x, beta):
        """``(G, [dG/dbeta_i])`` with ``G(low) = 0``, or ``None`` if unavailable."""
        return None

    def valid(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        return np.all(np.isfinite(beta), axis=-1) if self.n_beta else np.ones(beta.shape[:-1], bool)

    def default_beta(self) -> np.ndarray:
        return np.zeros(self.n_beta)

    def breakpoints(self) -> list[float]:
        return []

    # derived -------------------------------------------------------------- #
    def _quad_masses(self, edges, beta):
        # split any bin containing a kink so every panel is smooth
        pts = np.unique(np.concatenate([edges, [b for b in self.breakpoints()
                                                 if edges[0] < b < edges[-1]]]))
        a, b = pts[:-1], pts[1:]
        half = 0.5 * (b - a)
        x = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
        xf = x.ravel()
        g = self.density_unnorm(xf, beta)
        dg = self.ddensity_unnorm(xf, beta)
        wts = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        owner = np.searchsorted(edges, 0.5 * (a + b), side="right") - 1
        nb = len(edges) - 1

        def fold(vals):
            panel = (vals * wts).reshape(vals.shape[:-1] + x.shape).sum(axis=-1)
            out = np.zeros(vals.shape[:-1] + (nb,))
            for j in range(nb):
                out[..., j] = panel[..., owner == j].sum(axis=-1)
            return out

        return fold(g), [fold(d) for d in dg]

    def bin_masses(self, edges, beta, quadrature: bool = False):
        """Unnormalized bin integrals ``G_k`` and their beta-derivatives."""
        beta = np.asarray(beta, dtype=float)
        anti = None if quadrature else self.antiderivative(edges, beta)
        if anti is None:
            return self._quad_masses(edges, beta)
        G, dG = anti
        G = np.broadcast_to(G, beta.shape[:-1] + (len(edges),))
        return np.diff(G, axis=-1), [np.diff(np.broadcast_to(d, G.shape), axis=-1) for d in dG]

    def bin_weights(self, edges, beta, quadrature: bool = False):
        """Normalized bin probabilities ``w_k`` and ``dw_k / dbeta``.

        The normalizer is the sum of the bin masses, so the weights sum to
        one exactly whenever the bins partition the domain.
        """
        Gk, dGk = self.bin_masses(edges, beta, quadrature)
        Z = Gk.sum(axis=-1, keepdims=True)
        w = Gk / Z
        dw = [d / Z - Gk * d.sum(axis=-1, keepdims=True) / Z**2 for d in dGk]
        dw = np.stack(dw, axis=-2) if dw else np.zeros(w.shape[:-1] + (0, w.shape[-1]))
        return w, dw

    def normalizer(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        anti = self.antiderivative(np.array([self.low, self.high]), beta)
        if anti is not None:
            G = np.broadcast_to(anti[0], beta.shape[:-1] + (2,))
            return G[..., 1] - G[..., 0]
        pts = self.breakpoints()
        return integrate.quad(lambda t: float(self.density_unnorm(np.array([t]), beta)[..., 0]),
                              self.low, self.high, points=pts or None, limit=200)[0]

    def density(self, x, beta):
        """Normalized density ``lambda_beta(x)`` (scalar ``beta`` vector)."""
        x = np.asarray(x, dtype=float)
        return self.density_unnorm(np.atleast_1d(x), beta).reshape(x.shape) / self.normalizer(beta)

    def log_density_grad(self, x, beta):
        """``d/dbeta log lambda_beta(x)``, shape ``(n_beta,) + x.shape``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        beta = np.asarray(beta, dtype=float)
        g = self.density_unnorm(x, beta)
        dg = self.ddensity_unnorm(x, beta)
        Z = self.normalizer(beta)
        out = []
        for i, d in enumerate(dg):
            dZ = integrate.quad(
                lambda t: float(self.ddensity_unnorm(np.array([t]), beta)[i][..., 0]),
                self.low, self.high, points=self.breakpoints() or None, limit=200)[0]
            out.append(d / g - dZ / Z)
        return np.array(out).reshape((len(dg),) + x.shape)


class Constant(Family):
    name = "constant"

    def density_unnorm(self, x, beta):
        return np.ones(np.shape(beta)[:-1] + np.shape(x))

    def antiderivative(self, x, beta):
        return x - self.low, []


class Linear(Family):
    """``g(x) = 1 + beta * 2 (x - mid) / L``; positive iff ``|beta| < 1``."""

    name = "linear"
    n_beta = 1
    beta_names = ("slope",)

    def _s(self, x):
        return 2.0 * (x - 0.5 * (self.low + self.high)) / self.length

    def density_unnorm(self, x, beta):
        return 1.0 + _col(beta, 0) * self._s(x)

    def ddensity_unnorm(self, x, beta):
        return [np.broadcast_to(self._s(x), np.shape(beta)[:-1] + np.shape(x))]

    def antiderivative(self, x, beta):
        q = (self._s(x) ** 2 - 1.0) * self.length / 4.0
        return (x - self.low) + _col(beta, 0) * q, [np.broadcast_to(q, np.shape(beta)[:-1] + np.shape(x))]

    def valid(self, beta):
        return np.abs(np.asarray(beta)[..., 0]) < 1.0


class PiecewiseLinear(Family):
    """Linear below ``breakpoint``, constant above, continuous at the kink.

    ``g(x) = 1 + beta (x - xi) / L`` for ``x < xi`` and 1 otherwise.
    """

    name = "piecewise"
    n_beta = 1
    beta_names = ("slope",)

    def __init__(self, low, high, breakpoint: float):
        super().__init__(low, high)
        if not low < breakpoint < high:
            raise ModelError("breakpoint must lie inside the domain")
        self.xi = float(breakpoint)

    def spec(self):
        return f"piecewise:{self.xi:g}"

    def breakpoints(self):
        return [self.xi]

    def density_unnorm(self, x, beta):
        return 1.0 + _col(beta, 0) * np.minimum(x - self.xi, 0.0) / self.length

    def ddensity_unnorm(self, x, beta):
        return [np.broadcast_to(np.minimum(x - self.xi, 0.0) / self.length,
                                np.shape(beta)[:-1] + np.shape(x))]

    def antiderivative(self, x, beta):
        d = np.minimum(x, self.xi) - self.xi
        q = (d**2 - (self.low - self.xi) ** 2) / (2.0 * self.length)
        return (x - self.low) + _col(beta, 0) * q, [np.broadcast_to(q, np.shape(beta)[:-1] + np.shape(x))]

    def valid(self, beta):
        return 1.0 + np.asarray(beta)[..., 0] * (self.low - self.xi) / self.length > 0.0


class TruncatedExponential(Family):
    """Exponential with rate ``beta`` truncated to the domain."""

    name = "texp"
    n_beta = 1
    beta_names = ("rate",)

    def default_beta(self):
        return np.array([1.0])

    def density_unnorm(self, x, beta):
        return np.exp(-_col(beta, 0) * (x - self.low))

    def ddensity_unnorm(self, x, beta):
        return [-(x - self.low) * np.exp(-_col(beta, 0) * (x - self.low))]

    def antiderivative(self, x, beta):
        # int_low^x e^{-b(t-low)} dt = expm1(-b u)/(-b)
        u = x - self.low
        val, dval = _expm1_over(-_col(beta, 0), u)
        return val, [-dval]


class TruncatedNormal(Family):
    """Normal with mean ``beta[0]`` truncated to the domain.

    With ``sigma`` given the scale is fixed; otherwise ``beta[1]`` is the
    standard deviation and is estimated too.
    """

    name = "tnorm"

    def __init__(self, low, high, sigma: float | None = None):
        super().__init__(low, high)
        self.sigma = None if sigma is None else float(sigma)
        self.n_beta = 1 if sigma is not None else 2
        self.beta_names = ("mean",) if sigma is not None else ("mean", "sd")

    def spec(self):
        return "tnorm" if self.sigma is None else f"tnorm:{self.sigma**2:g}"

    def default_beta(self):
        mid = 0.5 * (self.low + self.high)
        return np.array([mid]) if self.sigma is not None else np.array([mid, self.length / 4])

    def _ms(self, beta):
        mu = _col(beta, 0)
        sd = self.sigma if self.sigma is not None else _col(beta, 1)
        return mu, sd

    def density_unnorm(self, x, beta):
        mu, sd = self._ms(beta)
        return np.exp(-0.5 * ((x - mu) / sd) ** 2) / sd

    def ddensity_unnorm(self, x, beta):
        mu, sd = self._ms(beta)
        u = (x - mu) / sd
        g = np.exp(-0.5 * u**2) / sd
        out = [g * u / sd]
        if self.sigma is None:
            out.append(g * (u**2 - 1.0) / sd)
        return out

    def antiderivative(self, x, beta):
        mu, sd = self._ms(beta)
        u = (x - mu) / sd
        phi = np.exp(-0.5 * u**2) / np.sqrt(2.0 * np.pi)
        G = np.sqrt(2.0 * np.pi) * special.ndtr(u)
        dG = [-np.sqrt(2.0 * np.pi) * phi / sd]
        if self.sigma is None:
            dG.append(-np.sqrt(2.0 * np.pi) * phi * u / sd)
        return G, dG

    def valid(self, beta):
        beta = np.asarray(beta, dtype=float)
        ok = np.isfinite(beta[..., 0])
        if self.sigma is None:
            ok &= beta[..., 1] > 0
        return ok


class PowerLaw(Family):
    """Truncated Pareto-I: ``lambda(x) ~ x^{-beta}`` on ``[low, high]``, ``low > 0``."""

    name = "powerlaw"
    n_beta = 1
    beta_names = ("slope",)

    def __init__(self, low, high):
        if low <= 0:
            raise ModelError("power-law domain must be positive")
        super().__init__(low, high)

    def default_beta(self):
        return np.array([2.0])

    def density_unnorm(self, x, beta):
        return np.exp(-_col(beta, 0) * np.log(x))

    def ddensity_unnorm(self, x, beta):
        return [-np.log(x) * np.exp(-_col(beta, 0) * np.log(x))]

    def antiderivative(self, x, beta):
        val, dval = _power_integral(x, self.low, _col(beta, 0))
        return val, [dval]


class BrokenPowerLaw(Family):
    """Continuous power law with slope ``beta[0]`` below ``xi`` and ``beta[1]`` above."""

    name = "bpl"
    n_beta = 2
    beta_names = ("slope_low", "slope_high")

    def __init__(self, low, high, cutpoint: float):
        if low <= 0:
            raise ModelError("power-law domain must be positive")
        super().__init__(low, high)
        if not low < cutpoint < high:
            raise ModelError("cutpoint must lie inside the domain")
        self.xi = float(cutpoint)

    def spec(self):
        return f"bpl:{self.xi:g}"

    def default_beta(self):
        return np.array([2.0, 2.0])

    def breakpoints(self):
        return [self.xi]

    def density_unnorm(self, x, beta):
        b1, b2 = _col(beta, 0), _col(beta, 1)
        lx, lxi = np.log(x), np.log(self.xi)
        return np.where(x < self.xi, np.exp(-b1 * lx), np.exp((b2 - b1) * lxi - b2 * lx))

    def ddensity_unnorm(self, x, beta):
        g = self.density_unnorm(x, beta)
        lx, lxi = np.log(x), np.log(self.xi)
        below = x < self.xi
        return [np.where(below, -lx, -lxi) * g, np.where(below, 0.0, lxi - lx) * g]

    def antiderivative(self, x, beta):
        b1, b2 = _col(beta, 0), _col(beta, 1)
        lo_part, dlo = _power_integral(np.minimum(x, self.xi), self.low, b1)
        hi_int, dhi = _power_integral(np.maximum(x, self.xi), self.xi, b2)
        scale = np.exp((b2 - b1) * np.log(self.xi))
        lxi = np.log(self.xi)
        G = lo_part + scale * hi_int
        dG1 = dlo - lxi * scale * hi_int
        dG2 = lxi * scale * hi_int + scale * dhi
        return G, [dG1, dG2]


# --------------------------------------------------------------------------- #
# Mean model
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class MeanModel:
    """A shape family plus ``theta = (c, beta...)``."""

    family: Family
    theta: np.ndarray
    quadrature: bool = False

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if th.shape != (1 + self.family.n_beta,):
            raise ModelError(f"{self.family.name} needs {1 + self.family.n_beta} parameters, got {th.size}")
        if th[0] <= 0:
            raise ModelError("c must be positive")
        if not bool(self.family.valid(th[1:])):
            raise ModelError(f"beta={th[1:]} outside the admissible region of {self.family.name}")
        object.__setattr__(self, "theta", th)

    @property
    def p(self) -> int:
        return 1 + self.family.n_beta

    @property
    def c(self) -> float:
        return float(self.theta[0])

    @property
    def beta(self) -> np.ndarray:
        return self.theta[1:]

    def with_theta(self, theta) -> MeanModel:
        return MeanModel(self.family, theta, self.quadrature)

    def density(self, x):
        return self.family.density(x, self.beta)

    def admissible(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return (theta[..., 0] > 0) & self.family.valid(theta[..., 1:])

    def batch_means(self, theta, grid: Grid):
        """Means ``(R, K)`` and derivatives ``(R, p, K)`` for a batch of thetas."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        c = theta[:, :1]
        w, dw = self.family.bin_weights(grid.edges, theta[:, 1:], self.quadrature)
        w = np.broadcast_to(w, (theta.shape[0], grid.K))
        m = c * grid.K * w
        dm = np.concatenate([(grid.K * w)[:, None, :], c[:, :, None] * grid.K * dw], axis=1)
        return m, dm

    def bin_means(self, grid: Grid) -> np.ndarray:
        m = self.batch_means(self.theta, grid)[0][0]
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ModelError("model produces a nonpositive bin mean")
        return m

    def dm_dtheta(self, grid: Grid) -> np.ndarray:
        return self.batch_means(self.theta, grid)[1][0]

    def moment_init(self, counts, grid: Grid) -> np.ndarray:
        """Method-of-moments start: mean count for c, first-moment match for beta."""
        counts = np.asarray(counts, dtype=float)
        c0 = max(counts.mean(), 1e-3)
        b0 = self.family.default_beta()
        if self.family.n_beta == 1 and counts.sum() > 0:
            x = grid.centers
            target = (counts * x).sum() / counts.sum()

            def gap(b):
                w, _ = self.family.bin_weights(grid.edges, np.array([b]))
                return float((w[..., :] * x).sum() - target)

            lo, hi = _bracket(self.family, b0[0])
            with np.errstate(all="ignore"):
                try:
                    glo, ghi = gap(lo), gap(hi)
                    if glo * ghi < 0:
                        b0 = np.array([optimize.brentq(gap, lo, hi, xtol=1e-12)])
                except ValueError:
                    pass
        return np.concatenate([[c0], b0])


def _bracket(family: Family, b0: float):
    if isinstance(family, (Linear,)):
        return -0.999, 0.999
    if isinstance(family, PiecewiseLinear):
        top = family.length / (family.xi - family.low)
        return -50.0, 0.999 * top
    if isinstance(family, TruncatedNormal):
        return family.low, family.high
    return b0 - 20.0, b0 + 20.0


def parse_model(spec: str, low: float, high: float, theta=None) -> MeanModel:
    """Build a model from a selection string.

    ``constant | linear | piecewise:<xi> | texp | tnorm | tnorm:<variance> |
    powerlaw | bpl:<xi>``.
    """
    name, _, arg = spec.strip().partition(":")
    name = name.lower()
    try:
        if name == "constant":
            fam = Constant(low, high)
        elif name == "linear":
            fam = Linear(low, high)
        elif name in ("piecewise", "pwlinear"):
            fam = PiecewiseLinear(low, high, float(arg))
        elif name in ("texp", "exponential"):
            fam = TruncatedExponential(low, high)
        elif name in ("tnorm", "normal"):
            fam = TruncatedNormal(low, high, np.sqrt(float(arg)) if arg else None)
        elif name == "powerlaw":
            fam = PowerLaw(low, high)
        elif name == "bpl":
            fam = BrokenPowerLaw(low, high, float(arg))
        else:
            raise ModelError(f"unknown model family {spec!r}")
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"bad model specification {spec!r}: {exc}") from exc
    if theta is None:
        theta = np.concatenate([[1.0], fam.default_beta()])
    return MeanModel(fam, theta)


# --------------------------------------------------------------------------- #
# Sampling
# --------------------------------------------------------------------------- #

BLOCK = 1024


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Independent stream for replicate block ``block`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(block,)))


def sample_counts(means, rng, size: int | None = None) -> np.ndarray:
    """Independent Poisson draws per bin; ``size`` adds a leading replicate axis."""
    means = np.asarray(means, dtype=float)
    if np.any(means < 0):
        raise ModelError("means must be nonnegative")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    shape = means.shape if size is None else (size,) + means.shape
    return rng.poisson(np.broadcast_to(means, shape)).astype(np.int64)


def sample_binned(means, rng) -> BinnedCounts:
    return BinnedCounts(sample_counts(means, rng))


# --------------------------------------------------------------------------- #
# Alternatives
# --------------------------------------------------------------------------- #


@dataclass
class AltSpec:
    """A direction ``h`` with ``m~ = m (1 + h / sqrt(T))``."""

    direction: Callable[[np.ndarray], np.ndarray]
    T: float | None = None
    name: str = "h"
    mass_preserving: bool = True
    constants: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.asarray(self.direction(np.asarray(x, dtype=float)), dtype=float)


def null_direction(T: float | None = None) -> AltSpec:
    return AltSpec(lambda x: np.zeros_like(x), T=T, name="null")


def bin_average(alt: AltSpec, model: MeanModel, grid: Grid) -> np.ndarray:
    """``int_bin h dLambda / Lambda(bin)`` per bin by adaptive quadrature.

    Adaptive rather than fixed-node quadrature because some directions
    (``a ln x + b``) have integrable endpoint singularities.
    """
    fam, beta = model.family, model.beta
    cuts = sorted(set(fam.breakpoints()) | {float(alt.constants[k]) for k in ("xi", "x0") if k in alt.constants})
    e = grid.edges
    f = lambda t: float(alt(np.array([t]))[0] * fam.density_unnorm(np.array([t]), beta).reshape(-1)[0])  # noqa: E731
    num = np.empty(grid.K)
    for k in range(grid.K):
        pts = [c for c in cuts if e[k] < c < e[k + 1]] or None
        num[k] = integrate.quad(f, e[k], e[k + 1], points=pts, epsabs=1e-15, epsrel=1e-12, limit=200)[0]
    den = np.asarray(fam.bin_masses(e, beta)[0]).reshape(-1)
    return num / den


def alt_means(model: MeanModel, alt: AltSpec, grid: Grid, average: bool = False) -> np.ndarray:
    """Perturbed bin means ``m(x_k) (1 + h(x_k)/sqrt(T))``; ``T`` defaults to ``cK``.

    With ``average=True`` the value ``h(x_k)`` is replaced by the
    ``Lambda``-weighted bin average of ``h``, so a centered ``h`` leaves the
    total expected count unchanged to quadrature accuracy.
    """
    m = model.bin_means(grid)
    T = alt.T if alt.T is not None else model.c * grid.K
    hv = bin_average(alt, model, grid) if average else alt(grid.centers)
    factor = 1.0 + hv / np.sqrt(T)
    if np.any(factor <= 0):
        raise AlternativeTooStrong("perturbed mean is nonpositive in some bin")
    return m * factor


def _lambda_moments(model: MeanModel, funcs, points=None):
    """``int f(x) lambda_beta(x) dx`` for each callable in ``funcs``."""
    fam, beta = model.family, model.beta
    Z = fam.normalizer(beta)
    pts = sorted(set((points or []) + fam.breakpoints()))
    out = []
    for f in funcs:
        val = integrate.quad(
            lambda t: float(f(np.array([t]))[0] * fam.density_unnorm(np.array([t]), beta)[..., 0]) / Z,
            fam.low, fam.high, points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-12)[0]
        out.append(val)
    return np.array(out)


def _normalize(model, base, points=None):
    """Constants ``a, b`` making ``a * base + b`` centered with unit norm under Lambda."""
    m1, m2 = _lambda_moments(model, [base, lambda x: base(x) ** 2], points)
    a = 1.0 / np.sqrt(m2 - m1**2)
    return a, -a * m1


def make_direction(kind: str, model: MeanModel, T: float | None = None, **params) -> AltSpec:
    """Unit-norm, mass-preserving direction of a named kind.

    Kinds: ``gamma_shape`` (log term, for exponential nulls), ``gaussian_bump``
    (``x0``, ``sigma``, ``eta``), ``broken_powerlaw`` (``xi``),
    ``variance_perturbation`` (truncated-normal nulls), ``null``.
    """
    fam = model.family
    if kind == "null":
        return null_direction(T)
    if kind == "gamma_shape":
        if not isinstance(fam, TruncatedExponential) or fam.low < 0:
            raise ModelError("gamma_shape needs a truncated exponential on a nonnegative domain")
        a, b = _normalize(model, np.log)
        return AltSpec(lambda x: a * np.log(x) + b, T=T, name="gamma_shape", constants={"a": a, "b": b})
    if kind == "gaussian_bump":
        x0 = float(params.get("x0", 0.5))
        sd = float(params.get("sigma", 0.05))
        eta = float(params.get("eta", 1.0))
        bump = lambda x: np.exp(-0.5 * ((x - x0) / sd) ** 2)  # noqa: E731
        beta = model.beta
        ratio = lambda x: bump(x) / fam.density_unnorm(x, beta)[..., :]  # noqa: E731
        # kappa makes lambda_s / lambda_b integrate to one against lambda_b
        kappa = 1.0 / _lambda_moments(model, [lambda x: ratio(x).reshape(-1)], points=[x0])[0]
        base = lambda x: kappa * ratio(np.asarray(x)).reshape(np.shape(x)) - 1.0  # noqa: E731
        a = 1.0 / np.sqrt(_lambda_moments(model, [lambda x: base(x) ** 2], points=[x0])[0])
        return AltSpec(lambda x: eta * a * base(x), T=T, name="gaussian_bump",
                       constants={"a": a, "kappa": kappa, "x0": x0, "sigma": sd, "eta": eta})
    if kind == "broken_powerlaw":
        if not isinstance(fam, PowerLaw):
            raise ModelError("broken_powerlaw needs a power-law null")
        xi = float(params.get("xi", 1.4))
        if not fam.low < xi < fam.high:
            raise ModelError("xi must lie inside the domain")
        base = lambda x: (np.log(xi) - np.log(x)) * (x >= xi)  # noqa: E731
        a, b = _normalize(model, base, points=[xi])
        return AltSpec(lambda x: a * base(x) + b, T=T, name="broken_powerlaw",
                       constants={"a": a, "b": b, "xi": xi})
    if kind == "variance_perturbation":
        if not isinstance(fam, TruncatedNormal) or fam.sigma is None:
            raise ModelError("variance_perturbation needs a truncated normal with fixed sigma")
        mu, s2 = float(model.beta[0]), fam.sigma**2
        quad = lambda x: (x - mu) ** 2 / s2  # noqa: E731
        ev = _lambda_moments(model, [quad])[0]
        scale = float(params.get("b", 1.0 / np.sqrt(2.0))) / (2.0 * s2)
        base = lambda x: quad(x) - ev  # noqa: E731
        if params.get("normalize", True):
            a, _ = _normalize(model, base)
        else:
            a = scale
        return AltSpec(lambda x: a * base(x), T=T, name="variance_perturbation",
                       constants={"a": a, "b_paper": scale * 2 * s2, "E_quad": ev})
    raise ModelError(f"unknown direction kind {kind!r}")


def project_hhat(alt: AltSpec, model: MeanModel) -> AltSpec:
    """Continuous projection of ``h`` orthogonal to the tangent directions.

    ``hhat = h - q^T Gamma^{-1} int q h dLambda`` with
    ``q(x) = (1/c, dlog lambda/dbeta)``.
    """
    fam, beta, c = model.family, model.beta, model.c

    def q(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.vstack([np.full(x.shape, 1.0 / c), fam.log_density_grad(x, beta).reshape(-1, x.size)])

    p = model.p
    pts = list(alt.constants.get("points", [])) + [alt.constants[k] for k in ("xi", "x0") if k in alt.constants]
    funcs = [lambda x, i=i, j=j: q(x)[i] * q(x)[j] for i in range(p) for j in range(p)]
    Gamma = _lambda_moments(model, funcs, pts).reshape(p, p)
    proj = _lambda_moments(model, [lambda x, i=i: q(x)[i] * alt(x) for i in range(p)], pts)
    try:
        coef = np.linalg.solve(Gamma, proj)
    except np.linalg.LinAlgError as exc:
        raise ModelError("tangent Gram matrix is singular") from exc

    def hhat(x):
        x = np.asarray(x, dtype=float)
        return alt(x) - (coef @ q(x)).reshape(x.shape)

    consts = dict(alt.constants)
    consts["tangent_coef"] = coef
    return AltSpec(hhat, T=alt.T, name=f"{alt.name}_hat", mass_preserving=True, constants=consts)


def hhat_on_grid(h_values, model: MeanModel, grid: Grid) -> np.ndarray:
    """Binned projection of ``h(x_k)`` orthogonal to ``mdot/m`` under bin weights."""
    m = model.bin_means(grid)
    q = model.dm_dtheta(grid) / m
    w = m / m.sum()
    Gamma = (q * w) @ q.T
    coef = np.linalg.solve(Gamma, (q * w) @ np.asarray(h_values, dtype=float))
    return h_values - coef @ q


def lambda_norm(alt: AltSpec, model: MeanModel) -> tuple[float, float]:
    """``(int h dLambda, int h^2 dLambda)`` by adaptive quadrature."""
    pts = [alt.constants[k] for k in ("xi", "x0") if k in alt.constants]
    return tuple(_lambda_moments(model, [alt, lambda x: alt(x) ** 2], pts))
