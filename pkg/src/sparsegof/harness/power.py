"""Monte Carlo power studies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from ..dfree import RBasis, _standardized_score, limit_cdf, transformed_paths
from ..estimation import EstimatorSpec, fit_batch, parse_estimator
from ..measure import Grid, MeasureContext, NumericError, norm2
from ..models import AltSpec, alt_means, make_direction, parse_model
from ..parallel import run_blocks
from ..projection import build_projector
from ..statistics import parse_kernel
from .config import ConfigError, RunConfig

EXAMPLES = {
    "ex1": dict(model="texp", domain=(0.0, 1.0), theta=[5.0, 1.5], direction="gamma_shape"),
    "ex2": dict(model="texp", domain=(0.0, 1.0), theta=[5.0, 1.5], direction="gaussian_bump",
                direction_params={"x0": 0.5, "sigma": 0.05}),
    "ex3": dict(model="powerlaw", domain=(1.0, 2.0), theta=[5.0, 2.0], direction="broken_powerlaw",
                direction_params={"xi": 1.4}),
    "ex4": dict(model="tnorm:0.04", domain=(0.0, 1.0), theta=[5.0, 0.5], direction="variance_perturbation"),
}


def example_config(name: str, **overrides) -> RunConfig:
    """Preset for the worked examples (``ex1`` .. ``ex4``), K=100 and c=5."""
    if name not in EXAMPLES:
        raise ConfigError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}")
    base = dict(K=100, T=500.0)
    base.update(EXAMPLES[name])
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**base)


@dataclass
class PowerReport:
    label: str
    power: float
    se: float
    size: float
    critical: tuple
    null_mean: float
    null_var: float
    alt_mean: float
    alt_var: float
    replicates: int
    failures: int

    def row(self) -> dict:
        return {
            "study": self.label,
            "power": self.power,
            "se": self.se,
            "size": self.size,
            "crit_low": self.critical[0],
            "crit_high": self.critical[1],
            "null_mean": self.null_mean,
            "null_var": self.null_var,
            "alt_mean": self.alt_mean,
            "alt_var": self.alt_var,
            "reps": self.replicates,
            "failures": self.failures,
        }


@dataclass
class Setup:
    cfg: RunConfig
    grid: Grid
    model: object
    kernel: object
    spec: EstimatorSpec | None
    alt: AltSpec
    m0: np.ndarray
    m1: np.ndarray


def build_setup(cfg: RunConfig) -> Setup:
    lo, hi = cfg.domain
    grid = Grid(lo, hi, cfg.K)
    model = parse_model(cfg.model, lo, hi, cfg.theta)
    kernel = parse_kernel(cfg.kernel)
    spec = None if cfg.estimator == "known" else parse_estimator(cfg.estimator)
    if cfg.direction == "null":
        alt = make_direction("null", model, T=cfg.T)
    else:
        base = make_direction(cfg.direction, model, T=cfg.T, **cfg.direction_params)
        s = float(cfg.strength)
        alt = AltSpec(lambda x: s * base(x), T=cfg.T, name=base.name, constants=base.constants)
    m0 = model.bin_means(grid)
    m1 = alt_means(model, alt, grid)
    return Setup(cfg, grid, model, kernel, spec, alt, m0, m1)


def statistic_batch(setup: Setup, z: np.ndarray) -> np.ndarray:
    """Test statistic for each row of ``z``; NaN where a refit failed."""
    cfg, grid, model = setup.cfg, setup.grid, setup.model
    n, K = z.shape
    out = np.full(n, np.nan)
    if setup.spec is None:
        ok = np.ones(n, bool)
        m, dm = model.batch_means(model.theta, grid)
        m = np.broadcast_to(m, (n, K))
        dm = np.broadcast_to(dm, (n,) + dm.shape[1:])
    else:
        th, ok, _ = fit_batch(setup.spec, model, z, grid, model.theta)
        if not np.any(ok):
            return out
        m, dm = model.batch_means(th[ok], grid)
    zz = z[ok]
    with np.errstate(all="ignore"):
        if cfg.test == "ks_star":
            R = RBasis(K, model.p).standardized()
            eps = (zz - m) / np.sqrt(m)
            vals = np.max(np.abs(transformed_paths(eps, _standardized_score(m, dm), R, np.arange(K))), axis=-1)
        else:
            g = setup.kernel(zz, m)
            if cfg.test == "single":
                vals = g.sum(axis=-1) / np.sqrt(K)
            else:
                vals = np.max(np.abs(np.cumsum(g, axis=-1)), axis=-1) / np.sqrt(K)
    out[ok] = vals
    return out


def _asymptotic_sd(setup: Setup) -> float:
    ctx = MeasureContext.from_model(setup.model, setup.grid)
    if setup.spec is None:
        return float(np.sqrt(norm2(setup.kernel, ctx)))
    return float(np.sqrt(build_projector(setup.spec, ctx).variance(setup.kernel)))


def _critical(setup: Setup, s0: np.ndarray):
    """Rejection rule as ``(low, high, reject(s))``."""
    cfg = setup.cfg
    a = cfg.alpha
    if cfg.test in ("ks", "ks_star"):
        if cfg.calibration == "mc":
            hi = float(np.quantile(s0, 1 - a))
        elif cfg.test == "ks_star":
            K, p = cfg.K, setup.model.p
            hi = float(optimize.brentq(lambda y: limit_cdf(y, p, K) - (1 - a), 1e-6, 20.0))
        else:
            raise ConfigError("the ks test has no closed-form null law; use mc calibration")
        return -np.inf, hi, lambda s: s > hi
    if cfg.calibration == "mc":
        if cfg.sides == "equal":
            lo, hi = np.quantile(s0, [a / 2, 1 - a / 2])
        elif cfg.sides == "abs":
            hi = float(np.quantile(np.abs(s0), 1 - a))
            lo = -hi
        elif cfg.sides == "upper":
            lo, hi = -np.inf, float(np.quantile(s0, 1 - a))
        else:
            lo, hi = float(np.quantile(s0, a)), np.inf
    else:
        sd = _asymptotic_sd(setup)
        if cfg.sides in ("equal", "abs"):
            hi = float(stats.norm.ppf(1 - a / 2) * sd)
            lo = -hi
        elif cfg.sides == "upper":
            lo, hi = -np.inf, float(stats.norm.ppf(1 - a) * sd)
        else:
            lo, hi = float(stats.norm.ppf(a) * sd), np.inf
    lo, hi = float(lo), float(hi)
    return lo, hi, lambda s: (s < lo) | (s > hi)


def simulate(setup: Setup):
    """Null and alternative statistics, ``(s0, s1, failures)``."""
    cfg = setup.cfg
    K = cfg.K

    def job(b, n, rng):
        z0 = rng.poisson(setup.m0, (n, K)).astype(float)
        z1 = rng.poisson(setup.m1, (n, K)).astype(float)
        return statistic_batch(setup, z0), statistic_batch(setup, z1)

    s0, s1 = run_blocks(job, cfg.replicates, cfg.seed, cfg.workers)
    fails = int((~np.isfinite(s0)).sum() + (~np.isfinite(s1)).sum())
    return s0[np.isfinite(s0)], s1[np.isfinite(s1)], fails


def power_study(cfg: RunConfig, label: str | None = None) -> PowerReport:
    """Calibrate under the null, then estimate the rejection rate under the alternative."""
    setup = build_setup(cfg)
    s0, s1, fails = simulate(setup)
    if s0.size < 0.99 * cfg.replicates or s1.size < 0.99 * cfg.replicates:
        raise NumericError(f"{fails} replicates failed to refit")
    if np.ptp(s0) == 0:
        raise NumericError("null distribution of the statistic is degenerate")
    lo, hi, reject = _critical(setup, s0)
    power = float(np.mean(reject(s1)))
    size = float(np.mean(reject(s0)))
    label = label or f"{cfg.model}/{cfg.kernel}/{cfg.estimator}/{cfg.test}/{cfg.direction}"
    return PowerReport(
        label, power, float(np.sqrt(power * (1 - power) / s1.size)), size, (lo, hi),
        float(s0.mean()), float(s0.var()), float(s1.mean()), float(s1.var()), int(s1.size), fails,
    )
