"""Goodness-of-fit analysis of one observed spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dfree import dfree_test
from ..estimation import parse_estimator, solve
from ..gofprocess import (
    BootstrapError,
    BootstrapPlan,
    bootstrap_pvalue,
    classical_replicates,
    ks_statistic,
    projected_replicates,
    pvalue_from,
)
from ..measure import BinnedCounts, Grid, LinearKernel, MeasureContext, NumericError, evaluate_statistic
from ..models import parse_model
from ..projection import build_projector, gaussian_test
from ..statistics import parallel_part, parse_kernel
from .config import ConfigError


@dataclass
class TestReport:
    model: str
    kernel: str
    test: str
    method: str
    theta_hat: np.ndarray
    statistic: float
    pvalue: float
    replicates: int = 0
    failures: int = 0

    def row(self) -> dict:
        out = {"model": self.model, "kernel": self.kernel, "test": self.test, "method": self.method}
        for i, v in enumerate(self.theta_hat):
            out[f"theta{i}"] = float(v)
        out.update(statistic=self.statistic, pvalue=self.pvalue, reps=self.replicates, failures=self.failures)
        return out


def fit_model(model_spec: str, grid: Grid, counts, estimator: str = "mle"):
    """Fit and return ``(model_at_theta_hat, FitResult)``."""
    model = parse_model(model_spec, grid.low, grid.high)
    spec = parse_estimator(estimator)
    fit = solve(spec, counts, grid, model)
    if not fit.converged:
        raise NumericError(f"{estimator} fit of {model_spec} did not converge (residual {fit.residual:.3g})")
    return model.with_theta(fit.theta_hat), fit


def analyze_spectrum(grid: Grid, counts, model_spec: str, kernel_spec: str = "pearson", test: str = "gaussian",
                     estimator: str = "mle", bootstrap: str = "classical", replicates: int = 10_000,
                     seed: int = 0, workers: int = 1) -> TestReport:
    """Fit the model and run one test.

    ``gaussian``: the divisible statistic against ``N(0, ||Pi g||^2)``.
    ``single``: the same statistic with a two-sided parametric bootstrap.
    ``ks``: max of partial sums of the collinear part ``g_par`` at
    ``theta_hat``, bootstrapped. ``ks_star``: transformed process with its
    limit-law p-value.
    """
    counts = counts if isinstance(counts, BinnedCounts) else BinnedCounts(np.asarray(counts))
    if test == "ks_star":
        model = parse_model(model_spec, grid.low, grid.high)
        res = dfree_test(counts.counts, model, grid)
        return TestReport(model_spec, "standardized", test, f"limit law p={res.p}", res.theta_hat,
                          res.statistic, res.pvalue)
    kernel = parse_kernel(kernel_spec)
    model_hat, fit = fit_model(model_spec, grid, counts, estimator)
    spec = parse_estimator(estimator)
    m_hat = model_hat.bin_means(grid)
    if test == "gaussian":
        value = evaluate_statistic(kernel, counts, m_hat)
        var = build_projector(spec, MeasureContext.from_model(model_hat, grid)).variance(kernel)
        return TestReport(model_spec, kernel.name, test, "gaussian", fit.theta_hat, float(value),
                          gaussian_test(value, var, sides=2))
    if test == "single":
        if bootstrap == "projected" and not isinstance(kernel, LinearKernel):
            raise ConfigError("projected bootstrap of a single statistic needs a linear kernel")
        value = evaluate_statistic(kernel, counts, m_hat)
        plan = BootstrapPlan(replicates, bootstrap, seed, "single", workers)
        if bootstrap == "classical":
            reps, fails = classical_replicates(plan, model_hat, spec, kernel, grid)
        else:
            reps, fails = projected_replicates(plan, model_hat, spec, kernel, grid)
        if fails > plan.max_failure_rate * replicates:
            raise BootstrapError(f"{fails} of {replicates} bootstrap refits failed")
        p = pvalue_from(abs(value), np.abs(reps))
        return TestReport(model_spec, kernel.name, test, f"{bootstrap} bootstrap", fit.theta_hat,
                          float(value), p, int(reps.size), fails)
    if test == "ks":
        g = parallel_part(kernel)
        obs = float(ks_statistic(g, counts, m_hat))
        plan = BootstrapPlan(replicates, bootstrap, seed, "ks", workers)
        res = bootstrap_pvalue(plan, obs, model_hat, spec, g, grid)
        return TestReport(model_spec, g.name, test, f"{bootstrap} bootstrap", fit.theta_hat, obs,
                          res.pvalue, res.n_valid, res.failures)
    raise ConfigError(f"unknown test {test!r}")


chandra_analysis = analyze_spectrum
