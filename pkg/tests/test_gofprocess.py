from __future__ import annotations

import warnings

import numpy as np
import pytest

import sparsegof.gofprocess as gp
from sparsegof.estimation import EstimatorSpec
from sparsegof.measure import Grid, evaluate_statistic, zero_kernel
from sparsegof.gofprocess import (
    BootstrapError,
    BootstrapPlan,
    ScanningFamily,
    bootstrap_pvalue,
    classical_replicates,
    ks_statistic,
    observed_ks,
    partial_sums,
    projected_replicates,
    pvalue_from,
)
from sparsegof.models import parse_model
from sparsegof.statistics import linear, pearson, weighted_linear

MLE = EstimatorSpec("mle")


class TestScan:
    def test_nested(self):
        sc = ScanningFamily(10, np.random.default_rng(0).permutation(10))
        assert sc.mask(0).sum() == 0 and sc.mask(10).all()
        for j in range(10):
            assert np.all(sc.mask(j) <= sc.mask(j + 1))
        np.testing.assert_allclose(sc.t_values, np.arange(11) / 10)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            ScanningFamily(3, np.array([0, 0, 1]))


class TestPartialSums:
    def test_zero_kernel(self):
        np.testing.assert_array_equal(partial_sums(zero_kernel(), np.array([1, 4, 2]), np.ones(3)), np.zeros(4))

    def test_endpoint(self, texp_model, grid100):
        m = texp_model.bin_means(grid100)
        z = np.random.default_rng(1).poisson(m)
        S = partial_sums(pearson(), z, m)
        assert S[0] == 0.0
        assert S[-1] == pytest.approx(evaluate_statistic(pearson(), z, m), abs=1e-12)

    def test_three_bins(self):
        z = np.array([2, 0, 5])
        m = np.array([1.0, 2.0, 4.0])
        w = (z - m) / m
        ref = np.array([0, w[0], w[0] + w[1], w.sum()]) / np.sqrt(3)
        np.testing.assert_allclose(partial_sums(weighted_linear(), z, m), ref, atol=1e-15)


class TestKS:
    def test_exact_fit_zero(self):
        assert ks_statistic(linear(), np.full(50, 4), np.full(50, 4.0)) == 0.0

    def test_brute_force(self, texp_model, grid100):
        m = texp_model.bin_means(grid100)
        z = np.random.default_rng(2).poisson(m)
        ref = max(abs(sum((z[k] - m[k]) / m[k] for k in range(j))) for j in range(101)) / 10
        assert ks_statistic(weighted_linear(), z, m) == pytest.approx(ref, rel=1e-12)
        order = np.random.default_rng(3).permutation(100)
        ref2 = max(abs(sum((z[k] - m[k]) / m[k] for k in order[:j])) for j in range(101)) / 10
        assert ks_statistic(weighted_linear(), z, m, ScanningFamily(100, order)) == pytest.approx(ref2, rel=1e-12)


class TestPvalue:
    def test_sentinel(self):
        assert pvalue_from(np.inf, np.arange(99.0)) == pytest.approx(1 / 100)

    def test_monotone(self):
        reps = np.random.default_rng(4).normal(size=500)
        obs = np.sort(np.random.default_rng(5).normal(size=50))
        p = [pvalue_from(o, reps) for o in obs]
        assert np.all(np.diff(p) <= 0)

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            BootstrapPlan(1000, mode="other")
        with pytest.warns(UserWarning):
            BootstrapPlan(100)


class TestBootstrap:
    def test_projected_matches_classical(self, tnorm_model, grid100):
        plan_c = BootstrapPlan(4000, "classical", seed=1, statistic="ks")
        plan_p = BootstrapPlan(4000, "projected", seed=2, statistic="ks")
        a, fa = classical_replicates(plan_c, tnorm_model, MLE, weighted_linear(), grid100)
        b, _ = projected_replicates(plan_p, tnorm_model, MLE, weighted_linear(), grid100)
        assert fa == 0
        from conftest import ks_distance

        assert ks_distance(a, b) < 0.035

    def test_single_statistic_projected(self, texp_model, grid100):
        plan_c = BootstrapPlan(4000, "classical", seed=1, statistic="single")
        plan_p = BootstrapPlan(4000, "projected", seed=2, statistic="single")
        from sparsegof.measure import LinearKernel

        g = LinearKernel(np.sin(6 * grid100.centers))
        a, _ = classical_replicates(plan_c, texp_model, MLE, g, grid100)
        b, _ = projected_replicates(plan_p, texp_model, MLE, g, grid100)
        assert a.var() == pytest.approx(b.var(), rel=0.1)

    def test_worker_determinism(self, texp_model, grid100):
        plan1 = BootstrapPlan(3000, "classical", seed=9, workers=1)
        plan3 = BootstrapPlan(3000, "classical", seed=9, workers=3)
        r1 = bootstrap_pvalue(plan1, 1.0, texp_model, MLE, weighted_linear(), grid100)
        r3 = bootstrap_pvalue(plan3, 1.0, texp_model, MLE, weighted_linear(), grid100)
        np.testing.assert_array_equal(r1.replicates, r3.replicates)
        assert r1.pvalue == r3.pvalue

    def test_failure_threshold(self, texp_model, grid100, monkeypatch):
        real = gp.fit_batch

        def flaky(spec, model, z, grid, init):
            th, ok, it = real(spec, model, z, grid, init)
            ok[::20] = False
            return th, ok, it

        monkeypatch.setattr(gp, "fit_batch", flaky)
        with pytest.raises(BootstrapError):
            bootstrap_pvalue(BootstrapPlan(2000, seed=1), 1.0, texp_model, MLE, weighted_linear(), grid100)

    def test_synthetic_pvalues_consistent(self, texp_model, grid100):
        z = np.random.default_rng(12).poisson(texp_model.bin_means(grid100))
        from sparsegof.estimation import solve

        fit = solve(MLE, z, grid100, texp_model)
        mh = texp_model.with_theta(fit.theta_hat)
        obs = observed_ks(pearson(), z, mh, grid100, parallel=True)
        pc = bootstrap_pvalue(BootstrapPlan(4000, "classical", seed=3), obs, mh, MLE, weighted_linear(), grid100)
        pp = bootstrap_pvalue(BootstrapPlan(4000, "projected", seed=4), obs, mh, MLE, weighted_linear(), grid100)
        assert abs(pc.pvalue - pp.pvalue) < 0.04


class TestBrownianScaling:
    def test_variance_linear_in_t(self):
        K = 1000
        m = np.full(K, 3.0)
        Z = np.random.default_rng(13).poisson(m, (20_000, K)).astype(float)
        S = partial_sums(pearson(), Z, m)
        norm2 = 2 + 1 / 3.0
        for j in (250, 500, 1000):
            assert S[:, j].var() == pytest.approx(j / K * norm2, rel=0.05)
