from __future__ import annotations

import mpmath
import numpy as np
import pytest
from scipy import special

from sparsegof.dfree import (
    RBasis,
    apply_uab,
    block_edges,
    build_chain,
    dfree_test,
    ell_kernel,
    kolmogorov_cdf,
    limit_cdf,
    limit_pvalue,
    null_ks_star,
    transformed_kernel,
    transformed_process,
    variance_profile,
)
from sparsegof.estimation import EstimatorSpec, orthonormal_score
from sparsegof.measure import Grid, LinearKernel, MeasureContext, inner_product, norm2
from sparsegof.models import parse_model
from sparsegof.projection import build_projector


def mp_kolmogorov(y):
    mpmath.mp.dps = 50
    y = mpmath.mpf(y)
    return 1 - 2 * mpmath.nsum(lambda k: (-1) ** (k - 1) * mpmath.exp(-2 * k * k * y * y), [1, mpmath.inf])


class TestKolmogorov:
    @pytest.mark.parametrize("y", [0.3, 0.5, 0.8, 1.0, 1.2, 1.36, 2.0, 3.0])
    def test_series_oracle(self, y):
        assert kolmogorov_cdf(y) == pytest.approx(float(mp_kolmogorov(y)), abs=1e-12)

    def test_scipy_oracle(self):
        y = np.linspace(0.05, 4, 200)
        np.testing.assert_allclose(kolmogorov_cdf(y), 1 - special.kolmogorov(y), atol=1e-12)

    def test_limits(self):
        assert kolmogorov_cdf(1e-3) < 1e-12
        assert kolmogorov_cdf(0.0) == 0.0
        assert kolmogorov_cdf(10.0) == 1.0

    def test_limit_law(self):
        y = np.linspace(0.2, 2, 10)
        np.testing.assert_allclose(limit_cdf(y, 1), kolmogorov_cdf(y))
        np.testing.assert_allclose(limit_cdf(y, 3, 100), kolmogorov_cdf(np.sqrt(3) * (y + 0.06)) ** 3)
        assert limit_pvalue(0.0, 2) == 1.0


def random_ctx(seed, K=60):
    rng = np.random.default_rng(seed)
    return MeasureContext(rng.uniform(0.5, 8, K)), rng


def unit(f, ctx):
    return f * (1 / np.sqrt(norm2(f, ctx)))


class TestUab:
    def test_maps_a_to_b(self):
        ctx, rng = random_ctx(0)
        a = unit(LinearKernel(rng.normal(size=60)), ctx)
        b = unit(LinearKernel(rng.normal(size=60)), ctx)
        assert norm2(apply_uab(a, b, a, ctx) - b, ctx) < 1e-20
        assert norm2(apply_uab(a, b, b, ctx) - a, ctx) < 1e-20

    def test_identity_case(self):
        ctx, rng = random_ctx(1)
        a = unit(LinearKernel(rng.normal(size=60)), ctx)
        f = LinearKernel(rng.normal(size=60))
        assert apply_uab(a, a, f, ctx) is f

    def test_isometry_random(self):
        ctx, rng = random_ctx(2)
        a = unit(LinearKernel(rng.normal(size=60)), ctx)
        b = unit(LinearKernel(rng.normal(size=60)), ctx)
        for _ in range(200):
            f = LinearKernel(rng.normal(size=60))
            assert abs(np.sqrt(norm2(apply_uab(a, b, f, ctx), ctx)) - np.sqrt(norm2(f, ctx))) < 1e-10

    def test_orthogonal_unchanged(self):
        ctx, rng = random_ctx(3)
        m = ctx.means
        a = unit(LinearKernel(np.r_[rng.normal(size=30), np.zeros(30)]), ctx)
        b = unit(LinearKernel(np.r_[rng.normal(size=30), np.zeros(30)]), ctx)
        f = LinearKernel(np.r_[np.zeros(30), rng.normal(size=30)])
        assert norm2(apply_uab(a, b, f, ctx) - f, ctx) < 1e-24


class TestChain:
    @pytest.fixture
    def setup(self, texp_model, grid100):
        ctx = MeasureContext.from_model(texp_model, grid100)
        r = RBasis(100, 2).kernels(ctx.means)
        s = orthonormal_score(ctx)
        return ctx, r, s, build_chain(r, s, ctx)

    def test_r_orthonormal(self, setup):
        ctx, r, _, _ = setup
        np.testing.assert_allclose([[inner_product(a, b, ctx) for b in r] for a in r], np.eye(2), atol=1e-9)

    def test_maps_r_to_s(self, setup):
        ctx, r, s, U = setup
        for rj, sj in zip(r, s):
            assert np.sqrt(norm2(U(rj) - sj, ctx)) < 1e-9

    def test_isometry(self, setup):
        ctx, _, _, U = setup
        rng = np.random.default_rng(4)
        for _ in range(1000):
            f = LinearKernel(rng.normal(size=100))
            assert abs(np.sqrt(norm2(U(f), ctx)) - np.sqrt(norm2(f, ctx))) < 1e-9

    def test_projection_commutes(self, setup):
        ctx, r, _, U = setup
        P = build_projector(EstimatorSpec("mle"), ctx)
        for j in (0, 13, 50, 77, 100):
            f = transformed_kernel(j, U, r, ctx.means)
            assert norm2(P(f) - f, ctx) < 1e-18

    def test_variance_identity(self, setup):
        ctx, r, _, U = setup
        basis = RBasis(100, 2)
        js = np.arange(0, 101, 7)
        prof = variance_profile(js, basis)
        for j, v in zip(js, prof):
            ell = ell_kernel(j, ctx.means)
            direct = norm2(ell, ctx) - sum(inner_product(ell, rj, ctx) ** 2 for rj in r)
            assert abs(norm2(transformed_kernel(j, U, r, ctx.means), ctx) - direct) < 1e-9
            assert abs(v - direct) < 1e-9

    def test_batched_matches_kernels(self, setup, texp_model, grid100):
        ctx, r, _, U = setup
        z = np.random.default_rng(5).poisson(ctx.means)
        proc = transformed_process(z, texp_model, grid100)
        for j in (0, 10, 50, 99, 100):
            f = transformed_kernel(j, U, r, ctx.means)
            assert proc[j] == pytest.approx(f(z, ctx.means).sum() / 10, abs=1e-12)
        assert proc[0] == 0.0

    def test_p1_identity_and_bridge(self, const_model, grid100):
        ctx = MeasureContext.from_model(const_model, grid100)
        r = RBasis(100, 1).kernels(ctx.means)
        s = orthonormal_score(ctx)
        U = build_chain(r, s, ctx)
        assert norm2(U(r[0]) - s[0], ctx) < 1e-20
        assert norm2(r[0] - s[0], ctx) < 1e-20  # r_1 = s_1: chain acts as identity
        for j in (10, 25, 50, 90):
            t = j / 100
            assert norm2(transformed_kernel(j, U, r, ctx.means), ctx) == pytest.approx(t - t * t, abs=1e-12)

    def test_variance_profile_p4(self):
        basis = RBasis(400, 4)
        j = np.arange(401)
        t = j / 400
        tj = np.floor(t * 4 - 1e-12).clip(0) / 4
        tj[0] = 0
        expected = (t - tj) - 4 * (t - tj) ** 2
        np.testing.assert_allclose(variance_profile(j, basis), expected, atol=1e-12)

    def test_uneven_blocks(self):
        e = block_edges(10, 3)
        np.testing.assert_array_equal(e, [0, 3, 6, 10])
        basis = RBasis(10, 3)
        R = basis.standardized()
        np.testing.assert_allclose(R @ R.T / 10, np.eye(3), atol=1e-12)


class TestKSStar:
    def test_dfree_test_runs(self, texp_model, grid100):
        z = np.random.default_rng(6).poisson(texp_model.bin_means(grid100))
        res = dfree_test(z, parse_model("texp", 0, 1), grid100)
        assert 0 < res.pvalue <= 1 and res.statistic > 0 and res.p == 2

    def test_null_limit_small(self, texp_model, grid100):
        stats, fails = null_ks_star(texp_model, grid100, 4000, seed=3)
        assert fails == 0
        y = np.sort(stats)
        emp = np.arange(1, y.size + 1) / y.size
        assert np.max(np.abs(emp - limit_cdf(y, 2, 100))) < 0.03
