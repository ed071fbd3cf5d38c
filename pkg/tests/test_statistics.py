from __future__ import annotations

import math

import numpy as np
import pytest

from sparsegof.measure import MeasureContext, c_function, expect, inner_product, norm2, poisson_pmf
from sparsegof.models import make_direction
from sparsegof.projection import shift
from sparsegof.statistics import (
    KernelError,
    cash,
    custom,
    decompose,
    empty_boxes,
    expected_nu_log_nu,
    is_c_homogeneous,
    linear,
    make_kernel,
    parse_kernel,
    pearson,
    spectral,
    spectral_parallel_shifted,
    weighted_linear,
)

CATALOGUE = ["pearson", "cash", "linear", "wlinear", "empty", "spectral:0", "spectral:1", "spectral:3"]


class TestCatalogue:
    def test_pearson_at_mean(self):
        assert pearson()(5.0, 5.0) == -1.0

    def test_spectral_value(self):
        assert spectral(1)(0, 5.0) == pytest.approx(1 - 6 * math.exp(-5), abs=1e-15)

    def test_cash_value(self):
        ref = 0.0 - float(expected_nu_log_nu(5.0)) - (0 - 5) * (1 + math.log(5))
        assert cash()(0, 5.0) == pytest.approx(ref, abs=1e-13)

    @pytest.mark.parametrize("spec", CATALOGUE)
    def test_centered(self, spec):
        assert np.max(np.abs(expect(parse_kernel(spec), np.geomspace(0.1, 50, 20)))) < 1e-10

    def test_parse_errors(self):
        for bad in ["nosuch", "spectral:x", "spectral:-1", "spectral:1.5", "pearson:2", "custom", "par:"]:
            with pytest.raises(KernelError):
                parse_kernel(bad)
        with pytest.raises(KernelError):
            make_kernel("spectral")

    def test_custom_weight(self, texp_ctx):
        w = np.linspace(0.5, 1.5, 100)
        g = custom(pearson(), w)
        assert norm2(g, texp_ctx) == pytest.approx(np.mean(w**2 * (2 + 1 / texp_ctx.means)), rel=1e-12)
        g2 = make_kernel("custom", base="pearson", weight=w)
        assert norm2(g2, texp_ctx) == pytest.approx(norm2(g, texp_ctx), rel=1e-14)

    def test_cache_per_m(self):
        a = expected_nu_log_nu(np.array([2.0, 2.0, 3.0]))
        assert a[0] == a[1]


class TestDecompose:
    def test_pearson_parallel_is_wlinear(self, texp_ctx):
        g_par, _ = decompose(pearson(), texp_ctx)
        np.testing.assert_allclose(g_par.coef(texp_ctx.means), 1 / texp_ctx.means, rtol=1e-14)

    def test_wlinear_perp_zero(self, texp_ctx):
        g_par, g_perp = decompose(weighted_linear(), texp_ctx)
        assert norm2(g_perp, texp_ctx) == 0.0
        assert g_par is not None and norm2(g_par, texp_ctx) == pytest.approx(norm2(weighted_linear(), texp_ctx))

    def test_spectral_parallel_sign(self, texp_ctx):
        m = texp_ctx.means
        g_par, _ = decompose(spectral(2), texp_ctx)
        np.testing.assert_allclose(g_par.coef(m), -poisson_pmf(2, m), rtol=1e-12)
        shifted = spectral_parallel_shifted(2)
        np.testing.assert_allclose(shifted.coef(m), -poisson_pmf(1, m), rtol=1e-14)

    @pytest.mark.parametrize("spec", CATALOGUE)
    def test_pythagoras(self, spec, texp_ctx):
        g = parse_kernel(spec)
        g_par, g_perp = decompose(g, texp_ctx)
        tot = norm2(g, texp_ctx)
        assert abs(tot - norm2(g_par, texp_ctx) - norm2(g_perp, texp_ctx)) < 1e-9
        assert abs(inner_product(g_par, g_perp, texp_ctx)) < 1e-9
        assert norm2(g_par, texp_ctx) <= tot + 1e-12

    @pytest.mark.parametrize("spec", CATALOGUE)
    def test_perp_has_zero_c(self, spec, texp_ctx):
        _, g_perp = decompose(parse_kernel(spec), texp_ctx)
        assert np.max(np.abs(c_function(g_perp, texp_ctx.means, use_known=False))) < 1e-9
        # perp part stays centered
        assert np.max(np.abs(expect(g_perp, texp_ctx.means))) < 1e-10

    @pytest.mark.parametrize("spec", ["pearson", "cash", "spectral:1", "empty"])
    def test_shift_preserved(self, spec, texp_ctx, texp_model):
        h = make_direction("gamma_shape", texp_model)
        g = parse_kernel(spec)
        g_par, _ = decompose(g, texp_ctx)
        assert shift(g, h, texp_ctx) == pytest.approx(shift(g_par, h, texp_ctx), abs=1e-10)

    def test_dominance_strict(self, texp_ctx):
        g = pearson()
        g_par, _ = decompose(g, texp_ctx)
        assert norm2(g_par, texp_ctx) < norm2(g, texp_ctx) - 1e-3


class TestHomogeneity:
    def test_examples(self, const_ctx, texp_ctx):
        assert is_c_homogeneous(pearson(), texp_ctx)
        assert is_c_homogeneous(weighted_linear(), texp_ctx)
        assert is_c_homogeneous(spectral(1), const_ctx)
        assert not is_c_homogeneous(spectral(1), texp_ctx)
        assert not is_c_homogeneous(linear(), texp_ctx)

    def test_cash_homogeneous_only_on_constant(self, const_ctx, texp_ctx):
        # C(x; cash) varies with m, so it is constant across bins only when m is
        assert is_c_homogeneous(cash(), const_ctx)
        assert not is_c_homogeneous(cash(), texp_ctx)
