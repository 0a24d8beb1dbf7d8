"""Analytic 1D toy problem: closed-form profile, operator, coercivity."""

import numpy as np
import pytest

from ksdlab.errors import DivergentIntegrand, DomainError, GridMismatch
from ksdlab.heat import (
    HeatParams,
    heat_apply_L,
    heat_coercivity,
    heat_multiplier_route,
    heat_profile,
    heat_profile_dy,
    heat_profile_residual,
    heat_weighted_inner,
    make_heat_suite,
)
from ksdlab.linops import PolyGauss, RadialQuad, SampledRadial


@pytest.fixture(scope="module")
def quad():
    return RadialQuad.make()


@pytest.fixture(scope="module")
def hp():
    return HeatParams(m=2)


def monomial(p, s):
    c = np.zeros(p + 1)
    c[p] = 1.0
    return PolyGauss(c, s)


class TestProfile:
    def test_values(self, hp):
        assert heat_profile(hp, 0.0) == 1.0
        assert heat_profile(hp, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_ode_residual(self, hp):
        rng = np.random.default_rng(0)
        y = rng.uniform(0.01, 50.0, size=100)
        assert np.max(np.abs(heat_profile_residual(hp, y))) <= 1e-13

    def test_derivative_fd(self, hp):
        y = np.linspace(0.2, 5.0, 11)
        h = 1e-6
        fd = (heat_profile(hp, y + h) - heat_profile(hp, y - h)) / (2 * h)
        assert np.allclose(heat_profile_dy(hp, y), fd, rtol=1e-8)

    def test_param_guards(self):
        with pytest.raises(DomainError):
            HeatParams(m=1)
        with pytest.raises(DomainError):
            HeatParams(m=2, c=-1.0)


class TestOperator:
    def test_zero_in_zero_out(self, hp, quad):
        z = PolyGauss(np.zeros(7), 1.0)
        out = heat_apply_L(hp, z, quad)
        assert np.all(out.vals == 0.0)

    def test_linearity(self, hp, quad):
        g, h = monomial(6, 1.0), monomial(8, 1.0)
        Ls = heat_apply_L(hp, g + h, quad)
        assert np.allclose(
            Ls.vals,
            heat_apply_L(hp, g, quad).vals + heat_apply_L(hp, h, quad).vals,
            rtol=1e-13,
            atol=1e-300,
        )

    def test_dilation_zero_mode(self, hp, quad):
        # y U*' generates the scaling symmetry, so L annihilates it; sample the
        # exact derivative and compare the operator output against zero
        y = quad.r
        mode = SampledRadial(r=y, vals=y * heat_profile_dy(hp, y), vanish_order=hp.min_vanish_order)
        out = heat_apply_L(hp, mode, quad)
        kappa = 0.1
        num = heat_weighted_inner(hp, out, out, kappa, quad)
        den = heat_weighted_inner(hp, mode, mode, kappa, quad)
        assert np.sqrt(num / den) < 1e-3  # finite-difference floor of the sampled route

    def test_grid_mismatch(self, hp, quad):
        bad = SampledRadial(r=quad.r[:-1], vals=quad.r[:-1], vanish_order=6)
        with pytest.raises(GridMismatch):
            heat_apply_L(hp, bad, quad)


class TestInner:
    def test_divergence_guard(self, hp, quad):
        with pytest.raises(DivergentIntegrand):
            heat_weighted_inner(hp, monomial(2, 1.0), monomial(2, 1.0), 0.1, quad)

    def test_multiplier_route(self, hp, quad):
        for p, s in ((6, 0.5), (6, 1.0), (8, 2.0)):
            g = monomial(p, s)
            Lg = heat_apply_L(hp, g, quad)
            direct = heat_weighted_inner(hp, Lg, g, 0.1, quad)
            route = heat_multiplier_route(hp, g, 0.1, quad)
            assert direct == pytest.approx(route, rel=1e-8)


class TestCoercivity:
    def test_all_quotients_bounded(self, hp):
        report = heat_coercivity(hp, make_heat_suite(hp, count=20))
        assert report["all_pass"]
        for r in report["records"]:
            assert r["quotient"] <= -0.125 + 1e-3

    def test_near_origin_cluster(self, hp):
        # tightly localized probes see the full multiplier: quotients near -3/8
        report = heat_coercivity(hp, make_heat_suite(hp, count=20))
        narrow = [r["quotient"] for r in report["records"] if r["s"] == 0.5]
        assert len(narrow) >= 3
        assert all(-0.45 < q < -0.30 for q in narrow)

    def test_scale_invariance_of_quotient(self, hp):
        quad = RadialQuad.make()
        g = monomial(6, 1.0)
        for scale in (1.0, 5.0):
            gs = g.scale(scale)
            Lg = heat_apply_L(hp, gs, quad)
            num = heat_weighted_inner(hp, Lg, gs, 0.1, quad)
            den = heat_weighted_inner(hp, gs, gs, 0.1, quad)
            if scale == 1.0:
                base = num / den
        assert num / den == pytest.approx(base, rel=1e-14)
