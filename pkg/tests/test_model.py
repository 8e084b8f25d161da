"""Tests for the jump-size density, its moments, and the jump operator.

Reference values were frozen from a 40-digit mpmath evaluation of the same
closed forms (standard-normal CDF oracle); live cross-checks use adaptive
quadrature from scipy, which is independent of the closed-form code paths.
"""

import numpy as np
import pytest
from scipy.integrate import quad

from pairstop.model import (
    JumpDensity,
    ModelParams,
    PiecewiseLinear,
    apply_jump_operator,
    convolve_with_density,
)

# mpmath oracle: 1 / (0.02 * sqrt(2 pi) * (2 Phi(2.5) - 1))
DENSITY_AT_ZERO = 20.1979591533
# mpmath oracle: (Phi(1.25) - Phi(-2.5)) / (2 Phi(2.5) - 1)
CDF_AT_HALF_JMAX = 0.899309381575


def paper_params(lam=10.0):
    return ModelParams(mu=8.0, sigma=0.2, lam=lam, a=-0.1, gamma=0.02, jmax=0.05)


class TestJumpDensity:
    def test_peak_value_against_closed_form_oracle(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        assert d.density(0.0) == pytest.approx(20.1980, abs=1e-3)
        assert d.density(0.0) == pytest.approx(DENSITY_AT_ZERO, rel=1e-10)

    def test_zero_outside_support_exactly(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        for y in (0.05, -0.05, 0.0500000001, 0.1, -3.0):
            assert d.density(y) == 0.0

    def test_symmetry_bit_identical(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        rng = np.random.default_rng(7)
        y = rng.uniform(-0.06, 0.06, size=500)
        assert np.array_equal(d.density(y), d.density(-y))

    def test_normalization_against_quadrature(self):
        for gamma, jmax in [(0.02, 0.05), (0.01, 0.02), (0.05, 0.04)]:
            d = JumpDensity(gamma, jmax)
            total, _ = quad(d.density, -jmax, jmax, epsabs=1e-13, epsrel=1e-13)
            assert abs(total - 1.0) < 1e-10

    def test_mean_zero(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        m, _ = quad(lambda y: y * d.density(y), -0.05, 0.05, epsabs=1e-14)
        assert abs(m) < 1e-10
        _, m1 = d.partial_moments(-0.05, 0.05)
        assert abs(m1) < 1e-16

    def test_cdf_endpoints_and_midpoint(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        assert d.cdf(-0.05) == 0.0
        assert d.cdf(0.05) == 1.0
        assert d.cdf(-1.0) == 0.0
        assert d.cdf(1.0) == 1.0
        assert abs(d.cdf(0.0) - 0.5) < 1e-15
        assert d.cdf(0.025) == pytest.approx(CDF_AT_HALF_JMAX, abs=1e-11)

    def test_cdf_strictly_increasing_inside_support(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        y = np.linspace(-0.0499, 0.0499, 401)
        c = d.cdf(y)
        assert np.all(np.diff(c) > 0.0)

    def test_cdf_matches_integrated_density(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        for y in (-0.04, -0.013, 0.007, 0.031, 0.049):
            val, _ = quad(d.density, -0.05, y, epsabs=1e-13, epsrel=1e-13)
            assert abs(val - d.cdf(y)) < 1e-10

    def test_partial_moments_against_quadrature(self):
        rng = np.random.default_rng(11)
        for gamma, jmax in [(0.02, 0.05), (0.05, 0.04)]:
            d = JumpDensity(gamma, jmax)
            for _ in range(20):
                lo, hi = np.sort(rng.uniform(-1.5 * jmax, 1.5 * jmax, size=2))
                m0, m1 = d.partial_moments(lo, hi)
                q0, _ = quad(d.density, lo, hi, epsabs=1e-14,
                             points=[p for p in (-jmax, jmax) if lo < p < hi])
                q1, _ = quad(lambda y: y * d.density(y), lo, hi, epsabs=1e-14,
                             points=[p for p in (-jmax, jmax) if lo < p < hi])
                assert abs(m0 - q0) < 1e-11
                assert abs(m1 - q1) < 1e-11

    def test_empty_or_outside_interval_gives_exact_zero(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        m0, m1 = d.partial_moments(0.05, 0.3)
        assert m0 == 0.0 and m1 == 0.0
        m0, m1 = d.partial_moments(0.02, 0.02)
        assert m0 == 0.0 and m1 == 0.0


class TestPiecewiseLinear:
    def test_nodal_values_and_zero_extension(self):
        v = PiecewiseLinear([0.0, 1.0, 2.0], [0.0, 3.0, 0.0])
        assert v(1.0) == 3.0
        assert v(0.5) == 1.5
        assert v(-0.1) == 0.0
        assert v(2.1) == 0.0
        out = v(np.array([-5.0, 0.0, 1.5, 2.0, 5.0]))
        assert out.tolist() == [0.0, 0.0, 1.5, 0.0, 0.0]

    def test_rejects_bad_nodes(self):
        with pytest.raises(ValueError):
            PiecewiseLinear([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            PiecewiseLinear([0.0, 1.0], [1.0, 2.0, 3.0])


class TestJumpOperator:
    def test_zero_function_maps_to_zero(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        v = PiecewiseLinear(np.linspace(-0.1, 0.06, 33), np.zeros(33))
        assert apply_jump_operator(d, 10.0, v, 0.01) == 0.0

    def test_lam_zero_maps_to_zero(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        nodes = np.linspace(-0.1, 0.06, 33)
        v = PiecewiseLinear(nodes, np.sin(nodes * 40.0))
        assert apply_jump_operator(d, 0.0, v, 0.01) == 0.0

    def test_hat_function_against_adaptive_quadrature(self):
        # fine-mesh hat, evaluated at its peak, against brute-force quadrature
        d = JumpDensity(gamma=0.02, jmax=0.05)
        a, b = -0.1, 0.0573
        nodes = np.linspace(a, b, 801)
        k = 400
        vals = np.zeros_like(nodes)
        vals[k] = 1.0
        v = PiecewiseLinear(nodes, vals)
        x = nodes[k]
        lam = 10.0

        kinks = sorted({nodes[k - 1], nodes[k], nodes[k + 1]})
        ref, _ = quad(lambda y: d.density(x - y) * v(y), nodes[k - 1], nodes[k + 1],
                      points=kinks, epsabs=1e-13, limit=200)
        got = apply_jump_operator(d, lam, v, x)
        assert abs(got - lam * (ref - v(x))) < 1e-8

    def test_general_profile_against_adaptive_quadrature(self):
        d = JumpDensity(gamma=0.02, jmax=0.05)
        a, b = -0.1, 0.0573
        nodes = np.linspace(a, b, 57)
        rng = np.random.default_rng(3)
        vals = rng.standard_normal(57)
        vals[0] = vals[-1] = 0.0
        v = PiecewiseLinear(nodes, vals)
        for x in (-0.08, -0.02, 0.0, 0.03, 0.055):
            lo, hi = max(a, x - 0.05), min(b, x + 0.05)
            pts = [p for p in nodes if lo < p < hi]
            ref, _ = quad(lambda y: d.density(x - y) * v(y), lo, hi,
                          points=pts, epsabs=1e-12, limit=400)
            got = convolve_with_density(d, v, x)
            assert abs(got - ref) < 1e-9

    def test_exactly_zero_beyond_reach(self):
        # x at distance >= jmax from the support must give a hard zero
        d = JumpDensity(gamma=0.02, jmax=0.05)
        nodes = np.linspace(-0.1, 0.0573, 101)
        rng = np.random.default_rng(5)
        vals = rng.standard_normal(101)
        vals[0] = vals[-1] = 0.0
        v = PiecewiseLinear(nodes, vals)
        assert convolve_with_density(d, v, 0.0573 + 0.05) == 0.0
        assert convolve_with_density(d, v, 0.0573 + 0.1) == 0.0
        assert convolve_with_density(d, v, -0.1 - 0.05) == 0.0

    def test_l2_contraction_bound(self):
        # || jump operator applied to v ||_L2(a,b) <= 2 lam ||v||_L2(a,b)
        d = JumpDensity(gamma=0.02, jmax=0.05)
        a, b = -0.1, 0.0573
        lam = 10.0
        rng = np.random.default_rng(13)
        xfine = np.linspace(a, b, 2001)
        for _ in range(5):
            nodes = np.linspace(a, b, 41)
            vals = rng.standard_normal(41)
            vals[0] = vals[-1] = 0.0
            v = PiecewiseLinear(nodes, vals)
            iv = apply_jump_operator(d, lam, v, xfine)
            norm_iv = np.sqrt(np.trapezoid(iv**2, xfine))
            norm_v = np.sqrt(np.trapezoid(v(xfine) ** 2, xfine))
            assert norm_iv <= 2.0 * lam * norm_v * (1.0 + 1e-6)


class TestModelParams:
    def test_valid_paper_parameters(self):
        p = paper_params()
        assert p.mu == 8.0 and p.jmax == 0.05
        assert isinstance(p.jump_density(), JumpDensity)

    @pytest.mark.parametrize(
        "field,value",
        [
            ("mu", 0.0),
            ("mu", -1.0),
            ("sigma", 0.0),
            ("lam", -0.5),
            ("a", 0.0),
            ("a", 0.1),
            ("gamma", 0.0),
            ("jmax", -0.05),
        ],
    )
    def test_invalid_field_raises_naming_field(self, field, value):
        kwargs = dict(mu=8.0, sigma=0.2, lam=10.0, a=-0.1, gamma=0.02, jmax=0.05)
        kwargs[field] = value
        with pytest.raises(ValueError, match=field):
            ModelParams(**kwargs)

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="sigma"):
            ModelParams(mu=8.0, sigma=float("nan"), lam=10.0, a=-0.1, gamma=0.02, jmax=0.05)
