import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import field_from_seed
from stochns.errors import SingularCoefficientError, VacuumError
from stochns.fluid import (
    CutoffSpec,
    FluidParams,
    coeff_D,
    cutoff_phi,
    pressure_gradient_term,
    r_to_rho,
    rho_to_r,
    stress_divergence,
    stress_divergence_tensor,
    stress_tensor,
)
from stochns.spectral import SpectralField, TorusGrid, derivative, gradient, dealias_product

seeds = st.integers(0, 2**32 - 1)
gammas = st.sampled_from([1.4, 5.0 / 3.0, 2.0])


def positive_field(grid, seed, mean=2.0, amp=0.5):
    f = field_from_seed(grid, seed, cutoff=grid.dealias_cutoff // 2)
    return f * (amp / max(np.max(np.abs(f.values)), 1e-300)) + mean


class TestTransforms:
    def test_unit_density(self):
        assert rho_to_r(1.0, FluidParams()) == pytest.approx(2.0, abs=1e-15)

    def test_density_four(self):
        assert rho_to_r(4.0, FluidParams()) == pytest.approx(4.0, abs=1e-15)

    def test_inverse(self):
        assert r_to_rho(2.0, FluidParams()) == pytest.approx(1.0, abs=1e-15)

    def test_scalar_oracle_gamma_14(self):
        mpmath.mp.dps = 40
        g, rho = mpmath.mpf("1.4"), mpmath.mpf("1.7")
        exact = mpmath.sqrt(2 * g / (g - 1)) * rho ** ((g - 1) / 2)
        p = FluidParams(gamma=1.4)
        assert rho_to_r(1.7, p) == pytest.approx(float(exact), rel=1e-14)
        assert r_to_rho(rho_to_r(1.7, p), p) == pytest.approx(1.7, rel=1e-12)

    def test_D_values(self):
        assert coeff_D(2.0, FluidParams()) == pytest.approx(1.0)
        assert coeff_D(4.0, FluidParams()) == pytest.approx(0.25)

    @given(seeds, gammas)
    def test_roundtrip_and_reciprocal(self, seed, gamma):
        grid = TorusGrid(1, 32)
        p = FluidParams(gamma=gamma)
        rho = positive_field(grid, seed, mean=1.5, amp=1.0)
        back = r_to_rho(rho_to_r(rho, p), p)
        np.testing.assert_allclose(back.values, rho.values, rtol=1e-12)
        r = rho_to_r(rho, p)
        np.testing.assert_allclose(coeff_D(r, p).values * r_to_rho(r, p).values, 1.0, rtol=1e-12)

    def test_vacuum_names_node(self):
        vals = np.ones(8)
        vals[5] = 0.0
        with pytest.raises(VacuumError) as exc:
            rho_to_r(vals, FluidParams())
        assert exc.value.node == (5,)

    def test_floor(self):
        with pytest.raises(SingularCoefficientError):
            coeff_D(np.array([1.0, 1e-9]), FluidParams(), r_floor=1e-6)

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            FluidParams(gamma=1.0)
        with pytest.raises(ValueError):
            FluidParams(lam=-1.0)


class TestStress:
    def test_constant_velocity(self):
        g = TorusGrid(2, 16)
        u = SpectralField.constant(g, [1.0, -2.0], vector=True)
        assert np.max(np.abs(stress_divergence(u, FluidParams()).values)) < 1e-13

    def test_one_dimensional_reduction(self):
        g = TorusGrid(1, 32)
        u = SpectralField.from_function(g, lambda x: [np.sin(x)], vector=True)
        out = stress_divergence(u, FluidParams())
        np.testing.assert_allclose(out.values[0], -(4.0 / 3.0) * np.sin(g.nodes[0]), atol=1e-13)

    def test_shear_flow(self):
        g = TorusGrid(2, 16)
        u = SpectralField.from_function(g, lambda x, y: [np.sin(y), 0 * x], vector=True)
        out = stress_divergence(u, FluidParams(mu=0.7, lam=0.2))
        np.testing.assert_allclose(out.values[0], -0.7 * np.sin(g.nodes[1]), atol=1e-13)
        np.testing.assert_allclose(out.values[1], 0.0, atol=1e-13)

    @pytest.mark.parametrize("dim,M", [(1, 32), (2, 16), (3, 8)])
    def test_closed_form_equals_tensor_divergence(self, dim, M):
        g = TorusGrid(dim, M)
        p = FluidParams(mu=1.3, lam=0.4)
        rng = np.random.default_rng(dim)
        for _ in range(100 if dim < 3 else 20):
            u = field_from_seed(g, int(rng.integers(2**32)), vector=True, cutoff=g.dealias_cutoff)
            a = stress_divergence(u, p).values
            b = stress_divergence_tensor(u, p).values
            np.testing.assert_allclose(a, b, atol=1e-10)

    @given(seeds, st.integers(0, 3))
    def test_dissipation_sign(self, seed, order):
        g = TorusGrid(2, 16)
        p = FluidParams(mu=1.0, lam=0.0)
        D = coeff_D(positive_field(g, seed), p).values[0]
        u = field_from_seed(g, seed + 1, vector=True)
        alpha = (order, 0)
        du = derivative(u, alpha)
        S = stress_tensor(du, p)
        grad = np.array([gradient(du.component(i)).values for i in range(2)])
        integrand = D * np.einsum("ij...,ij...->...", S, grad)
        assert np.mean(integrand) >= -1e-12


class TestPressureTerm:
    def test_constant(self):
        g = TorusGrid(1, 32)
        assert np.max(np.abs(pressure_gradient_term(SpectralField.constant(g, 3.0)).values)) < 1e-13

    def test_sine(self):
        g = TorusGrid(1, 32)
        r = SpectralField.from_function(g, np.sin)
        np.testing.assert_allclose(pressure_gradient_term(r).values[0], 0.5 * np.sin(2 * g.nodes[0]),
                                   atol=1e-12)

    @given(seeds)
    def test_half_gradient_of_square(self, seed):
        g = TorusGrid(1, 64)
        r = positive_field(g, seed)
        half_grad_sq = gradient(dealias_product(r, r)) * 0.5
        np.testing.assert_allclose(pressure_gradient_term(r).values, half_grad_sq.values, atol=1e-10)


class TestCutoff:
    def test_plateaus(self):
        spec = CutoffSpec(3.0)
        assert cutoff_phi(spec, 3.0) == 1.0
        assert cutoff_phi(spec, 4.0) == 0.0
        assert cutoff_phi(spec, 0.0) == 1.0

    def test_midpoint(self):
        assert cutoff_phi(CutoffSpec(2.0), 2.5) == pytest.approx(0.5, abs=1e-15)

    def test_quarter_point(self):
        t = 0.25
        expected = 1 - (6 * t**5 - 15 * t**4 + 10 * t**3)
        assert expected == 0.896484375
        assert cutoff_phi(CutoffSpec(2.0), 2.25) == pytest.approx(expected, abs=1e-15)

    def test_lipschitz_and_range(self):
        spec = CutoffSpec(1.5)
        rng = np.random.default_rng(0)
        y1, y2 = rng.uniform(0, 4, (2, 10_000))
        p1, p2 = spec(y1), spec(y2)
        assert np.all((p1 >= 0) & (p1 <= 1))
        assert np.all(np.abs(p1 - p2) <= CutoffSpec.LIPSCHITZ * np.abs(y1 - y2) + 1e-15)

    @given(st.floats(0, 10), st.floats(0, 10))
    def test_nonincreasing(self, a, b):
        spec = CutoffSpec(4.0)
        lo, hi = sorted((a, b))
        assert spec(lo) >= spec(hi)
