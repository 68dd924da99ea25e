import numpy as np
import pytest

from adstm.grid import GridSpec, SpectralCoeffs, analyze, spectral_basis, synthesize
from adstm.physics import (FlowFields, apply_operator, derive_diffusivity, galerkin_generator, galerkin_transition,
                           kmh_per_unit, periodic_gradient, uniform_flow, zero_flow)
from adstm.simulator import step_pde


def smooth_flow(grid):
    s1, s2 = grid.coords()
    vx = 0.0106 + 0.003 * np.sin(2 * np.pi * s2)
    vy = 0.0106 + 0.003 * np.cos(2 * np.pi * s1)
    D = 5e-4 * (1 + 0.5 * np.cos(2 * np.pi * s1))
    return FlowFields(vx, vy, D)


def band_limited_field(grid):
    s1, s2 = grid.coords()
    return (1 + np.cos(2 * np.pi * s1) + 0.5 * np.sin(2 * np.pi * (s1 + 2 * s2))
            + 0.3 * np.cos(4 * np.pi * s2))


class TestFlowFields:
    def test_uniform_components(self):
        f = uniform_flow(GridSpec(4, 4), 0.015, 45)
        assert f.vx[0, 0] == pytest.approx(0.015 / np.sqrt(2))
        assert f.vy[0, 0] == pytest.approx(0.015 / np.sqrt(2))
        assert f.is_uniform()

    def test_negative_diffusivity_rejected(self):
        z = np.zeros((4, 4))
        with pytest.raises(ValueError):
            FlowFields(z, z, z - 1)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            FlowFields(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((2, 2)))

    def test_kmh_conversion(self):
        k1, _ = kmh_per_unit(GridSpec(20, 20, step_lat=0.04))
        # 20 cells of 0.04 degrees per 5 minutes
        assert k1 == pytest.approx(20 * 0.04 * 111.32 * 12)


class TestOperator:
    def test_constant_field_is_stationary(self):
        g = GridSpec(8, 8)
        assert np.allclose(apply_operator(np.ones(g.shape), smooth_flow(g)), 0.0)

    def test_zero_flow_zero_output(self, rng):
        g = GridSpec(8, 8)
        assert np.allclose(apply_operator(rng.standard_normal(g.shape), zero_flow(g)), 0.0)

    def test_cosine_advection(self):
        g = GridSpec(16, 16)
        s1, _ = g.coords()
        c = 0.3
        f = np.cos(2 * np.pi * s1)
        out = apply_operator(f, uniform_flow(g, c, 0.0), grad=(-2 * np.pi * np.sin(2 * np.pi * s1), 0 * s1),
                             lap=-(2 * np.pi) ** 2 * f)
        assert np.allclose(out, 2 * np.pi * c * np.sin(2 * np.pi * s1))

    def test_pure_advection_of_a_mode(self):
        g = GridSpec(16, 16)
        s1, _ = g.coords()
        f = np.sin(2 * np.pi * s1)
        out = apply_operator(f, uniform_flow(g, 0.5, 0.0), grad=(2 * np.pi * np.cos(2 * np.pi * s1), 0 * s1),
                             lap=-(2 * np.pi) ** 2 * f)
        assert np.allclose(out, -0.5 * 2 * np.pi * np.cos(2 * np.pi * s1))


class TestGalerkin:
    def test_zero_flow_zero_generator(self):
        g = GridSpec(8, 8)
        tm = galerkin_transition(zero_flow(g), (6, 6), g)
        assert np.allclose(tm.p, 0.0) and np.allclose(tm.exp_p, np.eye(36))

    def test_constant_coefficients_decouple_frequencies(self):
        g = GridSpec(16, 16)
        P = galerkin_generator(uniform_flow(g, 0.02, 30.0, diffusivity=1e-3), (10, 10), g)
        basis = spectral_basis(10, 10)
        f = [tuple(k) for k in basis.freqs]
        for i in range(basis.dim):
            for j in range(basis.dim):
                if f[i] != f[j]:
                    assert abs(P[i, j]) <= 1e-10

    def test_constant_coefficients_rotate_each_pair(self):
        g = GridSpec(16, 16)
        v, th, D = 0.02, np.deg2rad(30.0), 1e-3
        P = galerkin_generator(uniform_flow(g, v, 30.0, diffusivity=D), (16, 16), g)
        basis = spectral_basis(16, 16)
        k = np.array([2, -3])
        ic = next(i for i, (q, s) in enumerate(zip(basis.freqs, basis.is_sin)) if tuple(q) == (2, -3) and not s)
        is_ = next(i for i, (q, s) in enumerate(zip(basis.freqs, basis.is_sin)) if tuple(q) == (2, -3) and s)
        omega = 2 * np.pi * v * (k[0] * np.cos(th) + k[1] * np.sin(th))
        decay = -D * (2 * np.pi) ** 2 * (k @ k)
        assert P[ic, ic] == pytest.approx(decay) and P[is_, is_] == pytest.approx(decay)
        assert P[ic, is_] == pytest.approx(-omega) and P[is_, ic] == pytest.approx(omega)

    def test_mean_conserved(self):
        g = GridSpec(16, 16)
        E = galerkin_transition(smooth_flow(g), (16, 16), g).exp_p
        x = band_limited_field(g)
        a = analyze(x).values
        y = synthesize(SpectralCoeffs(E @ a, (16, 16)), g)
        assert y.mean() == pytest.approx(x.mean(), abs=1e-3)

    def test_mean_conserved_constant_coefficients(self, rng):
        g = GridSpec(16, 16)
        E = galerkin_transition(uniform_flow(g, 0.03, 70.0, diffusivity=2e-3), (10, 10), g).exp_p
        a = rng.standard_normal(100)
        before = synthesize(SpectralCoeffs(a, (10, 10)), g).mean()
        after = synthesize(SpectralCoeffs(E @ a, (10, 10)), g).mean()
        assert abs(after - before) <= 1e-8

    def test_matches_finite_difference_oracle(self):
        g = GridSpec(16, 16)
        flow = smooth_flow(g)
        x = band_limited_field(g)
        E = galerkin_transition(flow, (16, 16), g).exp_p
        spectral = synthesize(SpectralCoeffs(E @ analyze(x).values, (16, 16)), g)
        fd = step_pde(x, flow, 1.0, substeps=10)
        assert np.linalg.norm(spectral - fd) / np.linalg.norm(fd) <= 0.02

    def test_uniform_translation_exact(self):
        g = GridSpec(16, 16)
        s1, s2 = g.coords()
        x = np.cos(2 * np.pi * (s1 + s2)) + 0.5 * np.sin(2 * np.pi * 3 * s2)
        shift = np.array([0.1, -0.05])
        flow = uniform_flow(g, np.hypot(*shift), np.rad2deg(np.arctan2(shift[1], shift[0])))
        E = galerkin_transition(flow, (16, 16), g).exp_p
        y = synthesize(SpectralCoeffs(E @ analyze(x).values, (16, 16)), g)
        expect = np.cos(2 * np.pi * (s1 - 0.1 + s2 + 0.05)) + 0.5 * np.sin(2 * np.pi * 3 * (s2 + 0.05))
        assert np.allclose(y, expect, atol=1e-10)


class TestDiffusivity:
    def test_linear_shear(self):
        g = GridSpec(20, 20)
        s1, s2 = g.coords()
        c = 0.3
        flow = FlowFields(c * s2, np.zeros(g.shape), np.zeros(g.shape))
        D = derive_diffusivity(flow, 0.05, 0.05)
        assert np.allclose(D, 0.28 * 0.05 * 0.05 * c)

    def test_uniform_flow_zero_diffusivity(self):
        g = GridSpec(8, 8)
        assert np.allclose(derive_diffusivity(uniform_flow(g, 0.1, 10), 0.1, 0.1), 0.0)

    def test_periodic_gradient_of_mode(self):
        g = GridSpec(64, 64)
        s1, _ = g.coords()
        d1, d2 = periodic_gradient(np.sin(2 * np.pi * s1))
        assert np.allclose(d1, 2 * np.pi * np.cos(2 * np.pi * s1), atol=0.02) and np.allclose(d2, 0)
