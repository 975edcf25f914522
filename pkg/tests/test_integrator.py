import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from helpers import field_from_seed
from stochns.errors import CFLViolation, VacuumError, WindowTooLongError
from stochns.fluid import FluidParams
from stochns.integrator import CutoffSystem, steps_for
from stochns.noise import NoiseModel, NoiseStream, WienerIncrement, sample_increments
from stochns.spectral import SpectralField, TorusGrid

seeds = st.integers(0, 2**32 - 1)


def rest(system, value=2.0):
    g = system.grid
    return system.initial_state(SpectralField.constant(g, value), SpectralField.zeros(g, vector=True))


def smooth(system, amp=0.1):
    g = system.grid
    r0 = SpectralField.from_function(g, lambda *x: 2.0 + 0.1 * np.cos(x[0]))
    u0 = SpectralField(g, amp * np.sin(g.nodes), vector=True)
    return system.initial_state(r0, u0)


class TestTransport:
    def test_frozen_when_at_rest(self):
        system = CutoffSystem(TorusGrid(1, 32))
        st0 = system.initial_state(field_from_seed(system.grid, 1) * 0.1 + 2.0,
                                   SpectralField.zeros(system.grid, vector=True))
        r, _, _ = system.transport_step(st0, 1e-2, 1.0)
        assert r.tobytes() == st0.r.values[0].tobytes()

    def test_constant_advection(self):
        g = TorusGrid(1, 64)
        system = CutoffSystem(g, R=10.0)
        r0 = field_from_seed(g, 2, cutoff=10) * 0.2 + 2.0
        c, dt = 0.7, 1e-2
        st0 = system.initial_state(r0, SpectralField.constant(g, [c], vector=True))
        r, _, _ = system.transport_step(st0, dt, 1.0)
        exact = r0.evaluate(g.nodes - c * dt)[0]
        np.testing.assert_allclose(r, exact, atol=1e-10)

    def test_characteristic_oracle(self):
        g = TorusGrid(1, 64)
        system = CutoffSystem(g, FluidParams(gamma=2.0), R=10.0)
        st0 = system.initial_state(SpectralField.constant(g, 1.0),
                                   SpectralField.from_function(g, lambda x: [np.sin(x)], vector=True))
        dt = 1e-3
        r, _, _ = system.transport_step(st0, dt, 1.0)

        # integrate backwards from (x, dt) to time 0 along dX/dt = sin X; the second
        # component ends at (1/2) int_0^dt cos X dt, so r(x, dt) = exp(-y1)
        def rhs(t, y):
            return [np.sin(y[0]), -0.5 * np.cos(y[0])]

        expected = []
        for x in g.nodes[0]:
            sol = solve_ivp(rhs, (dt, 0.0), [x, 0.0], rtol=1e-12, atol=1e-14)
            expected.append(np.exp(-sol.y[1, -1]))
        np.testing.assert_allclose(r, expected, atol=1e-8)

    def test_positivity_and_bounds_random(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, R=10.0)
        rng = np.random.default_rng(0)
        for _ in range(20):
            r0 = field_from_seed(g, int(rng.integers(2**32)), cutoff=5)
            r0 = r0 * (1.5 / np.max(np.abs(r0.values))) + 2.0
            u0 = field_from_seed(g, int(rng.integers(2**32)), vector=True, cutoff=5)
            st0 = system.initial_state(r0, u0)
            r, divu, _ = system.transport_step(st0, 1e-2, 1.0)
            fac = np.exp(0.5 * 1e-2 * divu)
            assert np.all(r > 0)
            assert np.min(r) >= st0.min_r / fac - 1e-12
            assert np.max(r) <= st0.max_r * fac + 1e-12

    def test_mean_conserved_for_solenoidal_flow(self):
        g = TorusGrid(2, 32)
        system = CutoffSystem(g, R=10.0)
        r0 = SpectralField.from_function(g, lambda x, y: 2.0 + 0.1 * np.cos(x) * np.sin(y))
        u0 = SpectralField.from_function(g, lambda x, y: [0.3 * np.sin(y), 0.3 * np.sin(x)], vector=True)
        state = system.initial_state(r0, u0)
        mean0 = np.mean(r0.values)
        for _ in range(1000):
            r, _, _ = system.transport_step(state, 1e-3, 1.0)
            state = system.state(state.t, SpectralField(g, r), u0)
        assert abs(np.mean(state.r.values) - mean0) < 1e-9


class TestCoupledStep:
    def test_rest_is_fixed_point(self):
        system = CutoffSystem(TorusGrid(1, 32))
        st0 = rest(system)
        st1, rep = system.coupled_step(st0, 1e-3)
        assert st1.r.values.tobytes() == st0.r.values.tobytes()
        assert not np.any(st1.u.values)
        assert rep.n_substeps == 1

    def test_plateau_freezes_dynamics(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, R=1.0, noise=NoiseModel.default(g, modes=4))
        u0 = SpectralField.from_function(g, lambda x: [3.0 * np.sin(x)], vector=True)
        st0 = system.initial_state(SpectralField.constant(g, 2.0) + 0.1 * SpectralField.from_function(g, np.cos), u0)
        assert st0.u_2inf >= system.R + 1
        inc = sample_increments(1e-3, NoiseStream(0), 0, 4)
        st1, rep = system.coupled_step(st0, 1e-3, inc, NoiseStream(0))
        assert rep.phi == 0.0
        assert st1.r.values.tobytes() == st0.r.values.tobytes()
        # u already lies in the Galerkin band, so the frozen step leaves it bit-for-bit unchanged
        assert st1.u.values.tobytes() == st0.u.values.tobytes()

    def test_substeps_when_viscous_limit_exceeded(self):
        g = TorusGrid(1, 128)
        system = CutoffSystem(g)
        st1, rep = system.coupled_step(smooth(system), 1e-3)
        assert rep.n_substeps >= 2 and rep.dt_reduced
        assert st1.t == pytest.approx(1e-3)

    def test_cfl_violation_when_halving_disallowed(self):
        g = TorusGrid(1, 128)
        system = CutoffSystem(g, max_halvings=0)
        with pytest.raises(CFLViolation):
            system.coupled_step(smooth(system), 1e-3)

    def test_vacuum_rejected(self):
        g = TorusGrid(1, 16)
        system = CutoffSystem(g)
        with pytest.raises(VacuumError):
            system.initial_state(SpectralField.from_function(g, np.cos), SpectralField.zeros(g, vector=True))


class TestRun:
    def test_zero_horizon(self):
        system = CutoffSystem(TorusGrid(1, 32))
        traj = system.run(smooth(system), 0.0, 1e-3)
        assert len(traj.states) == 1 and not traj.reports
        assert traj.series["t"] == [0.0]

    def test_steps_for_rejects_non_integer(self):
        with pytest.raises(ValueError):
            steps_for(0.0105, 1e-3)

    def test_deterministic(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g))
        a = system.run(smooth(system), 0.05, 1e-3, NoiseStream(5))
        b = system.run(smooth(system), 0.05, 1e-3, NoiseStream(5))
        assert a.final.u.values.tobytes() == b.final.u.values.tobytes()
        assert a.final.r.values.tobytes() == b.final.r.values.tobytes()

    def test_zero_noise_ignores_seed(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g, alpha0=0.0))
        a = system.run(smooth(system), 0.02, 1e-3, NoiseStream(1))
        b = system.run(smooth(system), 0.02, 1e-3, NoiseStream(2))
        assert a.final.u.values.tobytes() == b.final.u.values.tobytes()

    @settings(max_examples=10)
    @given(seeds, st.integers(3, 21))
    def test_velocity_stays_in_galerkin_band(self, seed, level):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, level=level, noise=NoiseModel.default(g))
        traj = system.run(smooth(system), 0.01, 1e-3, NoiseStream(seed), keep="all")
        outside = ~g.band_mask(g.galerkin_cutoff(level))
        for s in traj.states:
            assert np.max(np.abs(s.u.hat[..., outside]), initial=0.0) < 1e-15

    def test_tau_R_stop(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, R=0.05)
        traj = system.run(smooth(system, amp=0.1), 0.01, 1e-3, stop_on="tau_R")
        assert traj.status == "stopped"
        assert traj.events == [(0.0, "tau_R")]


class TestPicard:
    def test_rest_fixed_point(self):
        system = CutoffSystem(TorusGrid(1, 32))
        incs = [WienerIncrement(1e-3, np.zeros(0), step=j) for j in range(4)]
        _, rep = system.picard_solve(rest(system), incs, iterations=3)
        assert rep.distances == [0.0, 0.0, 0.0]

    def test_ratio_grows_with_window(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g, modes=4))
        state = smooth(system, amp=0.3)
        dt = 1e-3
        stream = NoiseStream(2)
        windows, ratios = [2, 4, 8], []
        for L in windows:
            incs = [sample_increments(dt, stream, j, 4) for j in range(L)]
            _, rep = system.picard_solve(state, incs, iterations=3)
            ratios.append(rep.ratios[0])
        assert all(r < 1 for r in ratios)
        assert np.polyfit(np.array(windows) * dt, ratios, 1)[0] > 0

    def test_more_iterations_shrink_distance(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g)
        state = smooth(system, amp=0.3)
        incs = [WienerIncrement(1e-3, np.zeros(0), step=j) for j in range(16)]
        _, short = system.picard_solve(state, incs, iterations=3)
        _, long = system.picard_solve(state, incs, iterations=6)
        q = max(short.ratios)
        # the floor is the round-off level of a 16-step path
        assert long.distances[-1] <= short.distances[-1] * q**3 + 1e-11
        assert long.distances[-1] < short.distances[-1]

    def test_window_too_long(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g)
        state = smooth(system, amp=0.3)
        incs = [WienerIncrement(0.05, np.zeros(0), step=j) for j in range(20)]
        with pytest.raises(WindowTooLongError):
            system.picard_solve(state, incs, iterations=4)
