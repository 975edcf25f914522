import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochns.diagnostics import (
    CauchyRow,
    commutator_ensemble,
    commutator_norms,
    count_violations,
    energy_report,
    fit_constant,
    ito_residual,
    maxprinciple_audit,
    uniqueness_experiment,
    cauchy_in_probability,
    random_state,
)
from stochns.errors import AuditFailure, ProtocolError
from stochns.integrator import CutoffSystem
from stochns.noise import NoiseModel, NoiseStream
from stochns.spectral import SpectralField, TorusGrid

DT = 1e-3


def smooth_data(g, amp=0.1):
    r0 = SpectralField.from_function(g, lambda *x: 2.0 + 0.1 * np.cos(x[0]))
    u0 = SpectralField(g, amp * np.sin(g.nodes), vector=True)
    return r0, u0


class TestFitProtocol:
    def test_fit_ignores_non_finite(self):
        assert fit_constant([0.5, np.inf, 1.5, np.nan]) == 1.5

    def test_violations_use_headroom(self):
        assert count_violations([1.0, 1.05, 1.2], 1.0) == 1


class TestCommutators:
    def test_constant_velocity(self):
        g = TorusGrid(1, 64)
        system = CutoffSystem(g, s=3)
        r = SpectralField.from_function(g, lambda x: 2.0 + 0.2 * np.sin(2 * x))
        state = system.initial_state(r, SpectralField.constant(g, [0.4], vector=True))
        n = commutator_norms(state).norms
        assert n[0] < 1e-12 and n[1] < 1e-12 and n[2] < 1e-12

    def test_constant_r(self):
        g = TorusGrid(1, 64)
        system = CutoffSystem(g, s=3)
        u = SpectralField.from_function(g, lambda x: [0.3 * np.sin(x)], vector=True)
        state = system.initial_state(SpectralField.constant(g, 2.0), u)
        rep = commutator_norms(state)
        assert rep.norms[1] < 1e-12 and rep.norms[3] < 1e-12
        # grad D vanishes, so only the second factor of the T5 bound survives
        assert rep.norms[4] <= rep.bounds[4] * 10 + 1e-12

    def test_fit_validate_two_dimensions(self):
        g = TorusGrid(2, 16)
        system = CutoffSystem(g, s=3)
        fit = commutator_ensemble(system, 40, seed=0)
        fresh = commutator_ensemble(system, 20, seed=1)
        for i in range(5):
            assert np.isfinite(fit_constant(fit[:, i]))
        assert fresh.shape == (20, 5)


class TestItoResidual:
    def test_rest_state(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g)
        st0 = system.initial_state(SpectralField.constant(g, 2.0), SpectralField.zeros(g, vector=True))
        traj = system.run(st0, 0.01, DT, keep="all")
        assert np.max(np.abs(ito_residual(system, traj, (2,)))) < 1e-20

    def test_needs_all_states(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g)
        traj = system.run(system.initial_state(*smooth_data(g)), 0.01, DT, keep="last")
        with pytest.raises(ValueError):
            ito_residual(system, traj, (1,))

    def test_noisy_replay_uses_recorded_increments(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g, modes=4))
        stream = NoiseStream(3)
        traj = system.run(system.initial_state(*smooth_data(g)), 0.01, DT, stream, keep="all",
                          record_increments=True)
        res = ito_residual(system, traj, (1,), stream)
        assert res.shape == (10,) and np.all(np.isfinite(res))


class TestAudit:
    def test_static_path(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g)
        state = system.initial_state(SpectralField.constant(g, 2.0), SpectralField.zeros(g, vector=True))
        traj = system.run(state, 0.05, DT, keep="all")
        assert np.ptp(traj.array("min_r")) == 0.0
        rep = maxprinciple_audit(traj, 2.0, 10.0)
        assert rep.passed and rep.lower_margin == 0.0 and rep.upper_margin == 0.0

    def test_constant_advection_preserves_extrema(self):
        g = TorusGrid(1, 64)
        system = CutoffSystem(g, R=10.0)
        r0 = SpectralField.constant(g, 2.0)
        state = system.initial_state(r0, SpectralField.constant(g, [0.5], vector=True))
        traj = system.run(state, 0.05, DT, keep="all")
        assert np.ptp(traj.array("min_r")) == 0.0 and np.ptp(traj.array("max_r")) == 0.0
        assert maxprinciple_audit(traj, 2.0, 10.0).passed

    def test_noisy_run(self):
        g = TorusGrid(1, 64)
        system = CutoffSystem(g, noise=NoiseModel.default(g))
        traj = system.run(system.initial_state(*smooth_data(g)), 0.1, DT, NoiseStream(1), keep="all")
        rep = maxprinciple_audit(traj, 2.0, system.R, strict=True)
        assert rep.passed and rep.positive
        assert np.isfinite(rep.c_hat)

    def test_strict_failure(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g)
        traj = system.run(system.initial_state(*smooth_data(g)), 0.01, DT, keep="all")
        traj.series["min_r"][-1] = 0.5
        with pytest.raises(AuditFailure):
            maxprinciple_audit(traj, 2.0, 10.0, strict=True)


class TestUniqueness:
    def test_identical_inputs_give_zero(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g))
        a = system.initial_state(*smooth_data(g))
        b = system.initial_state(*smooth_data(g))
        stream = NoiseStream(9)
        rep = uniqueness_experiment(system, a, b, 0.05, DT, stream, stream, c_R=1.0)
        assert not np.any(rep.dist_l2) and not np.any(rep.dist_m) and not np.any(rep.Q)

    def test_rejects_different_streams(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g))
        a = system.initial_state(*smooth_data(g))
        with pytest.raises(ProtocolError):
            uniqueness_experiment(system, a, a, 0.01, DT, NoiseStream(1), NoiseStream(2))


class TestCauchy:
    def test_identical_levels(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g))
        rows = cauchy_in_probability(system, *smooth_data(g), [9, 9], 3, [1e-2], 0.02, DT, 0)
        assert rows[0].max == 0.0 and rows[0].exceedance == (0.0,)

    def test_deterministic_spectral_decay(self):
        g = TorusGrid(1, 64)
        system = CutoffSystem(g)
        r0 = SpectralField.from_function(g, lambda x: 2.0 + 0.1 * np.cos(x) + 0.05 * np.sin(3 * x))
        u0 = SpectralField.from_function(g, lambda x: [0.5 * np.sin(x) + 0.2 * np.cos(2 * x)], vector=True)
        rows = cauchy_in_probability(system, r0, u0, [5, 9, 17, 33], 1, [1e-2], 0.05, DT, 0)
        d = [row.max for row in rows]
        for a, b in zip(d, d[1:]):
            if b > 1e-12:
                assert a / b >= 10

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30),
           st.lists(st.floats(1e-4, 1), min_size=2, max_size=5, unique=True))
    def test_exceedance_monotone_in_epsilon(self, dists, eps):
        eps = tuple(sorted(eps))
        row = CauchyRow(8, 16, len(dists), np.array(dists), eps)
        ex = row.exceedance
        assert all(a >= b for a, b in zip(ex, ex[1:]))


class TestEnergy:
    def test_rest_ensemble(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g)
        st0 = system.initial_state(SpectralField.constant(g, 2.0), SpectralField.zeros(g, vector=True))
        trajs = [system.run(st0, 0.01, DT, keep="all") for _ in range(3)]
        rep = energy_report(trajs, 4)
        np.testing.assert_allclose(rep.sup_norm2, rep.initial)
        assert not np.any(rep.dissipation)

    def test_zero_noise_paths_identical(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, noise=NoiseModel.default(g, alpha0=0.0))
        st0 = system.initial_state(*smooth_data(g))
        trajs = [system.run(st0, 0.01, DT, NoiseStream(p), keep="all") for p in range(3)]
        rep = energy_report(trajs, 4)
        assert np.ptp(rep.X) == 0.0
        single = energy_report(trajs[:1], 4)
        assert rep.c_hat == single.c_hat


class TestRandomState:
    @settings(max_examples=10)
    @given(st.integers(0, 2**32 - 1))
    def test_positive_and_band_limited(self, seed):
        system = CutoffSystem(TorusGrid(1, 64), s=3)
        state = random_state(system, np.random.default_rng(seed))
        assert state.min_r > 0
