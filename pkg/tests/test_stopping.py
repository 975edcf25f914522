import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochns.errors import GuardInconsistencyError, ShellScheduleError
from stochns.integrator import CutoffSystem
from stochns.noise import NoiseModel, NoiseStream, default_alphas
from stochns.spectral import SpectralField, TorusGrid
from stochns.stopping import (
    Series,
    ShellSchedule,
    check_tau_K,
    check_tau_R,
    classify_initial,
    maximal_continuation,
)

DT = 1e-3


def planted(n=100, **overrides):
    """Synthetic per-step series, flat and well inside every threshold."""
    base = dict(t=np.arange(n) * DT, u_2inf=np.full(n, 0.1), r_1inf=np.full(n, 2.0),
                u_s2=np.full(n, 0.5), r_s2=np.full(n, 2.0), min_r=np.full(n, 1.9))
    base.update(overrides)
    return Series({k: list(v) for k, v in base.items()}, T=(n - 1) * DT)


def rest_system(g, R=10.0, noise=None):
    system = CutoffSystem(g, R=R, noise=noise)
    return system, system.initial_state(SpectralField.constant(g, 2.0), SpectralField.zeros(g, vector=True))


def forced_growth_system(amp=5.0, R=0.5):
    g = TorusGrid(1, 64)
    a = np.zeros((2, 1) + g.shape)
    a[0, 0] = amp * np.cos(g.nodes[0])
    a[1, 0] = amp * np.sin(g.nodes[0])
    return rest_system(g, R, NoiseModel(g, default_alphas(2, 0.1), a=a))


class TestTauR:
    def test_crossed_at_start(self):
        g = TorusGrid(1, 32)
        system = CutoffSystem(g, R=1.0)
        u0 = SpectralField.from_function(g, lambda x: [3.0 * np.sin(x)], vector=True)
        st0 = system.initial_state(SpectralField.constant(g, 2.0), u0)
        traj = system.run(st0, 0.01, DT)
        assert check_tau_R(traj, 1.0) == 0.0

    def test_rest_never_crosses(self):
        system, st0 = rest_system(TorusGrid(1, 32))
        traj = system.run(st0, 0.05, DT)
        assert check_tau_R(traj, 0.5) == pytest.approx(0.05)

    def test_planted_crossing(self):
        u = np.full(100, 0.1)
        u[37:] = 5.0
        assert check_tau_R(planted(u_2inf=u), 4.0) == pytest.approx(37 * DT)

    @given(st.lists(st.floats(0, 10), min_size=2, max_size=50), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_monotone_in_R(self, values, R1, R2):
        tr = planted(len(values), u_2inf=np.array(values))
        lo, hi = sorted((R1, R2))
        assert check_tau_R(tr, lo) <= check_tau_R(tr, hi)


class TestTauK:
    def test_small_minimum_fires_immediately(self):
        rec = check_tau_K(planted(min_r=np.full(100, 0.05)), K=5.0)
        assert rec.tau3_K == 0.0
        assert rec.triggered == "tau3_K"

    def test_rest_state(self):
        system, st0 = rest_system(TorusGrid(1, 32))
        traj = system.run(st0, 0.02, DT)
        rec = check_tau_K(traj, K=10.0)
        assert rec.tau1_K == rec.tau2_K == rec.tau3_K == pytest.approx(0.02)
        assert rec.triggered == ""

    def test_planted_second_threshold(self):
        r = np.full(100, 2.0)
        r[12:] = 9.0
        u = np.full(100, 0.5)
        u[40:] = 9.0
        rec = check_tau_K(planted(r_s2=r, u_s2=u), K=8.0)
        assert rec.triggered == "tau2_K"
        assert rec.tau_K == pytest.approx(12 * DT)
        assert rec.tau_K == min(rec.tau1_K, rec.tau2_K, rec.tau3_K)

    def test_guard_inconsistency_detected(self):
        u = np.full(100, 0.1)
        u[5:] = 50.0
        with pytest.raises(GuardInconsistencyError):
            check_tau_K(planted(u_2inf=u), K=8.0, R=10.0)


class TestShells:
    schedule = ShellSchedule(1.0, 1.0, bound=16)

    def test_tiny_datum(self):
        g = TorusGrid(1, 32)
        idx = classify_initial(SpectralField.constant(g, 0.5), SpectralField.zeros(g, vector=True),
                               ShellSchedule(1.0, 1.0), 4)
        # min r0 = 0.5 > 1/K(M) needs K(M) = 0.9 M > 2
        assert idx.M == 3
        # K(1) = 0.9 < 1 leaves shell 1 empty (min r0 > 1/K and ||r0|| < K cannot both hold),
        # so the smallest data land in shell 2
        tiny = classify_initial(SpectralField.constant(g, 1.0), SpectralField.zeros(g, vector=True),
                                ShellSchedule(0.01, 0.01), 4)
        assert tiny.M == 2

    def test_boundary_between_shells(self):
        g = TorusGrid(1, 32)
        # ||A sin x||_{4,2} = A sqrt(2); place it between K(4) = 3.6 and K(5) = 4.5
        u0 = SpectralField.from_function(g, lambda x: [4.0 / np.sqrt(2) * np.sin(x)], vector=True)
        idx = classify_initial(SpectralField.constant(g, 0.5), u0, self.schedule, 4)
        assert idx.M == 5

    def test_strict_minimum(self):
        g = TorusGrid(1, 32)
        r0 = SpectralField.constant(g, 1.0 / self.schedule.K(3))
        idx = classify_initial(r0, SpectralField.zeros(g, vector=True), self.schedule, 4)
        assert idx.M == 4

    def test_outside_every_shell(self):
        g = TorusGrid(1, 32)
        with pytest.raises(ShellScheduleError):
            classify_initial(SpectralField.constant(g, 100.0), SpectralField.zeros(g, vector=True),
                             ShellSchedule(1.0, 1.0, bound=4), 4)

    @given(st.floats(0.05, 10), st.floats(0, 10))
    def test_partition(self, rmin, amp):
        g = TorusGrid(1, 16)
        r0 = SpectralField.constant(g, rmin)
        u0 = SpectralField.from_function(g, lambda x: [amp * np.sin(x)], vector=True)
        try:
            idx = classify_initial(r0, u0, self.schedule, 4)
        except ShellScheduleError:
            return
        K = idx.K
        assert rmin < K and amp * np.sqrt(2) < K * (1 + 1e-12) and rmin > 1 / K
        if idx.M > 1:
            Kp = self.schedule.K(idx.M - 1)
            assert not (rmin < Kp and amp * np.sqrt(2) < Kp and rmin > 1 / Kp)

    def test_schedule_margin(self):
        sched = ShellSchedule.estimate(TorusGrid(1, 64), 4, trials=500)
        assert sched.K(3) < 3 / max(1.0, sched.c1, sched.c2)


class TestContinuation:
    def test_rest_state(self):
        system, st0 = rest_system(TorusGrid(1, 32), R=1.0)
        res = maximal_continuation(system, st0, 0.05, DT, None, [1.0, 2.0], budget=1000)
        assert all(t == pytest.approx(0.05) for t in res.announcing)
        assert res.t_explosion == pytest.approx(0.05)
        assert not res.blow_up

    def test_forced_growth(self):
        system, st0 = forced_growth_system()
        res = maximal_continuation(system, st0, 1.0, DT, NoiseStream(0), [0.5, 1.0, 2.0, 4.0], 100_000)
        t = res.announcing
        assert res.blow_up and len(t) == 4
        assert all(b > a for a, b in zip(t, t[1:]))
        assert all(lv.certified for lv in res.levels)
        assert res.t_explosion == t[-1]

    def test_level_that_never_fires(self):
        system, st0 = forced_growth_system(amp=0.01)
        res = maximal_continuation(system, st0, 0.05, DT, NoiseStream(0), [0.5, 1.0], 100_000)
        assert not res.blow_up and not res.inconclusive
        assert res.t_explosion == pytest.approx(0.05)
        assert not any(lv.certified for lv in res.levels)

    def test_budget_exhaustion(self):
        system, st0 = forced_growth_system(amp=0.01)
        res = maximal_continuation(system, st0, 0.05, DT, NoiseStream(0), [0.5, 1.0], budget=10)
        assert res.inconclusive and res.steps_used == 10

    def test_rejects_nonincreasing_schedule(self):
        system, st0 = rest_system(TorusGrid(1, 32))
        with pytest.raises(ValueError):
            maximal_continuation(system, st0, 0.01, DT, None, [2.0, 1.0], 10)
