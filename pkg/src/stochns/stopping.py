"""Stopping times, shell classification of initial data and maximal continuation.

All first-crossing times are grid times of the discrete trajectory; an empty
crossing set yields the horizon ``T`` (``inf {} = T``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GuardInconsistencyError, ShellScheduleError
from .integrator import CutoffSystem, State, Trajectory, steps_for
from .noise import NoiseStream
from .spectral import SpectralField, TorusGrid, continuous_extrema, embedding_constant, sobolev_norm

K_MARGIN = 0.9


@dataclass
class Series:
    """Minimal trajectory stand-in: per-step scalar series plus the horizon."""

    series: dict
    T: float

    def array(self, key) -> np.ndarray:
        return np.asarray(self.series[key], dtype=float)


def _horizon(traj) -> float:
    t = traj.array("t")
    return float(t[0] + traj.T) if t.size else float(traj.T)


def _first_crossing(traj, mask) -> float:
    idx = np.flatnonzero(mask)
    return float(traj.array("t")[idx[0]]) if idx.size else _horizon(traj)


def check_tau_R(traj, R: float) -> float:
    """First grid time with ``||u||_{2,inf} >= R``; the horizon if never."""
    return _first_crossing(traj, traj.array("u_2inf") >= R)


@dataclass
class StoppingRecord:
    tau1_K: float
    tau2_K: float
    tau3_K: float
    T: float
    K: float
    tau_R: float | None = None
    R: float | None = None
    blow_up: bool = False

    @property
    def tau_K(self) -> float:
        return min(self.tau1_K, self.tau2_K, self.tau3_K)

    @property
    def triggered(self) -> str:
        if self.tau_K >= self.T:
            return ""
        for name in ("tau1_K", "tau2_K", "tau3_K"):
            if getattr(self, name) == self.tau_K:
                return name
        return ""

    def lines(self) -> list:
        out = [f"stopping.K = {self.K!r}", f"stopping.tau1_K = {self.tau1_K!r}",
               f"stopping.tau2_K = {self.tau2_K!r}", f"stopping.tau3_K = {self.tau3_K!r}",
               f"stopping.tau_K = {self.tau_K!r}", f"stopping.triggered = {self.triggered or 'none'}"]
        if self.tau_R is not None:
            out += [f"stopping.R = {self.R!r}", f"stopping.tau_R = {self.tau_R!r}"]
        out.append(f"stopping.blow_up = {str(self.blow_up).lower()}")
        return out


def check_tau_K(traj, K: float, R: float | None = None) -> StoppingRecord:
    """Fill the three K-thresholds; with ``R`` given, verify the guard inequalities.

    Before ``tau_K`` every state must satisfy ``||u||_{2,inf} < R``,
    ``||r||_{1,inf} < R`` and ``min r > 1/R``; otherwise the embedding constants
    (or K(R)) are wrong and :class:`GuardInconsistencyError` is raised.
    """
    rec = StoppingRecord(
        tau1_K=_first_crossing(traj, traj.array("u_s2") >= K),
        tau2_K=_first_crossing(traj, traj.array("r_s2") >= K),
        tau3_K=_first_crossing(traj, traj.array("min_r") <= 1.0 / K),
        T=_horizon(traj), K=K,
    )
    if R is not None:
        rec.R = R
        rec.tau_R = check_tau_R(traj, R)
        t = traj.array("t")
        before = t < rec.tau_K
        bad = before & ((traj.array("u_2inf") >= R) | (traj.array("r_1inf") >= R)
                        | (traj.array("min_r") <= 1.0 / R))
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise GuardInconsistencyError(
                f"guard violated at t={t[j]:g} before tau_K={rec.tau_K:g} (K={K:g}, R={R:g})")
    return rec


# ---------------------------------------------------------------------------
# shells of initial data


@dataclass(frozen=True)
class ShellSchedule:
    """``K(R) = 0.9 R min(1, 1/c1, 1/c2)`` for ``R = 1, 2, ..., bound``."""

    c1: float
    c2: float
    bound: int = 64

    @classmethod
    def estimate(cls, grid: TorusGrid, s: int, trials: int = 2000, seed: int = 0, bound: int = 64):
        c1 = embedding_constant(s, 1, grid, trials, seed)
        c2 = embedding_constant(s, 2, grid, trials, seed)
        return cls(c1, c2, bound)

    def K(self, R: float) -> float:
        return shell_radius(R, self.c1, self.c2)


def shell_radius(R: float, c1: float, c2: float) -> float:
    return K_MARGIN * R * min(1.0, 1.0 / c1, 1.0 / c2)


@dataclass(frozen=True)
class ShellIndex:
    M: int
    K: float

    @property
    def R(self) -> int:
        return self.M


def classify_initial(r0: SpectralField, u0: SpectralField, schedule: ShellSchedule, s: int) -> ShellIndex:
    """Least ``M`` whose shell ``{||r0||, ||u0|| < K(M), min r0 > 1/K(M)}`` holds the datum."""
    if np.any(r0.values <= 0):
        raise ShellScheduleError("initial r must be positive")
    rn = sobolev_norm(r0, s)
    un = sobolev_norm(u0, s)
    rmin = continuous_extrema(r0)[0]
    for M in range(1, schedule.bound + 1):
        K = schedule.K(M)
        if rn < K and un < K and rmin > 1.0 / K:
            return ShellIndex(M, K)
    raise ShellScheduleError(
        f"datum (|r0|_s={rn:.4g}, |u0|_s={un:.4g}, min r0={rmin:.4g}) lies outside "
        f"every shell up to M={schedule.bound}")


# ---------------------------------------------------------------------------
# maximal continuation


@dataclass
class ContinuationLevel:
    R: float
    t: float
    sup_norm: float
    fired: bool

    @property
    def certified(self) -> bool:
        return self.fired and self.sup_norm >= self.R


@dataclass
class ContinuationResult:
    levels: list
    t_explosion: float
    blow_up: bool
    inconclusive: bool
    steps_used: int
    trajectory: Trajectory
    immediate: list = field(default_factory=list)

    @property
    def announcing(self) -> list:
        return [lv.t for lv in self.levels]

    def lines(self) -> list:
        out = [f"continuation.levels = {len(self.levels)}",
               f"continuation.t_explosion = {self.t_explosion!r}",
               f"continuation.blow_up = {str(self.blow_up).lower()}",
               f"continuation.inconclusive = {str(self.inconclusive).lower()}",
               f"continuation.steps_used = {self.steps_used}"]
        for i, lv in enumerate(self.levels):
            out.append(f"continuation.level.{i} = R={lv.R!r} t={lv.t!r} sup={lv.sup_norm!r} "
                       f"fired={str(lv.fired).lower()} certified={str(lv.certified).lower()}")
        for R in self.immediate:
            out.append(f"continuation.immediate_stop = R={R!r}")
        return out


def maximal_continuation(system: CutoffSystem, state: State, T: float, dt: float,
                         stream: NoiseStream | None, schedule, budget: int,
                         stride: int = 1) -> ContinuationResult:
    """Run with cut-off R until tau_R, restart from the stopped state at the next level.

    ``schedule`` is an increasing sequence of radii.  The noise increments are
    indexed by the global step, so the patched path is one trajectory.  If every
    level fires, the last announced time is the explosion estimate and
    ``blow_up`` is set; a level that never fires ends the sequence at ``T``.
    """
    schedule = list(schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("R schedule must be strictly increasing")
    total = steps_for(T, dt)
    t0, step0 = state.t, state.step
    merged = Trajectory(dt=dt, T=T, stride=stride)
    levels, immediate = [], []
    used = 0
    sup = 0.0
    inconclusive = False
    cur = state
    first = True
    for R in schedule:
        sysR = system.with_R(R)
        cur = State(sysR, cur.t, cur.r, cur.u, cur.step)
        remaining = total - (cur.step - step0)
        allowed = min(remaining, budget - used)
        tr = sysR.run(cur, allowed * dt, dt, stream, stride=stride, stop_on="tau_R", keep="last")
        tr_series = tr.series
        # shift the per-run time grid onto the global one
        for key in merged.SERIES:
            vals = tr_series[key] if first else tr_series[key][1:]
            merged.series[key].extend(vals)
        merged.reports.extend(tr.reports)
        first = False
        used += len(tr.reports)
        cur = tr.states[-1]
        sup = max(sup, float(np.max(tr.array("u_2inf"))))
        if tr.status == "stopped":
            if not tr.reports:
                immediate.append(R)
            levels.append(ContinuationLevel(R, cur.t, sup, True))
            merged.events.append((cur.t, f"blowup_level R={R:g}"))
            continue
        if tr.status == "aborted":
            merged.status = "aborted"
            merged.error = tr.error
            inconclusive = True
            break
        if cur.step - step0 < total:
            inconclusive = True
            levels.append(ContinuationLevel(R, cur.t, sup, False))
            break
        levels.append(ContinuationLevel(R, t0 + T, sup, False))
        break
    merged.states = [cur]
    fired_all = bool(levels) and all(lv.fired for lv in levels) and len(levels) == len(schedule)
    blow_up = fired_all and not inconclusive
    t_exp = levels[-1].t if blow_up else (t0 + T if not inconclusive else cur.t)
    if inconclusive:
        merged.status = "inconclusive" if merged.status != "aborted" else merged.status
    return ContinuationResult(levels, t_exp, blow_up, inconclusive, used, merged, immediate)
