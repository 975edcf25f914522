"""Time stepping for the cut-off symmetrised system.

One step freezes ``phi = phi_R(||u||_{2,inf})`` at the pre-step state, moves
``r`` by a semi-Lagrangian update along the characteristics of ``phi u`` with an
exponential integrating factor for the divergence term, and advances ``u`` by
an Euler-Maruyama Galerkin step.  ``r`` lives on the nodes and is never
re-band-limited; ``u`` stays inside its Galerkin band.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .errors import (
    CFLViolation,
    InvalidFieldError,
    StochNSError,
    VacuumError,
    WindowTooLongError,
)
from .fluid import CutoffSpec, FluidParams, coeff_D, stress_divergence_hat
from .noise import NoiseModel, NoiseStream, WienerIncrement, bridge_increments, sample_increments
from .spectral import (
    SpectralField,
    TorusGrid,
    continuous_extrema,
    derivative_multiplier,
    evaluate_hat,
    fft,
    ifft,
    multi_indices_upto,
    resolution_fraction,
    sobolev_weights,
    wkinf_norm,
)

ADVECTIVE_CFL = 0.5
VISCOUS_CFL = 0.25


@lru_cache(maxsize=16)
def _ik(grid: TorusGrid) -> np.ndarray:
    """First-derivative symbols ``i k_d`` with the Nyquist mode dropped, shape ``(N, *shape)``."""
    k = grid.kvec
    return np.where(np.abs(k) == grid.M // 2, 0.0, 1j * k)


@lru_cache(maxsize=16)
def _alpha_multipliers(grid: TorusGrid, s: int) -> np.ndarray:
    return np.array([derivative_multiplier(grid, a) for a in multi_indices_upto(grid.dim, s)])


class State:
    """The pair ``(r, u)`` at time ``t`` with lazily cached diagnostics."""

    def __init__(self, system: "CutoffSystem", t: float, r: SpectralField, u: SpectralField,
                 step: int = 0):
        if r.vector or not u.vector:
            raise InvalidFieldError("State needs scalar r and vector u")
        if r.grid != system.grid or u.grid != system.grid:
            raise InvalidFieldError("state fields must live on the system grid")
        self.system = system
        self.t = float(t)
        self.r = r
        self.u = u
        self.step = int(step)

    @cached_property
    def u_2inf(self) -> float:
        return wkinf_norm(self.u, 2)

    @cached_property
    def r_1inf(self) -> float:
        return wkinf_norm(self.r, 1)

    @cached_property
    def r_extrema(self) -> tuple:
        """Continuous (min, max) of the interpolant of ``r``."""
        return continuous_extrema(self.r)

    @property
    def min_r(self) -> float:
        return self.r_extrema[0]

    @property
    def max_r(self) -> float:
        return self.r_extrema[1]

    @cached_property
    def phi(self) -> float:
        return self.system.cutoff(self.u_2inf)

    @cached_property
    def r_s2(self) -> float:
        return float(np.sqrt(np.sum(sobolev_weights(self.system.grid, float(self.system.s))
                                    * np.abs(self.r.hat) ** 2)))

    @cached_property
    def u_s2(self) -> float:
        return float(np.sqrt(np.sum(sobolev_weights(self.system.grid, float(self.system.s))
                                    * np.abs(self.u.hat) ** 2)))

    @property
    def norm_s(self) -> float:
        return float(np.hypot(self.r_s2, self.u_s2))

    @cached_property
    def u_sup(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.u.values**2, axis=0))))

    @cached_property
    def D(self) -> np.ndarray:
        return coeff_D(self.r.values[0], self.system.params, self.system.r_floor)

    def __repr__(self):
        return f"State(t={self.t:g}, step={self.step}, |u|_2inf={self.u_2inf:.4g}, min r={self.min_r:.4g})"


@dataclass(frozen=True)
class StepReport:
    step: int
    t: float
    dt: float
    phi: float
    cfl_advective: float
    cfl_viscous: float
    noise_norm: float
    forcing_norm: float
    cutoff_active: bool
    dt_reduced: bool
    n_substeps: int
    divu_integral: float
    dissipation: float
    clipped: bool
    under_resolved: bool
    ito: tuple = ()


@dataclass
class PicardReport:
    distances: list
    ratios: list
    window: float


@dataclass
class Trajectory:
    """Outcome of :meth:`CutoffSystem.run`; ``series`` holds one entry per recorded state."""

    dt: float
    T: float
    stride: int
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    status: str = "complete"
    error: str = ""
    increments: list = field(default_factory=list)

    SERIES = ("t", "step", "r_s2", "u_s2", "u_2inf", "r_1inf", "min_r", "max_r", "phi",
              "dissipation", "divu_integral")

    def __post_init__(self):
        for key in self.SERIES:
            self.series.setdefault(key, [])

    def array(self, key) -> np.ndarray:
        return np.asarray(self.series[key], dtype=float)

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return self.array("t")


class CutoffSystem:
    """Discrete cut-off system on a fixed grid.

    ``level`` is the Galerkin level of the velocity (default: the 2/3 band).
    """

    def __init__(self, grid: TorusGrid, params: FluidParams = FluidParams(), R: float = 10.0,
                 s: int = 4, level: int | None = None, noise: NoiseModel | None = None,
                 r_floor: float = 0.0, max_halvings: int = 8, track_dissipation: bool = True,
                 ito_alphas: tuple = ()):
        self.grid = grid
        self.params = params
        self.cutoff = CutoffSpec(R)
        self.s = int(s)
        full = 2 * grid.dealias_cutoff + 1
        self.level = full if level is None else int(level)
        if not 1 <= self.level <= full:
            raise ValueError(f"Galerkin level must lie in [1, {full}] for M = {grid.M}")
        self.level_mask = grid.band_mask(grid.galerkin_cutoff(self.level))
        self.noise = noise if noise is not None else NoiseModel.zero(grid)
        if self.noise.grid != grid:
            raise ValueError("noise model lives on another grid")
        self.r_floor = float(r_floor)
        self.max_halvings = int(max_halvings)
        self.track_dissipation = track_dissipation
        self.ito_alphas = tuple(tuple(a) for a in ito_alphas)

    @property
    def R(self) -> float:
        return self.cutoff.R

    def with_level(self, level: int) -> "CutoffSystem":
        return CutoffSystem(self.grid, self.params, self.R, self.s, level, self.noise, self.r_floor,
                            self.max_halvings, self.track_dissipation, self.ito_alphas)

    def with_R(self, R: float) -> "CutoffSystem":
        return CutoffSystem(self.grid, self.params, R, self.s, self.level, self.noise, self.r_floor,
                            self.max_halvings, self.track_dissipation, self.ito_alphas)

    # -- states -----------------------------------------------------------

    def state(self, t, r, u, step=0) -> State:
        return State(self, t, r, u, step)

    def initial_state(self, r0: SpectralField, u0: SpectralField, t: float = 0.0,
                      step: int = 0) -> State:
        """Validate positivity of ``r0`` and project ``u0`` onto the Galerkin band."""
        bad = np.argwhere(~(r0.values[0] > 0))
        if bad.size:
            node = tuple(int(i) for i in bad[0])
            raise VacuumError(f"initial r is nonpositive at node {node}", node=node)
        u = SpectralField.from_hat(self.grid, u0.hat * self.level_mask, vector=True)
        return State(self, t, r0, u, step)

    # -- building blocks --------------------------------------------------

    def cfl(self, state: State, dt: float, phi: float | None = None) -> tuple:
        """(advective, viscous) ratios; both must be at most 1."""
        phi = state.phi if phi is None else phi
        dx = self.grid.dx
        adv = dt * phi * state.u_sup / (ADVECTIVE_CFL * dx)
        visc = dt * phi * float(np.max(state.D)) * self.params.viscous_sum / (VISCOUS_CFL * dx * dx)
        return float(adv), float(visc)

    def transport_step(self, state: State, dt: float, phi: float) -> tuple:
        """Semi-Lagrangian update of ``r``; returns ``(values, sup |div u| used, clipped)``."""
        grid = self.grid
        r, u = state.r, state.u
        if phi == 0.0 or not np.any(u.values):
            return r.values[0].copy(), 0.0, False
        N = grid.dim
        x = grid.nodes.reshape(N, -1)
        a0 = (dt * phi) * u.values.reshape(N, -1)
        a1 = (dt * phi) * evaluate_hat(u.hat, grid, x - 0.5 * a0)
        foot = x - a1
        rf = evaluate_hat(r.hat, grid, foot)[0]
        lo, hi = state.r_extrema
        clipped = bool(np.any(rf < lo) or np.any(rf > hi))
        if clipped:
            rf = np.clip(rf, lo, hi)
        div_hat = np.sum(_ik(grid) * u.hat, axis=0)[np.newaxis]
        divu = evaluate_hat(div_hat, grid, x - 0.5 * a1)[0]
        gfac = 0.5 * (self.params.gamma - 1.0)
        r_next = rf * np.exp(-(phi * gfac * dt) * divu)
        return r_next.reshape(grid.shape), float(np.max(np.abs(divu))), clipped

    def drift_hat(self, state: State) -> np.ndarray:
        """Dealiased ``u.grad u + r grad r - D(r) div S(grad u)`` (raw coefficients)."""
        grid = self.grid
        mask = grid.dealias_mask
        ik = _ik(grid)
        uh = state.u.hat * mask
        uv = ifft(uh, grid)
        J = ifft(uh[:, None] * ik[None, :], grid)
        adv = np.einsum("j...,ij...->i...", uv, J)
        rh = state.r.hat * mask
        pres = ifft(rh, grid) * ifft(ik * rh, grid)
        Dv = ifft(fft(state.D, grid) * mask, grid)
        visc = Dv * ifft(stress_divergence_hat(uh, grid, self.params), grid)
        return fft(adv + pres - visc, grid) * mask

    def forcing_hat(self, state: State, dbeta: np.ndarray) -> np.ndarray:
        return self.noise.forcing(state.r, state.u, self.params, dbeta)

    def F_hats(self, state: State) -> np.ndarray:
        """Raw coefficients of every ``F_k``, shape ``(K, N, *shape)``."""
        return fft(self.noise.eval_F(state.r, state.u, self.params), self.grid)

    def _advance(self, uh, drift, forcing, dt, phi):
        return (uh - (dt * phi) * drift + phi * forcing) * self.level_mask

    def momentum_step(self, state: State, dt: float, phi: float, inc: WienerIncrement) -> SpectralField:
        """Euler-Maruyama Galerkin update of ``u`` with frozen ``phi``."""
        return SpectralField.from_hat(self.grid, self._momentum_hat(state, dt, phi, inc)[0], vector=True)

    def _momentum_hat(self, state, dt, phi, inc):
        uh = state.u.hat
        if phi == 0.0:
            zero = np.zeros_like(uh)
            return uh * self.level_mask, zero, zero
        drift = self.drift_hat(state)
        forcing = self.forcing_hat(state, inc.dbeta) if inc.modes else np.zeros_like(uh)
        return self._advance(uh, drift, forcing, dt, phi), drift, forcing

    def dissipation_density(self, state: State) -> float:
        """``sum_{|alpha| <= s} (2 pi)^-N int D(r) S(grad d^a u) : grad d^a u dx``."""
        grid = self.grid
        N = grid.dim
        mult = _alpha_multipliers(grid, self.s)
        w = mult[:, None] * state.u.hat[None]
        J = ifft(w[:, :, None] * _ik(grid)[None, None], grid)
        div = np.trace(J, axis1=1, axis2=2)
        sym = J + np.swapaxes(J, 1, 2)
        mu, lam = self.params.mu, self.params.lam
        SJ = 0.5 * mu * np.sum(sym**2, axis=(1, 2)) + (lam - 2.0 * mu / 3.0) * div**2
        return float(np.mean(state.D * np.sum(SJ, axis=0)))

    def _ito(self, state, new_hat, drift, forcing, dt, phi):
        if not self.ito_alphas:
            return ()
        out = []
        uh = state.u.hat
        F = self.F_hats(state) * self.level_mask if self.noise.modes else None
        for alpha in self.ito_alphas:
            m = derivative_multiplier(self.grid, alpha)
            d0 = uh * m
            d1 = new_hat * m
            delta = np.sum(np.abs(d1) ** 2) - np.sum(np.abs(d0) ** 2)
            dterm = 2.0 * dt * np.sum((np.conj(d0) * (-phi * drift * self.level_mask * m)).real)
            nterm = 2.0 * np.sum((np.conj(d0) * (phi * forcing * self.level_mask * m)).real)
            corr = 0.0 if F is None else dt * np.sum(np.abs(phi * F * m) ** 2)
            out.append(float(delta - (dterm + nterm + corr)))
        return tuple(out)

    def _in_band(self, u: SpectralField) -> bool:
        uh = u.hat
        outside = np.max(np.abs(uh[..., ~self.level_mask.astype(bool)]), initial=0.0)
        return outside <= 1e-14 * max(np.max(np.abs(uh)), 1e-300)

    def _substep(self, state, dt, phi, inc, t_next):
        r_next, divu_sup, clipped = self.transport_step(state, dt, phi)
        new_hat, drift, forcing = self._momentum_hat(state, dt, phi, inc)
        ito = self._ito(state, new_hat, drift, forcing, dt, phi)
        dis = dt * phi * self.dissipation_density(state) if (self.track_dissipation and phi > 0) else 0.0
        r_field = SpectralField(self.grid, r_next)
        if phi == 0.0 and self._in_band(state.u):
            # frozen plateau: P_n u = u, so reuse u and keep the fixed point exact
            # instead of letting FFT round-off creep in
            u_field = state.u
        else:
            u_field = SpectralField.from_hat(self.grid, new_hat, vector=True)
        new = State(self, t_next, r_field, u_field, state.step + 1)
        fnorm = float(np.sqrt(np.sum(np.abs(phi * forcing) ** 2)))
        return new, dict(divu=phi * divu_sup * dt, dis=dis, clipped=clipped, ito=ito, fnorm=fnorm)

    def coupled_step(self, state: State, dt: float, inc: WienerIncrement | None = None,
                     stream: NoiseStream | None = None, force_phi: float | None = None,
                     t_next: float | None = None) -> tuple:
        """Advance one step of size ``dt``; returns ``(State, StepReport)``.

        Steps violating a CFL restriction are split into ``2^j`` sub-steps whose
        increments are Brownian-bridge refinements of ``inc``.
        """
        if inc is None:
            inc = WienerIncrement(dt, np.zeros(self.noise.modes), step=state.step)
        t_next = state.t + dt if t_next is None else t_next
        phi0 = state.phi if force_phi is None else force_phi
        adv, visc = self.cfl(state, dt, phi0)
        n = 1
        while max(adv, visc) / n > 1.0:
            n *= 2
        while True:
            if n > 2**self.max_halvings:
                raise CFLViolation(f"step at t={state.t:g} needs more than {self.max_halvings} halvings",
                                   adv, visc)
            subs = bridge_increments(inc, n, stream)
            h = dt / n
            cur = state
            acc = dict(divu=0.0, dis=0.0, clipped=False, ito=None, fnorm=0.0)
            ok = True
            for i, sub in enumerate(subs):
                phi = cur.phi if force_phi is None else force_phi
                if i > 0 and max(self.cfl(cur, h, phi)) > 1.0:
                    ok = False
                    break
                tn = t_next if i == n - 1 else state.t + (i + 1) * h
                cur, info = self._substep(cur, h, phi, sub, tn)
                acc["divu"] += info["divu"]
                acc["dis"] += info["dis"]
                acc["clipped"] |= info["clipped"]
                acc["fnorm"] = max(acc["fnorm"], info["fnorm"])
                acc["ito"] = info["ito"] if acc["ito"] is None else tuple(
                    a + b for a, b in zip(acc["ito"], info["ito"]))
            if ok:
                break
            n *= 2
        new = State(self, t_next, cur.r, cur.u, state.step + 1)
        report = StepReport(
            step=state.step, t=state.t, dt=dt, phi=phi0, cfl_advective=adv / n, cfl_viscous=visc / n,
            noise_norm=float(np.linalg.norm(inc.dbeta)), forcing_norm=acc["fnorm"],
            cutoff_active=phi0 < 1.0, dt_reduced=n > 1, n_substeps=n,
            divu_integral=acc["divu"], dissipation=acc["dis"], clipped=acc["clipped"],
            under_resolved=resolution_fraction(new.r) > 0.01, ito=acc["ito"] or (),
        )
        return new, report

    # -- Picard fixed-point mode -------------------------------------------

    def picard_solve(self, state: State, increments: list, iterations: int = 4,
                     guess: list | None = None, strict: bool = True) -> tuple:
        """Iterate the window map ``u -> integral form with r = r[u]``.

        ``increments`` fixes the window length ``L = len(increments)``; the
        initial guess defaults to the constant path.  Returns the final window
        state and the per-iteration sup-distances with their ratios.
        """
        if iterations < 2:
            raise ValueError("iterations must be at least 2")
        L = len(increments)
        if L == 0:
            raise ValueError("empty window")
        dt = increments[0].dt
        path = [state.u.hat * self.level_mask] * (L + 1) if guess is None else [
            g.hat * self.level_mask for g in guess]
        if len(path) != L + 1:
            raise ValueError("guess must contain L + 1 velocity fields")
        distances = []
        for _ in range(iterations):
            new_path = [path[0]]
            r = state.r
            cur_u = path[0]
            rs = []
            for j in range(L):
                st = State(self, state.t + j * dt, r, SpectralField.from_hat(self.grid, path[j], vector=True),
                           state.step + j)
                phi = st.phi
                r_next, _, _ = self.transport_step(st, dt, phi)
                if phi == 0.0:
                    drift = forcing = np.zeros_like(cur_u)
                else:
                    drift = self.drift_hat(st)
                    forcing = (self.forcing_hat(st, increments[j].dbeta) if increments[j].modes
                               else np.zeros_like(cur_u))
                cur_u = self._advance(cur_u, drift, forcing, dt, phi)
                new_path.append(cur_u)
                r = SpectralField(self.grid, r_next)
                rs.append(r)
            d = max(float(np.sqrt(np.sum(np.abs(a - b) ** 2))) for a, b in zip(new_path, path))
            distances.append(d)
            path = new_path
        ratios = [distances[j + 1] / distances[j] if distances[j] > 0 else 0.0
                  for j in range(len(distances) - 1)]
        if strict and ratios and ratios[-1] >= 1.0:
            raise WindowTooLongError(f"Picard ratio {ratios[-1]:.3g} >= 1 on window {L * dt:g}")
        final = State(self, state.t + L * dt, rs[-1],
                      SpectralField.from_hat(self.grid, path[-1], vector=True), state.step + L)
        return final, PicardReport(distances, ratios, L * dt)

    # -- trajectories --------------------------------------------------------

    def run(self, state: State, T: float, dt: float, stream: NoiseStream | None = None,
            stride: int = 1, stop_on: str = "none", K: float | None = None, keep: str = "all",
            force_phi: float | None = None, record_increments: bool = False) -> Trajectory:
        """Advance ``state`` over ``[t0, t0 + T]`` with fixed step ``dt``.

        ``stop_on`` is ``"none"``, ``"tau_R"`` (stop when ``||u||_{2,inf} >= R``)
        or ``"tau_K"`` (stop at the first of the three ``K`` thresholds).
        Step errors abort the run; the partial trajectory is returned.
        """
        steps = steps_for(T, dt)
        if stop_on not in ("none", "tau_R", "tau_K"):
            raise ValueError(f"unknown stop_on {stop_on!r}")
        if stop_on == "tau_K" and K is None:
            raise ValueError("stop_on='tau_K' needs K")
        traj = Trajectory(dt=dt, T=T, stride=stride)
        t0 = state.t
        dis = divu = 0.0
        noisy = self.noise.modes > 0 and not self.noise.is_zero
        if noisy and stream is None:
            raise ValueError("a noise stream is required for a noisy system")

        def record(st, j):
            if keep == "all" or (keep == "stride" and (j % stride == 0 or j == steps)):
                traj.states.append(st)
            elif keep == "last":
                traj.states[:] = [st]
            s = traj.series
            s["t"].append(st.t)
            s["step"].append(st.step)
            s["r_s2"].append(st.r_s2)
            s["u_s2"].append(st.u_s2)
            s["u_2inf"].append(st.u_2inf)
            s["r_1inf"].append(st.r_1inf)
            s["min_r"].append(st.min_r)
            s["max_r"].append(st.max_r)
            s["phi"].append(st.phi)
            s["dissipation"].append(dis)
            s["divu_integral"].append(divu)

        record(state, 0)
        for j in range(steps + 1):
            event = self._stop_event(state, stop_on, K)
            if event:
                traj.events.append((state.t, event))
                traj.status = "stopped"
                break
            if j == steps:
                break
            if noisy:
                inc = sample_increments(dt, stream, state.step, self.noise.modes)
            else:
                inc = WienerIncrement(dt, np.zeros(self.noise.modes), step=state.step)
            if record_increments:
                traj.increments.append(inc)
            try:
                state, rep = self.coupled_step(state, dt, inc, stream, force_phi=force_phi,
                                               t_next=t0 + (j + 1) * dt)
            except StochNSError as exc:
                traj.status = "aborted"
                traj.error = f"{type(exc).__name__}: {exc}"
                break
            dis += rep.dissipation
            divu += rep.divu_integral
            traj.reports.append(rep)
            record(state, j + 1)
        if keep == "none":
            traj.states = [state]
        elif keep == "stride" and traj.states[-1] is not state:
            traj.states.append(state)
        return traj

    def _stop_event(self, state, stop_on, K):
        if stop_on == "tau_R":
            return "tau_R" if state.u_2inf >= self.R else ""
        if stop_on == "tau_K":
            if state.u_s2 >= K:
                return "tau1_K"
            if state.r_s2 >= K:
                return "tau2_K"
            if state.min_r <= 1.0 / K:
                return "tau3_K"
        return ""


def steps_for(T: float, dt: float) -> int:
    """Number of steps ``T / dt``; rejects non-integer ratios."""
    if not dt > 0 or T < 0:
        raise ValueError("need dt > 0 and T >= 0")
    n = T / dt
    steps = int(round(n))
    if abs(n - steps) > 1e-9 * max(1.0, n):
        raise ValueError(f"T = {T} is not an integer multiple of dt = {dt}")
    return steps
