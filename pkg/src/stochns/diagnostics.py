"""Energy bookkeeping, commutator terms, Ito residuals, audits and coupled-path experiments.

Every unspecified analytic constant is treated as a fitted quantity: fit on
one ensemble, validate on a disjoint one with 10% headroom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AuditFailure, ProtocolError
from .fluid import coeff_D, stress_divergence, stress_tensor
from .integrator import CutoffSystem, State, Trajectory
from .noise import NoiseStream
from .spectral import (
    SpectralField,
    dealias_product,
    derivative,
    divergence,
    gradient,
    homogeneous_norm,
    l2_norm,
    multi_indices,
    random_field,
    resolution_fraction,
    sobolev_norm,
    sup_norm,
)

HEADROOM = 0.1


def fit_constant(ratios) -> float:
    """Empirical constant: the largest finite ratio observed."""
    r = np.asarray(ratios, dtype=float)
    r = r[np.isfinite(r)]
    return float(r.max()) if r.size else 0.0


def count_violations(ratios, constant: float, headroom: float = HEADROOM) -> int:
    return int(np.sum(np.asarray(ratios, dtype=float) > constant * (1.0 + headroom)))


# ---------------------------------------------------------------------------
# commutator terms of the differentiated system


@dataclass
class CommutatorReport:
    norms: tuple
    bounds: tuple
    under_resolved: bool

    @property
    def ratios(self) -> tuple:
        out = []
        for n, b in zip(self.norms, self.bounds):
            out.append(n / b if b > 0 else (0.0 if n == 0 else float("inf")))
        return tuple(out)


def _grad_sup(f: SpectralField) -> float:
    """``max_{i,j} sup |d_j f_i|`` over nodes."""
    return max(sup_norm(derivative(f, a)) for a in multi_indices(f.grid.dim, 1))


def commutator_norms(state: State, s: int | None = None, alpha=None) -> CommutatorReport:
    """``||T_i||_2`` for the five commutator terms at a probe multi-index ``|alpha| = s``.

    ``T1 = phi[u.d^a grad r - d^a(u.grad r)]``,
    ``T2 = (gamma-1)/2 phi[r d^a div u - d^a(r div u)]``,
    ``T3 = phi[u.d^a grad u - d^a(u.grad u)]``,
    ``T4 = phi[r d^a grad r - d^a(r grad r)]``,
    ``T5 = -phi[D d^a div S - d^a(D div S)]``;
    bounds are the matching right-hand norm products without constants.
    """
    sysm = state.system
    s = sysm.s if s is None else s
    grid = sysm.grid
    if alpha is None:
        alpha = (s,) + (0,) * (grid.dim - 1)
    phi = state.phi
    gam = sysm.params.gamma
    r, u = state.r, state.u
    N = grid.dim
    unit = [tuple(int(i == d) for i in range(N)) for d in range(N)]

    def d(f):
        return derivative(f, alpha)

    def comps(v):
        return [v.component(i) for i in range(v.ncomp)]

    def vec(parts):
        return SpectralField(grid, np.concatenate([p.values for p in parts]), vector=True)

    def u_dot_grad(w):
        """``u . grad w`` for scalar ``w`` (dealiased)."""
        return sum(dealias_product(u.component(j), derivative(w, unit[j])) for j in range(N))

    gr = gradient(r)
    divu = divergence(u)
    t1 = phi * (u_dot_grad(d(r)) - d(u_dot_grad(r)))
    t2 = 0.5 * (gam - 1) * phi * (dealias_product(r, d(divu)) - d(dealias_product(r, divu)))
    t3 = phi * vec([u_dot_grad(d(ui)) - d(u_dot_grad(ui)) for ui in comps(u)])
    t4 = phi * (dealias_product(r, d(gr)) - d(dealias_product(r, gr)))
    Dfield = SpectralField(grid, state.D)
    divS = stress_divergence(u, sysm.params)
    t5 = -phi * (dealias_product(Dfield, d(divS)) - d(dealias_product(Dfield, divS)))
    norms = tuple(l2_norm(t) for t in (t1, t2, t3, t4, t5))

    gu, grr, dv = _grad_sup(u), _grad_sup(r), sup_norm(divu)
    us, rs = homogeneous_norm(u, s), homogeneous_norm(r, s)
    S = stress_tensor(u, sysm.params)
    S_s = 0.0
    for i in range(N):
        for j in range(N):
            S_s += homogeneous_norm(SpectralField(grid, S[i, j]), s) ** 2
    bounds = (
        phi * (gu * rs + grr * us),
        phi * (grr * us + dv * rs),
        phi * gu * us,
        grr * rs,
        phi * (_grad_sup(Dfield) * np.sqrt(S_s) + sup_norm(divS) * homogeneous_norm(Dfield, s)),
    )
    flag = resolution_fraction(r) > 0.01 or resolution_fraction(u) > 0.01
    return CommutatorReport(norms, tuple(float(b) for b in bounds), flag)


def random_state(system: CutoffSystem, rng: np.random.Generator, r_mean: float = 2.0,
                 amplitude: float = 0.3) -> State:
    """Random band-limited state with ``r`` positive around ``r_mean``."""
    grid = system.grid
    cutoff = grid.dealias_cutoff // 2
    rp = random_field(grid, rng, system.s, cutoff=cutoff)
    rp = rp * (amplitude * r_mean / max(sup_norm(rp), 1e-300))
    r = rp + r_mean
    u = random_field(grid, rng, system.s, vector=True, cutoff=min(cutoff, grid.galerkin_cutoff(system.level)))
    u = u * (amplitude / max(sup_norm(u), 1e-300))
    return system.initial_state(r, u)


def commutator_ensemble(system: CutoffSystem, samples: int, seed: int) -> np.ndarray:
    """Ratios ``||T_i|| / bound_i``, shape ``(samples, 5)``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(23,)))
    out = np.empty((samples, 5))
    for i in range(samples):
        out[i] = commutator_norms(random_state(system, rng)).ratios
    return out


# ---------------------------------------------------------------------------
# Ito residual


def ito_residual(system: CutoffSystem, traj: Trajectory, alpha, stream: NoiseStream | None = None) -> np.ndarray:
    """Per-step residual of the discrete energy identity for ``||d^alpha u||_2^2``.

    Replays every step of ``traj`` (which must keep all states and record its
    increments when noisy) through the same discrete operators.
    """
    alpha = tuple(int(a) for a in alpha)
    if len(traj.states) != len(traj.reports) + 1:
        raise ValueError("ito_residual needs a trajectory run with keep='all'")
    noisy = system.noise.modes > 0 and not system.noise.is_zero
    if noisy and len(traj.increments) != len(traj.reports):
        raise ValueError("noisy trajectories must be run with record_increments=True")
    replay = CutoffSystem(system.grid, system.params, system.R, system.s, system.level, system.noise,
                          system.r_floor, system.max_halvings, False, (alpha,))
    out = np.empty(len(traj.reports))
    for j, rep in enumerate(traj.reports):
        st = traj.states[j]
        st = State(replay, st.t, st.r, st.u, st.step)
        inc = traj.increments[j] if noisy else None
        _, r2 = replay.coupled_step(st, rep.dt, inc, stream, t_next=traj.states[j + 1].t)
        out[j] = r2.ito[0]
    return out


# ---------------------------------------------------------------------------
# maximum-principle audit


@dataclass
class AuditReport:
    passed: bool
    positive: bool
    lower_margin: float
    upper_margin: float
    c_hat: float
    c_grad_hat: float
    tolerance: float

    def lines(self) -> list:
        return [f"audit.passed = {str(self.passed).lower()}",
                f"audit.positive = {str(self.positive).lower()}",
                f"audit.lower_margin = {self.lower_margin!r}",
                f"audit.upper_margin = {self.upper_margin!r}",
                f"audit.c_hat = {self.c_hat!r}",
                f"audit.c_grad_hat = {self.c_grad_hat!r}"]


def maxprinciple_audit(traj: Trajectory, gamma: float, R: float, tol: float = 1e-8,
                       strict: bool = False) -> AuditReport:
    """Check ``min r0 e^{-I} <= r(t) <= max r0 e^{I}``, ``I = (gamma-1)/2 int phi |div u|_inf``.

    Also fits the rate ``c`` in ``e^{-c R t}`` form and the gradient-growth
    rate ``c'`` in ``|grad r(t)| <= |grad r0| exp(c' int phi |u|_{2,inf})``.
    """
    t = traj.array("t")
    lo, hi = traj.array("min_r"), traj.array("max_r")
    I = 0.5 * (gamma - 1.0) * traj.array("divu_integral")
    lower = lo[0] * np.exp(-I)
    upper = hi[0] * np.exp(I)
    lmargin = float(np.min((lo - lower) / max(1.0, abs(lo[0]))))
    umargin = float(np.min((upper - hi) / max(1.0, abs(hi[0]))))
    positive = bool(np.all(lo > 0))
    if traj.states and all(st is not None for st in traj.states):
        positive = positive and all(float(np.min(st.r.values)) > 0 for st in traj.states)
    dt_t = t - t[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.maximum(np.log(lo[0] / lo), np.log(hi / hi[0])) / (R * dt_t)
    rate = rate[dt_t > 0]
    c_hat = float(np.max(np.maximum(rate, 0.0))) if rate.size else 0.0
    c_grad = float("nan")
    if len(traj.states) == len(t):
        g = np.array([_grad_sup(st.r) for st in traj.states])
        phi_u = traj.array("phi") * traj.array("u_2inf")
        integ = np.concatenate([[0.0], np.cumsum(0.5 * (phi_u[1:] + phi_u[:-1]) * np.diff(t))])
        ok = (integ > 0) & (g[0] > 0)
        if np.any(ok):
            c_grad = float(np.max(np.maximum(np.log(g[ok] / g[0]) / integ[ok], 0.0)))
        else:
            c_grad = 0.0
    passed = positive and lmargin >= -tol and umargin >= -tol
    report = AuditReport(passed, positive, lmargin, umargin, c_hat, c_grad, tol)
    if strict and not passed:
        raise AuditFailure(f"maximum-principle audit failed: lower margin {lmargin:.3e}, "
                           f"upper margin {umargin:.3e}, positive={positive}")
    return report


# ---------------------------------------------------------------------------
# coupled paths


@dataclass
class CouplingReport:
    t: np.ndarray
    dist_l2: np.ndarray
    dist_m: np.ndarray
    G: np.ndarray
    weight: np.ndarray
    Q: np.ndarray
    m: int
    c_R: float
    levels: tuple = ()
    exceedance: dict = field(default_factory=dict)

    @property
    def sup_l2(self) -> float:
        return float(np.max(self.dist_l2)) if self.dist_l2.size else 0.0

    @property
    def sup_m(self) -> float:
        return float(np.max(self.dist_m)) if self.dist_m.size else 0.0

    def growth_rates(self) -> np.ndarray:
        """Per-step ``(Q_{j+1}/Q_j - 1)/dt`` where ``Q_j > 0``."""
        dt = np.diff(self.t)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (self.Q[1:] / self.Q[:-1] - 1.0) / dt
        return g[self.Q[:-1] > 0]


def coupled_distance(traj_a: Trajectory, traj_b: Trajectory, m: int, c_R: float) -> CouplingReport:
    """Distances and the Gronwall-weighted quantity along two coupled trajectories."""
    if len(traj_a.states) != len(traj_b.states):
        raise ProtocolError("coupled trajectories have different step counts")
    t = np.array([st.t for st in traj_a.states])
    if not np.array_equal(t, [st.t for st in traj_b.states]):
        raise ProtocolError("coupled trajectories use different time grids")
    dl2, dm, G = [], [], []
    for a, b in zip(traj_a.states, traj_b.states):
        dr, du = a.r - b.r, a.u - b.u
        dl2.append(np.hypot(l2_norm(dr), l2_norm(du)))
        dm.append(sobolev_norm(dr, m) ** 2 + sobolev_norm(du, m) ** 2)
        G.append(c_R * (1.0 + sum(sobolev_norm(x.r, m + 1) ** 2 + sobolev_norm(x.u, m + 2) ** 2
                                  for x in (a, b))))
    G = np.array(G)
    intG = np.concatenate([[0.0], np.cumsum(G[:-1] * np.diff(t))])
    weight = np.exp(-intG)
    dm = np.array(dm)
    return CouplingReport(t, np.array(dl2), np.sqrt(dm), G, weight, weight * dm, m, c_R)


def uniqueness_experiment(system: CutoffSystem, state_a: State, state_b: State, T: float, dt: float,
                          stream_a: NoiseStream | None, stream_b: NoiseStream | None = None,
                          m: int | None = None, c_R: float = 1.0) -> CouplingReport:
    """Evolve two data with one noise stream and measure their distance.

    Passing two different streams is a protocol violation.
    """
    stream_b = stream_a if stream_b is None else stream_b
    if (stream_a is None) != (stream_b is None) or (stream_a is not None and stream_a != stream_b):
        raise ProtocolError("both runs must be driven by the same noise stream")
    if state_a.step != state_b.step or state_a.t != state_b.t:
        raise ProtocolError("coupled runs must start at the same step")
    m = system.s - 1 if m is None else m
    ta = system.run(state_a, T, dt, stream_a)
    tb = system.run(state_b, T, dt, stream_b)
    if len(ta.reports) != len(tb.reports):
        raise ProtocolError("coupled runs stopped after different step counts")
    return coupled_distance(ta, tb, m, c_R)


@dataclass
class CauchyRow:
    n: int
    n_fine: int
    paths: int
    sup_dists: np.ndarray
    epsilons: tuple

    @property
    def exceedance(self) -> tuple:
        return tuple(float(np.mean(self.sup_dists > e)) for e in self.epsilons)

    @property
    def mean(self) -> float:
        return float(np.mean(self.sup_dists))

    @property
    def max(self) -> float:
        return float(np.max(self.sup_dists))


def cauchy_in_probability(system: CutoffSystem, r0: SpectralField, u0: SpectralField, levels,
                          paths: int, epsilons, T: float, dt: float, seed: int,
                          pairs=None) -> list:
    """Empirical Cauchy-in-probability table over adjacent Galerkin levels.

    Path ``p`` at every level is driven by ``NoiseStream(seed, p)``, so the two
    members of a pair share their Brownian increments.
    """
    levels = [int(n) for n in levels]
    if pairs is None:
        pairs = list(zip(levels[:-1], levels[1:]))
    noisy = system.noise.modes > 0 and not system.noise.is_zero
    cache: dict = {}

    def path_u(n, p):
        key = (n, p)
        if key not in cache:
            sysn = system.with_level(n)
            st = sysn.initial_state(r0, u0)
            tr = sysn.run(st, T, dt, NoiseStream(seed, p) if noisy else None, keep="all")
            cache[key] = [s.u.hat for s in tr.states]
        return cache[key]

    rows = []
    for n, n2 in pairs:
        d = np.empty(paths)
        for p in range(paths):
            a, b = path_u(n, p), path_u(n2, p)
            if len(a) != len(b):
                raise ProtocolError("coupled level runs have different lengths")
            d[p] = max(float(np.sqrt(np.sum(np.abs(x - y) ** 2))) for x, y in zip(a, b))
        rows.append(CauchyRow(n, n2, paths, d, tuple(float(e) for e in epsilons)))
        # drop cached paths no longer needed
        for key in [k for k in cache if k[0] == n]:
            del cache[key]
    return rows


# ---------------------------------------------------------------------------
# a priori moment sanity


@dataclass
class EnergySummary:
    X: np.ndarray
    initial: np.ndarray
    c_hat: dict
    sup_norm2: np.ndarray
    dissipation: np.ndarray


def path_energy(traj: Trajectory, s: int) -> tuple:
    """(sup_t ||(r,u)||_{s,2}^2, int ||grad^{s+1} u||_2^2 dt) for one path."""
    t = traj.array("t")
    norms2 = traj.array("r_s2") ** 2 + traj.array("u_s2") ** 2
    if len(traj.states) == len(t):
        g = np.array([homogeneous_norm(st.u, s + 1) ** 2 for st in traj.states])
    else:
        raise ValueError("path_energy needs all states")
    integ = float(np.sum(g[:-1] * np.diff(t)))
    return float(np.max(norms2)), integ


def energy_record(traj: Trajectory, s: int) -> tuple:
    """(sup norm squared, dissipation, initial norm squared) for one path."""
    sup2, dis = path_energy(traj, s)
    return sup2, dis, traj.series["r_s2"][0] ** 2 + traj.series["u_s2"][0] ** 2


def energy_report(trajectories, s: int, ps=(1, 2)) -> EnergySummary:
    """Moment ratios ``E[X^p] / (E[||(r0,u0)||_{s,2}^{2p}] + 1)``.

    Items may be trajectories or precomputed :func:`energy_record` tuples, so
    large ensembles need not keep every state alive.
    """
    records = [tr if isinstance(tr, tuple) else energy_record(tr, s) for tr in trajectories]
    sup2, dis, init = (np.array(col, dtype=float) for col in zip(*records))
    X = sup2 + dis
    c_hat = {p: float(np.mean(X**p) / (np.mean(init**p) + 1.0)) for p in ps}
    return EnergySummary(X, init, c_hat, sup2, dis)
