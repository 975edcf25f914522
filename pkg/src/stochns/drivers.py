"""Experiment drivers shared by the command line and the acceptance suite.

Each driver writes its artifacts into an output directory and returns an
:class:`Outcome` whose ``code`` is the process exit status.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import (
    commutator_ensemble,
    count_violations,
    energy_record,
    energy_report,
    fit_constant,
    maxprinciple_audit,
    path_energy,
    uniqueness_experiment,
    cauchy_in_probability,
)
from .errors import ConfigError, StochNSError
from .fluid import FluidParams, rho_to_r
from .integrator import CutoffSystem
from .io import (
    RunConfig,
    cauchy_header,
    cauchy_table_rows,
    read_snapshot,
    write_csv,
    write_metadata,
    write_snapshot,
    write_trace,
)
from .noise import RNG_ALGORITHM, NoiseModel, NoiseStream, StateBox, validate_noise
from .spectral import SpectralField, TorusGrid, embedding_constant, moser_ensemble
from .stopping import ShellSchedule, check_tau_K, check_tau_R, maximal_continuation

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_AUDIT = 3
EXIT_BUDGET = 4


@dataclass
class Outcome:
    code: int
    files: list = field(default_factory=list)
    summary: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# building blocks


def build_params(cfg: RunConfig) -> FluidParams:
    return FluidParams(gamma=cfg["gamma"], a=cfg["a"], mu=cfg["mu"], lam=cfg["lambda"])


def build_noise(cfg: RunConfig, grid: TorusGrid) -> NoiseModel:
    return NoiseModel.from_config(grid, cfg["noise.modes"], cfg["noise.decay_alpha0"], cfg["s"],
                                  cfg["noise.kind"], cfg.a_stencils, cfg.A_stencils,
                                  cfg["noise.general"] or None)


def build_system(cfg: RunConfig, R: float | None = None) -> CutoffSystem:
    grid = cfg.grid
    return CutoffSystem(grid, build_params(cfg), cfg["R"] if R is None else R, cfg["s"], cfg.level,
                        build_noise(cfg, grid), cfg["r_floor"])


def standard_datum(grid: TorusGrid, params: FluidParams) -> tuple:
    """``rho0 = 2 + 0.1 cos x_1`` (as ``r``) and ``u0_i = 0.1 sin x_i``."""
    x = grid.nodes
    r0 = SpectralField(grid, rho_to_r(2.0 + 0.1 * np.cos(x[0]), params))
    u0 = SpectralField(grid, 0.1 * np.sin(x), vector=True)
    return r0, u0


def rest_datum(grid: TorusGrid, params: FluidParams) -> tuple:
    r0 = SpectralField.constant(grid, float(rho_to_r(2.0, params)))
    return r0, SpectralField.zeros(grid, vector=True)


def initial_data(cfg: RunConfig) -> tuple:
    """(r0, u0, t0) for the configured initial datum."""
    grid, params = cfg.grid, build_params(cfg)
    init = cfg["init"]
    if init == "standard":
        return (*standard_datum(grid, params), 0.0)
    if init == "rest":
        return (*rest_datum(grid, params), 0.0)
    snap = read_snapshot(init[len("snapshot:"):], grid.dim, grid.M)
    return snap.r, snap.u, snap.t


def table_version(table: dict) -> str:
    text = "".join(f"{k}={v!r}\n" for k, v in table.items())
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def embedding_table(cfg: RunConfig) -> dict:
    grid = cfg.grid
    return {"embedding.c1": embedding_constant(cfg["s"], 1, grid, cfg["embed.trials"], 0),
            "embedding.c2": embedding_constant(cfg["s"], 2, grid, cfg["embed.trials"], 0)}


def commutator_table(cfg: RunConfig, system: CutoffSystem | None = None) -> tuple:
    """Fitted commutator constants and their violation counts on a disjoint ensemble."""
    system = system or build_system(cfg)
    fit = commutator_ensemble(system, cfg["constants.fit_samples"], cfg["seed"])
    fresh = commutator_ensemble(system, cfg["constants.validate_samples"], cfg["seed"] + 1_000_003)
    table, violations = {}, {}
    for i in range(5):
        c = fit_constant(fit[:, i])
        table[f"commutator.T{i + 1}"] = c
        violations[f"commutator.T{i + 1}"] = count_violations(fresh[:, i], c)
    return table, violations


def schedule_for(cfg: RunConfig) -> ShellSchedule:
    t = embedding_table(cfg)
    return ShellSchedule(t["embedding.c1"], t["embedding.c2"], cfg["shell.bound"])


def _stream(cfg: RunConfig, system: CutoffSystem, path: int = 0):
    noisy = system.noise.modes > 0 and not system.noise.is_zero
    return NoiseStream(cfg["seed"], path) if noisy else None


def _event_lines(traj) -> list:
    return [f"event.{i} = t={t!r} {name}" for i, (t, name) in enumerate(traj.events)]


def _stopping_lines(traj, cfg: RunConfig, K: float | None) -> list:
    stop_on = cfg["stop_on"]
    if stop_on == "tau_K":
        return check_tau_K(traj, K, cfg["R"]).lines()
    if stop_on == "tau_R":
        tau = check_tau_R(traj, cfg["R"])
        fired = traj.status == "stopped"
        return [f"stopping.R = {cfg['R']!r}", f"stopping.tau_R = {tau!r}",
                f"stopping.triggered = {'tau_R' if fired else 'none'}"]
    return []


def _run_path(cfg, system, state, stream, K, keep):
    return system.run(state, cfg["T"], cfg["dt"], stream, stride=max(cfg["snapshot.every"], 1),
                      stop_on=cfg["stop_on"], K=K, keep=keep)


# ---------------------------------------------------------------------------
# experiments


def run_single(cfg: RunConfig, out: Path) -> Outcome:
    system = build_system(cfg)
    r0, u0, t0 = initial_data(cfg)
    state = system.initial_state(r0, u0, t=t0)
    K, version = None, ""
    if cfg["stop_on"] == "tau_K":
        if cfg["K"] > 0:
            K = cfg["K"]
        else:
            table = embedding_table(cfg)
            version = table_version(table)
            K = ShellSchedule(table["embedding.c1"], table["embedding.c2"], cfg["shell.bound"]).K(cfg["R"])
    every = cfg["snapshot.every"]
    traj = _run_path(cfg, system, state, _stream(cfg, system), K, "stride" if every else "last")
    files = [out / "trace.csv", out / "metadata.txt", out / "final.sns"]
    write_trace(files[0], traj, cfg["stride"])
    if every:
        for st in traj.states:
            if st.step % every == 0:
                p = out / f"snapshot_{st.step:08d}.sns"
                write_snapshot(st, p)
                files.append(p)
    write_snapshot(traj.final, files[2])
    lines = [f"status = {traj.status}"] + ([f"error = {traj.error}"] if traj.error else [])
    lines += [f"steps = {len(traj.reports)}"]
    if K is not None:
        lines.append(f"K = {K!r}")
    lines += _stopping_lines(traj, cfg, K) + _event_lines(traj)
    code = EXIT_OK if traj.status != "aborted" else EXIT_ERROR
    if cfg["audit"]:
        audit = maxprinciple_audit(traj, cfg["gamma"], cfg["R"])
        lines += audit.lines()
        if not audit.passed and code == EXIT_OK:
            code = EXIT_AUDIT
    write_metadata(files[1], cfg, lines, RNG_ALGORITHM, version)
    return Outcome(code, files, lines)


def run_ensemble(cfg: RunConfig, out: Path) -> Outcome:
    system = build_system(cfg)
    r0, u0, t0 = initial_data(cfg)
    state = system.initial_state(r0, u0, t=t0)
    K = cfg["K"] or None
    version = ""
    if cfg["stop_on"] == "tau_K" and K is None:
        table = embedding_table(cfg)
        version = table_version(table)
        K = ShellSchedule(table["embedding.c1"], table["embedding.c2"], cfg["shell.bound"]).K(cfg["R"])
    (out / "paths").mkdir(exist_ok=True)
    rows, trajs, files, lines = [], [], [], []
    code = EXIT_OK
    for p in range(cfg["ensemble.paths"]):
        traj = _run_path(cfg, system, state, _stream(cfg, system, p), K, "all")
        f = out / "paths" / f"trace_{p:04d}.csv"
        write_trace(f, traj, cfg["stride"])
        files.append(f)
        audit = maxprinciple_audit(traj, cfg["gamma"], cfg["R"]) if cfg["audit"] else None
        if traj.status == "aborted":
            code = max(code, EXIT_ERROR)
        elif audit is not None and not audit.passed and code == EXIT_OK:
            code = EXIT_AUDIT
        sup2, dis = path_energy(traj, cfg["s"])
        rows.append([str(p), traj.status, repr(float(traj.final.t)),
                     repr(float(np.max(traj.array("u_2inf")))), repr(sup2), repr(dis), repr(sup2 + dis),
                     "" if audit is None else str(audit.passed).lower(),
                     ";".join(name for _, name in traj.events) or "none"])
        lines += [f"path.{p}.status = {traj.status}"]
        lines += [f"path.{p}.event.{i} = t={t!r} {name}" for i, (t, name) in enumerate(traj.events)]
        trajs.append(traj)
    table = out / "ensemble.csv"
    write_csv(table, ["path", "status", "t_final", "sup_u_2inf", "sup_norm2", "dissipation", "X",
                      "audit_passed", "event"], rows)
    summary = energy_report(trajs, cfg["s"])
    lines += [f"energy.c_hat.p{p} = {c!r}" for p, c in summary.c_hat.items()]
    # c_hat at other cut-off radii, reported as a trend with no asserted law
    for R in cfg["ensemble.trend_R"]:
        other = build_system(cfg, R=R)
        st = other.initial_state(r0, u0, t=t0)
        records = [energy_record(other.run(st, cfg["T"], cfg["dt"], _stream(cfg, other, p), keep="all"), cfg["s"])
                   for p in range(cfg["ensemble.paths"])]
        rep = energy_report(records, cfg["s"])
        lines += [f"energy.trend.R{R!r}.c_hat.p{p} = {c!r}" for p, c in rep.c_hat.items()]
    meta = out / "metadata.txt"
    write_metadata(meta, cfg, lines, RNG_ALGORITHM, version)
    return Outcome(code, [table, meta] + files, lines)


def perturbed_datum(u0: SpectralField, delta: float) -> SpectralField:
    grid = u0.grid
    bump = np.zeros((grid.dim,) + grid.shape)
    bump[0] = np.sin(grid.nodes[0])
    return u0 + SpectralField(grid, delta * bump, vector=True)


def run_uniqueness(cfg: RunConfig, out: Path) -> Outcome:
    system = build_system(cfg)
    r0, u0, t0 = initial_data(cfg)
    a = system.initial_state(r0, u0, t=t0)
    b = system.initial_state(r0, perturbed_datum(u0, cfg["uniqueness.delta"]), t=t0)
    version = ""
    c_R = cfg["uniqueness.c_R"]
    if c_R == 0:
        table, _ = commutator_table(cfg, system)
        version = table_version(table)
        c_R = max(table.values())
    m = cfg["uniqueness.m"] or cfg["s"] - 1
    stream = _stream(cfg, system)
    rep = uniqueness_experiment(system, a, b, cfg["T"], cfg["dt"], stream, stream, m, c_R)
    report = out / "uniqueness.csv"
    write_csv(report, ["t", "dist_l2", "dist_m", "G", "weight", "Q"],
              [[repr(float(x)) for x in row]
               for row in zip(rep.t, rep.dist_l2, rep.dist_m, rep.G, rep.weight, rep.Q)])
    lines = [f"uniqueness.delta = {cfg['uniqueness.delta']!r}", f"uniqueness.m = {m}",
             f"uniqueness.c_R = {c_R!r}", f"uniqueness.sup_l2 = {rep.sup_l2!r}",
             f"uniqueness.sup_m = {rep.sup_m!r}"]
    meta = out / "metadata.txt"
    write_metadata(meta, cfg, lines, RNG_ALGORITHM, version)
    return Outcome(EXIT_OK, [report, meta], lines)


def run_cauchy(cfg: RunConfig, out: Path) -> Outcome:
    system = build_system(cfg)
    r0, u0, _ = initial_data(cfg)
    rows = cauchy_in_probability(system, r0, u0, cfg["cauchy.levels"], cfg["cauchy.paths"],
                                 cfg["cauchy.epsilons"], cfg["T"], cfg["dt"], cfg["seed"])
    table = out / "cauchy.csv"
    write_csv(table, cauchy_header(cfg["cauchy.epsilons"]), cauchy_table_rows(rows))
    lines = [f"cauchy.rows = {len(rows)}"]
    meta = out / "metadata.txt"
    write_metadata(meta, cfg, lines, RNG_ALGORITHM)
    return Outcome(EXIT_OK, [table, meta], lines)


def run_continuation(cfg: RunConfig, out: Path) -> Outcome:
    system = build_system(cfg)
    r0, u0, t0 = initial_data(cfg)
    state = system.initial_state(r0, u0, t=t0)
    schedule = [cfg["R"] * cfg["continuation.growth"] ** j for j in range(cfg["continuation.levels"])]
    res = maximal_continuation(system, state, cfg["T"], cfg["dt"], _stream(cfg, system), schedule,
                               cfg["continuation.budget"])
    trace = out / "trace.csv"
    write_trace(trace, res.trajectory, cfg["stride"])
    snap = out / "final.sns"
    write_snapshot(res.trajectory.final, snap)
    lines = res.lines() + _event_lines(res.trajectory)
    if res.trajectory.error:
        lines.append(f"error = {res.trajectory.error}")
    meta = out / "metadata.txt"
    write_metadata(meta, cfg, lines, RNG_ALGORITHM)
    code = EXIT_OK
    if res.trajectory.status == "aborted":
        code = EXIT_ERROR
    elif res.inconclusive and res.steps_used >= cfg["continuation.budget"]:
        code = EXIT_BUDGET
    return Outcome(code, [trace, meta, snap], lines)


def run_validate_noise(cfg: RunConfig, out: Path) -> Outcome:
    grid = cfg.grid
    model = build_noise(cfg, grid)
    box = StateBox(cfg["noise.box.rho_min"], cfg["noise.box.rho_max"], cfg["noise.box.q_min"],
                   cfg["noise.box.q_max"])
    rep = validate_noise(model, box, cfg["s"], seed=cfg["seed"])
    report = out / "noise_validation.txt"
    report.write_text("\n".join(rep.lines()) + "\n", encoding="utf-8")
    meta = out / "metadata.txt"
    write_metadata(meta, cfg, [f"noise.passed = {str(rep.passed).lower()}"], RNG_ALGORITHM)
    return Outcome(EXIT_OK if rep.passed else EXIT_AUDIT, [report, meta], rep.lines())


def run_fit_constants(cfg: RunConfig, out: Path) -> Outcome:
    """Fit every empirical constant on one ensemble and validate on a disjoint one."""
    grid, s, seed = cfg.grid, cfg["s"], cfg["seed"]
    nfit, nval = cfg["constants.fit_samples"], cfg["constants.validate_samples"]
    table, violations = {}, {}
    for kind in ("product", "commutator", "composition"):
        c = fit_constant(moser_ensemble(kind, grid, s, nfit, seed))
        table[f"moser.{kind}"] = c
        violations[f"moser.{kind}"] = count_violations(
            moser_ensemble(kind, grid, s, nval, seed + 1_000_003), c)
    comm, comm_v = commutator_table(cfg)
    table.update(comm)
    violations.update(comm_v)
    table.update(embedding_table(cfg))
    version = table_version(table)
    lines = [f"constants.version = {version}"]
    lines += [f"{k} = {v!r}" for k, v in table.items()]
    lines += [f"violations.{k} = {v}" for k, v in violations.items()]
    path = out / "constants.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = out / "metadata.txt"
    write_metadata(meta, cfg, [f"violations.total = {sum(violations.values())}"], RNG_ALGORITHM, version)
    code = EXIT_OK if sum(violations.values()) == 0 else EXIT_AUDIT
    return Outcome(code, [path, meta], lines)


DRIVERS = {
    "single": run_single,
    "ensemble": run_ensemble,
    "uniqueness": run_uniqueness,
    "cauchy": run_cauchy,
    "continuation": run_continuation,
    "validate-noise": run_validate_noise,
    "fit-constants": run_fit_constants,
}


def drive(experiment: str, cfg: RunConfig, out) -> Outcome:
    """Run ``experiment`` and map library errors onto exit codes."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if experiment not in DRIVERS:
        raise ConfigError(f"unknown experiment {experiment!r}", "experiment")
    try:
        return DRIVERS[experiment](cfg, out)
    except ConfigError:
        raise
    except StochNSError as exc:
        return Outcome(EXIT_ERROR, [], [f"error = {type(exc).__name__}: {exc}"])
