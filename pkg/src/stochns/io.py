"""Configuration text, binary snapshots, CSV traces, metadata and plot data."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import math
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChecksumError, ConfigError, SnapshotError
from .spectral import SpectralField, TorusGrid

__version__ = "0.1.0"

EXPERIMENTS = ("single", "ensemble", "uniqueness", "cauchy", "continuation", "validate-noise")
STOP_ON = ("none", "tau_R", "tau_K")


def _intlist(text):
    return tuple(int(x) for x in str(text).replace(",", " ").split())


def _floatlist(text):
    return tuple(float(x) for x in str(text).replace(",", " ").split())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


# key, parser, default
SCHEMA = (
    ("experiment", str, "single"),
    ("dim", int, 1),
    ("M", int, 64),
    ("s", int, 4),
    ("gamma", float, 2.0),
    ("a", float, 1.0),
    ("mu", float, 1.0),
    ("lambda", float, 0.0),
    ("R", float, 10.0),
    ("T", float, 0.5),
    ("dt", float, 1e-3),
    ("stride", int, 10),
    ("seed", int, 0),
    ("init", str, "standard"),
    ("r_floor", float, 0.0),
    ("stop_on", str, "none"),
    ("K", float, 0.0),
    ("audit", _bool, True),
    ("galerkin.level", int, 0),
    ("shell.bound", int, 64),
    ("noise.kind", str, "model"),
    ("noise.modes", int, 16),
    ("noise.decay_alpha0", float, 0.1),
    ("noise.general", str, ""),
    ("noise.box.rho_min", float, 0.5),
    ("noise.box.rho_max", float, 2.0),
    ("noise.box.q_min", float, -1.0),
    ("noise.box.q_max", float, 1.0),
    ("ensemble.paths", int, 8),
    ("ensemble.trend_R", _floatlist, ()),
    ("cauchy.levels", _intlist, (8, 16, 32)),
    ("cauchy.paths", int, 50),
    ("cauchy.epsilons", _floatlist, (0.01,)),
    ("uniqueness.delta", float, 1e-4),
    ("uniqueness.m", int, 0),
    ("uniqueness.c_R", float, 0.0),
    ("continuation.levels", int, 4),
    ("continuation.growth", float, 2.0),
    ("continuation.budget", int, 100000),
    ("embed.trials", int, 2000),
    ("constants.fit_samples", int, 200),
    ("constants.validate_samples", int, 100),
    ("snapshot.every", int, 0),
)
PARSERS = {k: p for k, p, _ in SCHEMA}
DEFAULTS = {k: d for k, _, d in SCHEMA}


@dataclass
class RunConfig:
    """Validated run configuration; ``values`` maps dotted keys to typed values."""

    values: dict
    a_stencils: dict
    A_stencils: dict

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **updates) -> "RunConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        cfg = RunConfig(vals, dict(self.a_stencils), dict(self.A_stencils))
        validate_config(cfg)
        return cfg

    @property
    def steps(self) -> int:
        return int(round(self["T"] / self["dt"]))

    @property
    def level(self) -> int:
        full = 2 * (self["M"] // 3) + 1
        return self["galerkin.level"] or full

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self["dim"], self["M"])


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments, dotted keys); unknown keys are rejected."""
    vals = dict(DEFAULTS)
    a_st, A_st = {}, {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = (p.strip() for p in line.partition("="))
        if key in seen:
            raise ConfigError(f"duplicate key on line {lineno}", key)
        seen.add(key)
        if key.startswith("noise.a.") or key.startswith("noise.A."):
            try:
                k = int(key.split(".")[2])
            except (ValueError, IndexError):
                raise ConfigError("stencil keys look like noise.a.<k> / noise.A.<k>", key) from None
            (a_st if key.startswith("noise.a.") else A_st)[k] = value
            continue
        if key not in PARSERS:
            raise ConfigError("unknown key", key)
        try:
            vals[key] = PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {value!r}: {exc}", key) from None
    cfg = RunConfig(vals, a_st, A_st)
    validate_config(cfg)
    return cfg


def render_config(cfg: RunConfig) -> str:
    lines = [f"{k} = {_fmt(cfg.values[k])}" for k, _, _ in SCHEMA]
    lines += [f"noise.a.{k} = {v}" for k, v in sorted(cfg.a_stencils.items())]
    lines += [f"noise.A.{k} = {v}" for k, v in sorted(cfg.A_stencils.items())]
    return "\n".join(lines) + "\n"


def validate_config(cfg: RunConfig):
    v = cfg.values
    if v["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"must be one of {', '.join(EXPERIMENTS)}", "experiment")
    if v["dim"] not in (1, 2, 3):
        raise ConfigError("must be 1, 2 or 3", "dim")
    M = v["M"]
    if M < 8 or M & (M - 1):
        raise ConfigError("must be a power of two and at least 8", "M")
    dim, s = v["dim"], v["s"]
    extra = 3 if v["experiment"] == "uniqueness" else 2
    if not s > dim / 2 + extra:
        need = math.floor(dim / 2 + extra) + 1
        what = "uniqueness needs s > N/2 + 3" if extra == 3 else "needs s > N/2 + 2"
        raise ConfigError(f"too small for dim = {dim} ({what}, so s >= {need})", "s")
    if not v["gamma"] > 1:
        raise ConfigError("must exceed 1", "gamma")
    for key in ("a", "mu", "R", "dt"):
        if not v[key] > 0:
            raise ConfigError("must be positive", key)
    if not v["lambda"] >= 0:
        raise ConfigError("must be nonnegative", "lambda")
    if not v["T"] >= 0:
        raise ConfigError("must be nonnegative", "T")
    n = v["T"] / v["dt"]
    steps = int(round(n))
    if abs(n - steps) > 1e-9 * max(1.0, n):
        raise ConfigError(f"T = {v['T']} is not a multiple of dt = {v['dt']}", "T")
    if v["stride"] < 1:
        raise ConfigError("must be at least 1", "stride")
    if steps and steps % v["stride"]:
        raise ConfigError(f"must divide the step count {steps}", "stride")
    if v["noise.modes"] < 1:
        raise ConfigError("must be positive", "noise.modes")
    if v["noise.decay_alpha0"] < 0:
        raise ConfigError("must be nonnegative", "noise.decay_alpha0")
    if v["noise.kind"] not in ("model", "general"):
        raise ConfigError("must be model or general", "noise.kind")
    if v["noise.kind"] == "general" and not v["noise.general"]:
        raise ConfigError("general noise needs noise.general = module:function", "noise.general")
    if not 0 < v["noise.box.rho_min"] <= v["noise.box.rho_max"]:
        raise ConfigError("need 0 < rho_min <= rho_max", "noise.box.rho_min")
    if not v["noise.box.q_min"] <= v["noise.box.q_max"]:
        raise ConfigError("need q_min <= q_max", "noise.box.q_min")
    for k in list(cfg.a_stencils) + list(cfg.A_stencils):
        if not 1 <= k <= v["noise.modes"]:
            raise ConfigError(f"mode {k} outside 1..{v['noise.modes']}", f"noise.a.{k}")
    full = 2 * (M // 3) + 1
    if not 0 <= v["galerkin.level"] <= full:
        raise ConfigError(f"must lie in [1, {full}] (0 selects the full band)", "galerkin.level")
    if v["stop_on"] not in STOP_ON:
        raise ConfigError(f"must be one of {', '.join(STOP_ON)}", "stop_on")
    if v["K"] < 0:
        raise ConfigError("must be nonnegative (0 selects K(R))", "K")
    if v["r_floor"] < 0:
        raise ConfigError("must be nonnegative", "r_floor")
    init = v["init"]
    if init not in ("standard", "rest") and not init.startswith("snapshot:"):
        raise ConfigError("must be standard, rest or snapshot:PATH", "init")
    levels = v["cauchy.levels"]
    if len(levels) < 2 or any(b < a for a, b in zip(levels, levels[1:])) or levels[0] < 1:
        raise ConfigError("need at least two nondecreasing positive levels", "cauchy.levels")
    # the band limit depends on M, so it only binds when the levels are used
    if v["experiment"] == "cauchy" and levels[-1] > full:
        raise ConfigError(f"levels must lie in [1, {full}] for M = {M}", "cauchy.levels")
    if any(R <= 0 for R in v["ensemble.trend_R"]):
        raise ConfigError("radii must be positive", "ensemble.trend_R")
    if not v["cauchy.epsilons"] or any(e <= 0 for e in v["cauchy.epsilons"]):
        raise ConfigError("need positive thresholds", "cauchy.epsilons")
    for key in ("ensemble.paths", "cauchy.paths", "continuation.levels", "continuation.budget",
                "embed.trials", "shell.bound", "constants.fit_samples", "constants.validate_samples"):
        if v[key] < 1:
            raise ConfigError("must be positive", key)
    if not v["continuation.growth"] > 1:
        raise ConfigError("must exceed 1", "continuation.growth")
    if v["uniqueness.m"] < 0 or v["uniqueness.c_R"] < 0 or v["snapshot.every"] < 0:
        raise ConfigError("must be nonnegative", "uniqueness.m")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# snapshots

MAGIC = b"SNS1"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sBBBId")


@dataclass
class Snapshot:
    t: float
    grid: TorusGrid
    values: np.ndarray

    @property
    def r(self) -> SpectralField:
        return SpectralField(self.grid, self.values[0])

    @property
    def u(self) -> SpectralField:
        return SpectralField(self.grid, self.values[1:], vector=True)


def snapshot_bytes(t: float, r: SpectralField, u: SpectralField) -> bytes:
    grid = r.grid
    values = np.concatenate([r.values, u.values])
    head = _HEADER.pack(MAGIC, SNAPSHOT_VERSION, grid.dim, values.shape[0], grid.M, float(t))
    body = head + np.ascontiguousarray(values, dtype="<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_snapshot(state, path):
    """Write ``state`` (anything with ``t``, ``r``, ``u``) atomically."""
    data = snapshot_bytes(state.t, state.r, state.u)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def read_snapshot(path, dim: int | None = None, M: int | None = None) -> Snapshot:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise ChecksumError(f"{path}: truncated snapshot ({len(data)} bytes)")
    body, tail = data[:-4], data[-4:]
    if struct.unpack("<I", tail)[0] != zlib.crc32(body) & 0xFFFFFFFF:
        raise ChecksumError(f"{path}: checksum mismatch")
    magic, version, sdim, ncomp, sM, t = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    if sdim not in (1, 2, 3) or ncomp != 1 + sdim:
        raise SnapshotError(f"{path}: inconsistent header (dim={sdim}, components={ncomp})")
    if (dim is not None and dim != sdim) or (M is not None and M != sM):
        raise SnapshotError(f"{path}: dimension mismatch (file dim={sdim}, M={sM}; "
                            f"expected dim={dim}, M={M})")
    count = ncomp * sM**sdim
    payload = body[_HEADER.size:]
    if len(payload) != 8 * count:
        raise ChecksumError(f"{path}: payload size {len(payload)} does not match header")
    grid = TorusGrid(sdim, sM)
    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape((ncomp,) + grid.shape)
    snap = Snapshot(float(t), grid, values)
    # constructing the fields validates finiteness and shapes
    snap.r, snap.u
    return snap


# ---------------------------------------------------------------------------
# traces and tables

TRACE_COLUMNS = ("t", "r_s2", "u_s2", "u_2inf", "min_r", "phi", "dissipation", "event")


def trace_rows(traj, stride: int) -> list:
    """Rows every ``stride`` steps plus event rows at their crossing times."""
    s = traj.series
    n = len(s["t"])
    events = {}
    for t, name in traj.events:
        events.setdefault(t, []).append(name)
    rows = []
    for j in range(n):
        t = s["t"][j]
        on_stride = j % stride == 0
        ev = events.pop(t, None)
        if on_stride or ev:
            rows.append([_fmt(float(t)), _fmt(float(s["r_s2"][j])), _fmt(float(s["u_s2"][j])),
                         _fmt(float(s["u_2inf"][j])), _fmt(float(s["min_r"][j])),
                         _fmt(float(s["phi"][j])), _fmt(float(s["dissipation"][j])),
                         ";".join(ev) if ev else "none"])
    # events at times not on the recorded grid (should not happen) are appended
    for t, names in sorted(events.items()):
        rows.append([_fmt(float(t)), "", "", "", "", "", "", ";".join(names)])
    return rows


def write_csv(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file (no header)")
    return rows[0], rows[1:]


def write_trace(path, traj, stride: int):
    write_csv(path, TRACE_COLUMNS, trace_rows(traj, stride))


def cauchy_header(epsilons) -> list:
    return ["n", "n_fine", "paths", "mean_sup_dist", "max_sup_dist"] + [f"exceed@{_fmt(float(e))}"
                                                                        for e in epsilons]


def cauchy_table_rows(rows) -> list:
    return [[str(r.n), str(r.n_fine), str(r.paths), _fmt(r.mean), _fmt(r.max)]
            + [_fmt(x) for x in r.exceedance] for r in rows]


# ---------------------------------------------------------------------------
# metadata


def build_id() -> str:
    """Deterministic describe-style id: version plus a digest of the package sources."""
    h = hashlib.sha1()
    pkg = Path(__file__).parent
    for f in sorted(pkg.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return f"v{__version__}-g{h.hexdigest()[:7]}"


def write_metadata(path, cfg: RunConfig, extra_lines=(), rng_name: str = "", constants_version: str = ""):
    lines = [f"config.{line}" for line in render_config(cfg).splitlines()]
    lines += [f"seed = {cfg['seed']}", f"rng.algorithm = {rng_name}",
              f"constants.version = {constants_version or 'none'}", f"build.id = {build_id()}"]
    lines += list(extra_lines)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metadata(path) -> list:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out.append((k.strip(), v.strip()))
    return out


# ---------------------------------------------------------------------------
# plot data


def emit_plotdata(src, out_dir) -> list:
    """Whitespace-separated data files plus a column sidecar for a trace or Cauchy table."""
    src = Path(src)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        header, rows = read_csv(src)
    except (OSError, csv.Error) as exc:
        raise ValueError(f"{src}: unreadable input: {exc}") from None
    stem = src.stem
    if tuple(header) == TRACE_COLUMNS:
        cols = ["t", "u_s2", "min_r", "phi"]
        idx = [header.index(c) for c in cols]
        data = [[row[i] for i in idx] for row in rows if row[header.index("u_s2")] != ""]
        desc = ["1 t: time", "2 u_s2: Sobolev norm of u of order s",
                "3 min_r: minimum of r", "4 phi: cut-off value"]
    elif header[:5] == ["n", "n_fine", "paths", "mean_sup_dist", "max_sup_dist"] and all(
            h.startswith("exceed@") for h in header[5:]):
        cols = ["n", "epsilon", "exceedance"]
        data = []
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{src}: malformed row {row}")
            for j, h in enumerate(header[5:], start=5):
                data.append([row[0], h[len("exceed@"):], row[j]])
        desc = ["1 n: coarse Galerkin level", "2 epsilon: threshold",
                "3 exceedance: fraction of paths with sup distance above epsilon"]
    else:
        raise ValueError(f"{src}: not a trace or Cauchy table (header {header})")
    for row in data:
        if any(cell == "" or any(ch.isspace() for ch in cell) for cell in row):
            raise ValueError(f"{src}: malformed cell in row {row}")
    dat = out_dir / f"{stem}.dat"
    dat.write_text("# " + " ".join(cols) + "\n" + "".join(" ".join(r) + "\n" for r in data),
                   encoding="utf-8")
    side = out_dir / f"{stem}.dat.columns"
    side.write_text(f"source = {src.name}\n" + "\n".join(desc) + "\n", encoding="utf-8")
    return [dat, side]
