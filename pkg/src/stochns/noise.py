"""Truncated cylindrical Wiener process and the diffusion coefficients it drives.

The noise enters the momentum equation through ``F_k(x, r, u) = G_k(x, rho, rho u) / rho``.
In the model case ``G_k = a_k rho + A_k q`` this reduces to ``F_k = a_k + A_k u``.

Random numbers come from counter-based Philox streams: the key depends on
(master seed, path index) and the counter on (sub-stream, step index), so the
increments of a given step are reproducible and independent of the grid.
"""

from __future__ import annotations

import importlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ConfigError, NoiseHypothesisError
from .fluid import FluidParams, r_to_rho
from .spectral import (
    SpectralField,
    TorusGrid,
    dealias_product,
    derivative_multiplier,
    fft,
    ifft,
    multi_indices,
)

RNG_ALGORITHM = "numpy.random.Philox(4x64-10); key=SeedSequence(seed, spawn_key=(path,)); counter=(0,0,substream,step)"


def default_alphas(K: int, alpha0: float) -> np.ndarray:
    return alpha0 / np.arange(1, K + 1, dtype=float) ** 2


def u0_norm(weights) -> float:
    """``(sum_k w_k^2 / k^2)^(1/2)`` for a finite sequence indexed from k = 1."""
    w = np.asarray(weights, dtype=float)
    k = np.arange(1, w.size + 1)
    return float(np.sqrt(np.sum(w**2 / k**2)))


# ---------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class NoiseStream:
    """Splittable stream for one path; draws are indexed by (step, substream)."""

    seed: int
    path: int = 0

    @cached_property
    def key(self) -> np.ndarray:
        return np.random.SeedSequence(self.seed, spawn_key=(self.path,)).generate_state(2, np.uint64)

    def normals(self, step: int, count: int, substream: int = 0) -> np.ndarray:
        counter = np.array([0, 0, substream, step], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=self.key, counter=counter))
        return gen.standard_normal(count)


@dataclass(frozen=True)
class WienerIncrement:
    dt: float
    dbeta: np.ndarray
    stream: tuple = (0, 0)
    step: int = 0

    @property
    def modes(self) -> int:
        return self.dbeta.size


def sample_increments(dt: float, stream: NoiseStream, step: int, modes: int) -> WienerIncrement:
    """Independent ``N(0, dt)`` draws for ``modes`` Brownian motions over one step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = stream.normals(step, modes)
    return WienerIncrement(dt, np.sqrt(dt) * z, (stream.seed, stream.path), step)


def bridge_increments(inc: WienerIncrement, n: int, stream: NoiseStream | None) -> list:
    """Split one increment into ``n`` sub-increments with the correct conditional law.

    Fine draws come from a dedicated substream; the Brownian-bridge correction
    makes them sum exactly to ``inc.dbeta``.
    """
    if n == 1:
        return [inc]
    K = inc.modes
    h = inc.dt / n
    if stream is None or K == 0:
        fine = np.zeros((n, K))
    else:
        fine = np.sqrt(h) * stream.normals(inc.step, n * K, substream=n).reshape(n, K)
    fine += (inc.dbeta - fine.sum(axis=0)) / n
    return [WienerIncrement(h, fine[i], inc.stream, inc.step) for i in range(n)]


# ---------------------------------------------------------------------------
# stencil parsing for configuration-defined fields


def _trig(grid: TorusGrid, func: str, wavevec, amp: float) -> np.ndarray:
    if len(wavevec) != grid.dim:
        raise ValueError(f"wave vector {wavevec} has wrong length for dim={grid.dim}")
    phase = sum(m * grid.nodes[d] for d, m in enumerate(wavevec))
    if func == "cos":
        return amp * np.cos(phase)
    if func == "sin":
        return amp * np.sin(phase)
    raise ValueError(f"unknown stencil function {func!r}")


def parse_a_stencil(text: str, grid: TorusGrid) -> np.ndarray:
    """``"comp cos|sin m1,m2 amp; ..."`` -> vector field values ``(N, *shape)``."""
    out = np.zeros((grid.dim,) + grid.shape)
    for term in filter(None, (t.strip() for t in text.split(";"))):
        parts = term.split()
        if len(parts) != 4:
            raise ValueError(f"bad stencil term {term!r}; expected 'comp func wavevec amp'")
        comp = int(parts[0])
        if not 0 <= comp < grid.dim:
            raise ValueError(f"component {comp} out of range")
        wv = tuple(int(m) for m in parts[2].split(","))
        out[comp] += _trig(grid, parts[1], wv, float(parts[3]))
    return out


def parse_A_stencil(text: str, grid: TorusGrid) -> np.ndarray:
    """``"i j cos|sin m1,m2 amp; ..."`` -> matrix field values ``(N, N, *shape)``."""
    out = np.zeros((grid.dim, grid.dim) + grid.shape)
    for term in filter(None, (t.strip() for t in text.split(";"))):
        parts = term.split()
        if len(parts) != 5:
            raise ValueError(f"bad stencil term {term!r}; expected 'i j func wavevec amp'")
        i, j = int(parts[0]), int(parts[1])
        if not (0 <= i < grid.dim and 0 <= j < grid.dim):
            raise ValueError(f"matrix index ({i}, {j}) out of range")
        wv = tuple(int(m) for m in parts[3].split(","))
        out[i, j] += _trig(grid, parts[2], wv, float(parts[4]))
    return out


def load_callable(spec: str) -> Callable:
    """Resolve ``"package.module:function"``."""
    mod, _, name = spec.partition(":")
    if not mod or not name:
        raise ConfigError(f"expected 'module:function', got {spec!r}", "noise.general")
    try:
        return getattr(importlib.import_module(mod), name)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load {spec!r}: {exc}", "noise.general") from exc


# ---------------------------------------------------------------------------


@dataclass
class NoiseModel:
    """Finite family of diffusion coefficients with decay weights ``alphas``.

    Model case: ``a`` has shape ``(K, N, *shape)`` and ``A`` (optional) has
    shape ``(K, N, N, *shape)``.  General case: ``G(k, x, rho, q)`` returns
    an ``(N, *shape)`` array for 1-based mode index ``k``.
    """

    grid: TorusGrid
    alphas: np.ndarray
    kind: str = "model"
    a: np.ndarray | None = None
    A: np.ndarray | None = None
    G: Callable | None = None
    description: str = ""

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        K, N, shape = self.modes, self.grid.dim, self.grid.shape
        if self.kind == "model":
            if self.a is None:
                self.a = np.zeros((K, N) + shape)
            self.a = np.asarray(self.a, dtype=float)
            if self.a.shape != (K, N) + shape:
                raise ValueError(f"a must have shape {(K, N) + shape}, got {self.a.shape}")
            if self.A is not None:
                self.A = np.asarray(self.A, dtype=float)
                if self.A.shape != (K, N, N) + shape:
                    raise ValueError(f"A must have shape {(K, N, N) + shape}")
                if not np.any(self.A):
                    self.A = None
        elif self.kind == "general":
            if self.G is None:
                raise ValueError("general noise needs an evaluator G")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def modes(self) -> int:
        return self.alphas.size

    @property
    def is_zero(self) -> bool:
        return self.kind == "model" and not np.any(self.a) and self.A is None

    @property
    def tail_bound(self) -> float:
        """Upper bound on ``sum_{k > K} alpha0 / k^2`` (i.e. ``alpha0 / K``) for the default decay."""
        alpha0 = self.alphas[0] if self.modes else 0.0
        return float(alpha0 / max(self.modes, 1))

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, grid: TorusGrid, modes: int = 0):
        return cls(grid, np.zeros(modes))

    @classmethod
    def default(cls, grid: TorusGrid, modes: int = 16, alpha0: float = 0.1, s: int = 4,
                rho_max: float = 2.0):
        """Additive model noise: mode k forces component ``(k-1) % N`` with a
        cos/sin wave of wavenumber ``(k+1)//2`` along that axis.

        Amplitudes ``alpha_k m^-s / rho_max`` keep every derivative of
        ``G_k = a_k rho`` up to order ``s`` below ``alpha_k`` for ``rho <= rho_max``.
        """
        alphas = default_alphas(modes, alpha0)
        a = np.zeros((modes, grid.dim) + grid.shape)
        for idx in range(modes):
            k = idx + 1
            m = (k + 1) // 2
            comp = idx % grid.dim
            wv = [0] * grid.dim
            wv[comp] = m
            func = "cos" if k % 2 else "sin"
            a[idx, comp] = _trig(grid, func, wv, alphas[idx] * m ** (-float(s)) / rho_max)
        return cls(grid, alphas, "model", a, None, description="default")

    @classmethod
    def from_config(cls, grid: TorusGrid, modes: int, alpha0: float, s: int, kind: str = "model",
                    a_stencils: dict | None = None, A_stencils: dict | None = None,
                    general: str | None = None):
        alphas = default_alphas(modes, alpha0)
        if kind == "general":
            if not general:
                raise ConfigError("general noise requires noise.general = module:function",
                                  "noise.general")
            return cls(grid, alphas, "general", G=load_callable(general), description=general)
        a_stencils = a_stencils or {}
        A_stencils = A_stencils or {}
        if not a_stencils and not A_stencils:
            return cls.default(grid, modes, alpha0, s)
        a = np.zeros((modes, grid.dim) + grid.shape)
        A = np.zeros((modes, grid.dim, grid.dim) + grid.shape)
        for k, text in a_stencils.items():
            if not 1 <= k <= modes:
                raise ConfigError(f"mode {k} outside 1..{modes}", f"noise.a.{k}")
            try:
                a[k - 1] = parse_a_stencil(text, grid)
            except ValueError as exc:
                raise ConfigError(str(exc), f"noise.a.{k}") from exc
        for k, text in A_stencils.items():
            if not 1 <= k <= modes:
                raise ConfigError(f"mode {k} outside 1..{modes}", f"noise.A.{k}")
            try:
                A[k - 1] = parse_A_stencil(text, grid)
            except ValueError as exc:
                raise ConfigError(str(exc), f"noise.A.{k}") from exc
        return cls(grid, alphas, "model", a, A, description="stencil")

    # -- evaluation -------------------------------------------------------

    def G_values(self, k: int, rho, q) -> np.ndarray:
        """``G_k(x, rho, q)`` on the nodes for 1-based ``k``; rho, q broadcast."""
        rho = np.broadcast_to(np.asarray(rho, float), self.grid.shape)
        q = np.broadcast_to(np.asarray(q, float), (self.grid.dim,) + self.grid.shape)
        if self.kind == "general":
            return np.asarray(self.G(k, self.grid.nodes, rho, q), dtype=float)
        out = self.a[k - 1] * rho
        if self.A is not None:
            out = out + np.einsum("ij...,j...->i...", self.A[k - 1], q)
        return out

    @cached_property
    def _a_hat(self):
        return fft(self.a, self.grid) * self.grid.dealias_mask

    @cached_property
    def _A_hat(self):
        return None if self.A is None else fft(self.A, self.grid) * self.grid.dealias_mask

    def eval_F(self, r: SpectralField, u: SpectralField, params: FluidParams) -> np.ndarray:
        """Collocation values of the dealiased ``F_k(r, u)``, shape ``(K, N, *shape)``."""
        grid = self.grid
        if self.kind == "general":
            rho = r_to_rho(r, params).values[0]
            out = np.array([self.G_values(k, rho, rho * u.values) / rho
                            for k in range(1, self.modes + 1)])
            return ifft(fft(out, grid) * grid.dealias_mask, grid)
        out = ifft(self._a_hat, grid)
        if self.A is not None:
            uval = ifft(u.hat * grid.dealias_mask, grid)
            Aval = ifft(self._A_hat, grid)
            prod = np.einsum("kij...,j...->ki...", Aval, uval)
            out = out + ifft(fft(prod, grid) * grid.dealias_mask, grid)
        return out

    def forcing(self, r: SpectralField, u: SpectralField, params: FluidParams,
                dbeta: np.ndarray) -> np.ndarray:
        """Raw coefficients of ``sum_k F_k(r, u) dbeta_k`` (vector, dealiased)."""
        grid = self.grid
        if self.modes == 0 or self.is_zero:
            return np.zeros((grid.dim,) + grid.shape, dtype=complex)
        if self.kind == "general":
            F = self.eval_F(r, u, params)
            return fft(np.tensordot(dbeta, F, axes=1), grid)
        out = np.tensordot(dbeta, self._a_hat, axes=1)
        if self.A is not None:
            Ab = ifft(np.tensordot(dbeta, self._A_hat, axes=1), grid)
            uval = ifft(u.hat * grid.dealias_mask, grid)
            prod = np.einsum("ij...,j...->i...", Ab, uval)
            out = out + fft(prod, grid) * grid.dealias_mask
        return out


# ---------------------------------------------------------------------------
# hypothesis validation


@dataclass(frozen=True)
class StateBox:
    rho_min: float = 0.5
    rho_max: float = 2.0
    q_min: float = -1.0
    q_max: float = 1.0
    points: int = 3

    def __post_init__(self):
        if not 0 < self.rho_min <= self.rho_max:
            raise ValueError("state box needs 0 < rho_min <= rho_max")
        if not (np.isfinite(self.q_min) and np.isfinite(self.q_max) and self.q_min <= self.q_max):
            raise ValueError("state box needs finite q bounds")

    def lattice(self, dim: int):
        rhos = np.linspace(self.rho_min, self.rho_max, self.points)
        qs = np.linspace(self.q_min, self.q_max, self.points)
        for rho in rhos:
            for q in itertools.product(qs, repeat=dim):
                yield float(rho), np.array(q)


@dataclass
class NoiseValidationReport:
    fg1_max: np.ndarray
    fg2_ratio: np.ndarray
    growth_constant: float
    growth_observed: float
    offenders: list = field(default_factory=list)
    orders_checked: tuple = ()

    @property
    def fg1_pass(self) -> bool:
        return not any(o[1] == 0 for o in self.offenders)

    @property
    def fg2_pass(self) -> bool:
        return not any(o[1] > 0 for o in self.offenders)

    @property
    def growth_pass(self) -> bool:
        return self.growth_observed <= self.growth_constant * (1 + 1e-12)

    @property
    def passed(self) -> bool:
        return self.fg1_pass and self.fg2_pass and self.growth_pass

    def lines(self) -> list:
        out = [f"fg1 = {'pass' if self.fg1_pass else 'fail'}",
               f"fg2 = {'pass' if self.fg2_pass else 'fail'}",
               f"growth = {'pass' if self.growth_pass else 'fail'}",
               f"growth_constant = {self.growth_constant!r}",
               f"growth_observed = {self.growth_observed!r}",
               f"fg2_max_ratio = {float(np.max(self.fg2_ratio, initial=0.0))!r}"]
        for k, l, point in self.offenders[:50]:
            out.append(f"offender = k={k} l={l} point={point}")
        return out


def _spectral_x_derivs(values, grid, order):
    """All x-derivatives of exact order ``order`` of node values ``(..., *shape)``."""
    hat = fft(values, grid)
    return [ifft(hat * derivative_multiplier(grid, beta), grid) for beta in multi_indices(grid.dim, order)]


def _node_point(grid, flat_index):
    idx = np.unravel_index(flat_index, grid.shape)
    return tuple(round(float(grid.nodes[d][idx]), 6) for d in range(grid.dim))


def validate_noise(model: NoiseModel, box: StateBox = StateBox(), s: int = 4,
                   fd_step: float = 1e-3, strict: bool = False, samples: int = 64,
                   seed: int = 0) -> NoiseValidationReport:
    """Check ``G_k(., 0, 0) = 0`` and ``sup |d^l G_k| <= alpha_k`` for ``l = 1..s``.

    Derivatives are taken in all variables ``(x, rho, q)``; x-derivatives are
    spectral, state derivatives exact (model case) or central differences up to
    second order (general case).  Also measures the linear-growth constant of
    ``sum_k |F_k| <= c (1 + |u|)``.
    """
    grid = model.grid
    K = model.modes
    N = grid.dim
    fg1 = np.zeros(K)
    ratio = np.zeros((K, s))
    offenders = []
    zero_q = np.zeros((N,) + grid.shape)
    orders = tuple(range(1, s + 1))
    for k in range(1, K + 1):
        g0 = model.G_values(k, 0.0, zero_q)
        fg1[k - 1] = float(np.max(np.abs(g0), initial=0.0))
        if fg1[k - 1] > 1e-12:
            flat = int(np.argmax(np.max(np.abs(g0), axis=0)))
            offenders.append((k, 0, (_node_point(grid, flat), 0.0, (0.0,) * N)))
        alpha = model.alphas[k - 1]
        for l in orders:
            worst, where = 0.0, None
            for rho, q in box.lattice(N):
                for val, flat in _order_l_sups(model, k, rho, q, l, fd_step):
                    if val > worst:
                        worst, where = val, (_node_point(grid, flat), rho, tuple(float(x) for x in q))
            ratio[k - 1, l - 1] = worst / alpha if alpha > 0 else (0.0 if worst == 0 else np.inf)
            if worst > alpha * (1 + 1e-9) + 1e-14:
                offenders.append((k, l, where))
    gc, go = _growth(model, box, samples, seed)
    report = NoiseValidationReport(fg1, ratio, gc, go, offenders, orders)
    if strict and not report.passed:
        raise NoiseHypothesisError("noise hypotheses violated", offenders)
    return report


def _order_l_sups(model, k, rho, q, l, h):
    """Yield (sup over nodes of one derivative of order l, argmax node)."""
    grid = model.grid
    N = grid.dim

    def G(rr, qq):
        return model.G_values(k, rr, np.broadcast_to(qq.reshape((N,) + (1,) * N), (N,) + grid.shape))

    def emit(values):
        a = np.max(np.abs(values).reshape(-1, grid.size), axis=0)
        return float(a.max()), int(a.argmax())

    # pure x-derivatives
    for d in _spectral_x_derivs(G(rho, q), grid, l):
        yield emit(d)
    if model.kind == "model":
        # one state derivative; the map is affine in (rho, q)
        for d in _spectral_x_derivs(model.a[k - 1], grid, l - 1):
            yield emit(d)
        if model.A is not None:
            for d in _spectral_x_derivs(model.A[k - 1], grid, l - 1):
                yield emit(d)
        return
    # general: state derivatives by central differences (orders 1 and 2)
    basis = [np.eye(N + 1)[i] for i in range(N + 1)]

    def shifted(e):
        return G(rho + e[0], q + e[1:])

    for e in basis:
        first = (shifted(h * e) - shifted(-h * e)) / (2 * h)
        for d in _spectral_x_derivs(first, grid, l - 1):
            yield emit(d)
    if l >= 2:
        for e1, e2 in itertools.combinations_with_replacement(basis, 2):
            second = (shifted(h * (e1 + e2)) - shifted(h * (e1 - e2)) - shifted(h * (e2 - e1))
                      + shifted(-h * (e1 + e2))) / (4 * h * h)
            for d in _spectral_x_derivs(second, grid, l - 2):
                yield emit(d)


def _growth(model, box, samples, seed):
    """(bound, observed) for ``sum_k sup_x |F_k| / (1 + |u|_inf)`` on random states."""
    grid = model.grid
    if model.modes == 0:
        return 0.0, 0.0
    if model.kind == "model":
        amax = np.sum(np.max(np.sqrt(np.sum(model.a**2, axis=1)).reshape(model.modes, -1), axis=1))
        Amax = 0.0
        if model.A is not None:
            Amat = np.moveaxis(model.A.reshape(model.modes, grid.dim, grid.dim, -1), -1, 1)
            Amax = np.sum(np.max(np.linalg.norm(Amat, ord=2, axis=(-2, -1)), axis=1))
        bound = float(max(amax, Amax))
    else:
        bound = float("inf")
    rng = np.random.default_rng(seed)
    observed = 0.0
    for _ in range(samples):
        rho = rng.uniform(box.rho_min, box.rho_max, grid.shape)
        u = rng.uniform(box.q_min, box.q_max, (grid.dim,) + grid.shape) * rng.uniform(0, 4)
        total = 0.0
        for k in range(1, model.modes + 1):
            F = model.G_values(k, rho, rho * u) / rho
            total += float(np.max(np.sqrt(np.sum(F**2, axis=0))))
        umax = float(np.max(np.sqrt(np.sum(u**2, axis=0))))
        observed = max(observed, total / (1.0 + umax))
    if model.kind == "general":
        bound = observed
    return bound, observed
