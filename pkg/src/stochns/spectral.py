"""Fourier pseudo-spectral machinery on the flat torus [-pi, pi)^N.

Fields are stored by their collocation values on the uniform grid
``x_j = -pi + 2*pi*j/M``.  Fourier coefficients are normalised so that
``c_k = (2*pi)^-N * integral f exp(-i k.x) dx``; in particular ``c_0`` is the
mean and ``sobolev_norm(f, 0)`` is the root-mean-square of ``f``.

Internally the raw FFT coefficients ``hat = fftn(values) / M^N`` are used;
they differ from ``c_k`` by the node offset phase ``(-1)^(k_1+...+k_N)``,
which only matters for point evaluation and for the public ``coefficients``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatchError, InvalidFieldError

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class TorusGrid:
    """Uniform collocation grid with ``M`` points per axis on ``[-pi, pi)^dim``."""

    dim: int
    M: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.M < 8 or self.M & (self.M - 1):
            raise ValueError(f"M must be a power of two and at least 8, got {self.M}")

    @property
    def shape(self) -> tuple:
        return (self.M,) * self.dim

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.dim, 0))

    @property
    def size(self) -> int:
        return self.M**self.dim

    @property
    def dx(self) -> float:
        return 2.0 * np.pi / self.M

    @cached_property
    def nodes_1d(self) -> np.ndarray:
        return -np.pi + 2.0 * np.pi * np.arange(self.M) / self.M

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, M, ..., M)``."""
        return np.array(np.meshgrid(*([self.nodes_1d] * self.dim), indexing="ij"))

    @cached_property
    def k1d(self) -> np.ndarray:
        return np.fft.fftfreq(self.M, 1.0 / self.M)

    @cached_property
    def kvec(self) -> np.ndarray:
        """Integer wavenumbers in FFT order, shape ``(dim, M, ..., M)``."""
        return np.array(np.meshgrid(*([self.k1d] * self.dim), indexing="ij"))

    @cached_property
    def ksq(self) -> np.ndarray:
        return np.sum(self.kvec**2, axis=0)

    @cached_property
    def kinf(self) -> np.ndarray:
        return np.max(np.abs(self.kvec), axis=0)

    @cached_property
    def phase(self) -> np.ndarray:
        # exp(i k pi) for the node offset x_0 = -pi
        return np.where(np.sum(self.kvec, axis=0) % 2 == 0, 1.0, -1.0)

    @property
    def dealias_cutoff(self) -> int:
        """Largest retained |k_i| under the 2/3 rule."""
        return self.M // 3

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return self.kinf <= self.dealias_cutoff

    def galerkin_cutoff(self, n: int) -> int:
        """Wavenumber cutoff of Galerkin level ``n`` (``n`` real trig functions per axis)."""
        if not 1 <= n <= self.M:
            raise ValueError(f"Galerkin level must lie in [1, {self.M}], got {n}")
        return (n - 1) // 2

    def band_mask(self, cutoff: int) -> np.ndarray:
        return self.kinf <= cutoff


# ---------------------------------------------------------------------------
# raw array transforms; spatial axes are always the trailing ``dim`` axes


def fft(values, grid: TorusGrid) -> np.ndarray:
    return np.fft.fftn(values, axes=grid.axes) / grid.size


def ifft(hat, grid: TorusGrid) -> np.ndarray:
    return np.fft.ifftn(hat, axes=grid.axes).real * grid.size


@lru_cache(maxsize=256)
def derivative_multiplier(grid: TorusGrid, alpha: tuple) -> np.ndarray:
    mult = np.ones(grid.shape, dtype=complex)
    nyq = grid.M // 2
    for axis, order in enumerate(alpha):
        if order == 0:
            continue
        k = grid.kvec[axis]
        factor = (1j * k) ** order
        if order % 2:
            factor = np.where(np.abs(k) == nyq, 0.0, factor)
        mult = mult * factor
    return mult


@lru_cache(maxsize=64)
def sobolev_weights(grid: TorusGrid, s: float) -> np.ndarray:
    """Squared weights ``(1 + |k|^s)^2``; ``s = 0`` is plain L2 (weight 1)."""
    if s == 0:
        return np.ones(grid.shape)
    kabs = np.sqrt(grid.ksq)
    return (1.0 + kabs**s) ** 2


def multi_indices(dim: int, order: int) -> list:
    """All multi-indices of length ``dim`` with ``|alpha| == order``."""
    return [a for a in itertools.product(range(order + 1), repeat=dim) if sum(a) == order]


def multi_indices_upto(dim: int, order: int) -> list:
    return [a for o in range(order + 1) for a in multi_indices(dim, o)]


# ---------------------------------------------------------------------------


class SpectralField:
    """Real scalar or vector field on a :class:`TorusGrid`.

    ``values`` has shape ``(ncomp, M, ..., M)`` with ``ncomp`` equal to 1 for
    scalars and ``grid.dim`` for vector fields.
    """

    def __init__(self, grid: TorusGrid, values, vector: bool = False):
        values = np.asarray(values)
        if np.iscomplexobj(values):
            scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
            if np.max(np.abs(values.imag), initial=0.0) > HERMITIAN_TOL * scale:
                raise InvalidFieldError("collocation values must be real")
            values = values.real
        values = np.array(values, dtype=float)
        if values.shape == grid.shape:
            values = values[np.newaxis]
        ncomp = grid.dim if vector else 1
        if values.shape != (ncomp,) + grid.shape:
            raise InvalidFieldError(
                f"expected values of shape {(ncomp,) + grid.shape}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidFieldError("field contains non-finite values")
        values.flags.writeable = False
        self.grid = grid
        self.values = values
        self.vector = vector

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_hat(cls, grid, hat, vector=False):
        return cls(grid, ifft(hat, grid), vector=vector)

    @classmethod
    def from_coefficients(cls, grid: TorusGrid, coefficients, vector: bool = False):
        """Build a field from ``c_k`` in FFT ordering; rejects non-Hermitian input."""
        c = np.asarray(coefficients, dtype=complex)
        if c.shape == grid.shape:
            c = c[np.newaxis]
        flipped = np.conj(np.roll(np.flip(c, axis=grid.axes), 1, axis=grid.axes))
        scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
        if np.max(np.abs(c - flipped), initial=0.0) > HERMITIAN_TOL * scale:
            raise InvalidFieldError("coefficients are not Hermitian: c_{-k} != conj(c_k)")
        hat = c * grid.phase
        return cls(grid, np.fft.ifftn(hat, axes=grid.axes).real * grid.size, vector=vector)

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable, vector: bool = False):
        """Sample ``fn(x_1, ..., x_dim)`` on the nodes."""
        out = fn(*grid.nodes)
        if vector:
            out = np.array([np.broadcast_to(c, grid.shape) for c in out])
        else:
            out = np.broadcast_to(out, grid.shape)
        return cls(grid, out, vector=vector)

    @classmethod
    def zeros(cls, grid, vector=False):
        return cls(grid, np.zeros(((grid.dim if vector else 1),) + grid.shape), vector=vector)

    @classmethod
    def constant(cls, grid, value, vector=False):
        ncomp = grid.dim if vector else 1
        vals = np.broadcast_to(np.reshape(np.asarray(value, float), (-1,) + (1,) * grid.dim),
                               (ncomp,) + grid.shape)
        return cls(grid, vals, vector=vector)

    # -- spectral views ---------------------------------------------------

    @cached_property
    def hat(self) -> np.ndarray:
        return fft(self.values, self.grid)

    @property
    def coefficients(self) -> np.ndarray:
        """Fourier coefficients ``c_k`` in FFT ordering, shape ``(ncomp, M, ..., M)``."""
        return self.hat * self.grid.phase

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    def component(self, i: int) -> "SpectralField":
        return SpectralField(self.grid, self.values[i])

    def evaluate(self, points) -> np.ndarray:
        """Trigonometric interpolant at arbitrary points of shape ``(dim, P)``.

        Returns ``(ncomp, P)``.  Exact for band-limited fields.
        """
        return evaluate_hat(self.hat, self.grid, points)

    # -- arithmetic -------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, SpectralField):
            if other.grid != self.grid:
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return SpectralField(self.grid, self.values + self._coerce(other), self.vector)

    __radd__ = __add__

    def __sub__(self, other):
        return SpectralField(self.grid, self.values - self._coerce(other), self.vector)

    def __rsub__(self, other):
        return SpectralField(self.grid, self._coerce(other) - self.values, self.vector)

    def __mul__(self, other):
        if isinstance(other, SpectralField):
            raise TypeError("use dealias_product for products of fields")
        return SpectralField(self.grid, self.values * other, self.vector)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.values, self.vector)

    def __repr__(self):
        kind = "vector" if self.vector else "scalar"
        return f"SpectralField({kind}, dim={self.grid.dim}, M={self.grid.M})"


def _fourier_rows(theta, M):
    """``exp(i k theta)`` for k in FFT order, built by repeated multiplication."""
    half = M // 2
    base = np.exp(1j * theta)
    pos = np.empty((theta.size, half + 1), dtype=complex)
    pos[:, 0] = 1.0
    pos[:, 1:] = base[:, None]
    np.cumprod(pos, axis=1, out=pos)
    return np.concatenate([pos[:, :half], np.conj(pos[:, half:0:-1])], axis=1)


def evaluate_hat(hat, grid: TorusGrid, points) -> np.ndarray:
    """Evaluate fields given by raw ``hat`` (shape ``(ncomp, *grid.shape)``) at points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] != grid.dim:
        raise ValueError(f"points must have shape ({grid.dim}, P)")
    # shift to grid-relative coordinates so raw FFT coefficients apply
    E = [_fourier_rows(pts[d] + np.pi, grid.M) for d in range(grid.dim)]
    out = np.empty((hat.shape[0], pts.shape[1]))
    for c in range(hat.shape[0]):
        h = hat[c]
        if grid.dim == 1:
            val = E[0] @ h
        elif grid.dim == 2:
            val = np.einsum("pb,pb->p", E[0] @ h, E[1])
        else:
            tmp = np.einsum("pa,abc->pbc", E[0], h)
            tmp = np.einsum("pbc,pb->pc", tmp, E[1])
            val = np.einsum("pc,pc->p", tmp, E[2])
        out[c] = val.real
    return out


def _check_hermitian(f: SpectralField):
    if not isinstance(f, SpectralField):
        raise InvalidFieldError(f"expected a SpectralField, got {type(f).__name__}")


def _same_grid(f: SpectralField, g: SpectralField):
    if f.grid != g.grid:
        raise GridMismatchError(f"grid mismatch: {f.grid} vs {g.grid}")


# ---------------------------------------------------------------------------
# norms


def sobolev_norm(f: SpectralField, s: float) -> float:
    """``( sum_k (1 + |k|^s)^2 |c_k|^2 )^(1/2)``, summed over components.

    ``|k|`` is Euclidean with ``|0|^s = 0``; ``s = 0`` gives the normalised L2
    norm so that Parseval holds exactly.
    """
    _check_hermitian(f)
    if s < 0:
        raise ValueError("negative Sobolev order is not supported")
    w = sobolev_weights(f.grid, float(s))
    return float(np.sqrt(np.sum(w * np.abs(f.hat) ** 2)))


def l2_norm(f: SpectralField) -> float:
    return float(np.sqrt(np.mean(np.sum(f.values**2, axis=0))))


def homogeneous_norm(f: SpectralField, order: int) -> float:
    """``|| nabla^order f ||_2`` (Frobenius norm over all derivative index tuples)."""
    if order == 0:
        return l2_norm(f)
    return float(np.sqrt(np.sum(f.grid.ksq**order * np.abs(f.hat) ** 2)))


def inner(f: SpectralField, g: SpectralField) -> float:
    """Normalised L2 inner product ``(2 pi)^-N int f.g dx``."""
    _same_grid(f, g)
    return float(np.mean(np.sum(f.values * g.values, axis=0)))


def sup_norm(f: SpectralField) -> float:
    return float(np.max(np.abs(f.values)))


# ---------------------------------------------------------------------------
# linear operators


def _as_alpha(alpha, dim) -> tuple:
    if np.isscalar(alpha):
        alpha = (int(alpha),)
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != dim or any(a < 0 for a in alpha):
        raise ValueError(f"multi-index {alpha} invalid for dim={dim}")
    return alpha


def derivative(f: SpectralField, alpha) -> SpectralField:
    """``d^alpha f``: coefficients multiplied by ``(ik)^alpha``."""
    _check_hermitian(f)
    alpha = _as_alpha(alpha, f.grid.dim)
    if sum(alpha) > f.grid.M // 2 - 1:
        raise ValueError(f"|alpha| = {sum(alpha)} too large for M = {f.grid.M}")
    if sum(alpha) == 0:
        return f
    return SpectralField.from_hat(f.grid, f.hat * derivative_multiplier(f.grid, alpha), f.vector)


def gradient(f: SpectralField) -> SpectralField:
    if f.vector:
        raise InvalidFieldError("gradient expects a scalar field")
    g = f.grid
    hats = [f.hat[0] * derivative_multiplier(g, tuple(int(i == d) for i in range(g.dim)))
            for d in range(g.dim)]
    return SpectralField.from_hat(g, np.array(hats), vector=True)


def divergence(u: SpectralField) -> SpectralField:
    if not u.vector:
        raise InvalidFieldError("divergence expects a vector field")
    g = u.grid
    hat = sum(u.hat[d] * derivative_multiplier(g, tuple(int(i == d) for i in range(g.dim)))
              for d in range(g.dim))
    return SpectralField.from_hat(g, hat)


def galerkin_project(f: SpectralField, n: int) -> SpectralField:
    """Orthogonal projection onto Galerkin level ``n`` (|k|_inf <= (n-1)//2)."""
    _check_hermitian(f)
    mask = f.grid.band_mask(f.grid.galerkin_cutoff(n))
    return SpectralField.from_hat(f.grid, f.hat * mask, f.vector)


def truncate(f: SpectralField, cutoff: int) -> SpectralField:
    return SpectralField.from_hat(f.grid, f.hat * f.grid.band_mask(cutoff), f.vector)


def dealias(f: SpectralField) -> SpectralField:
    return SpectralField.from_hat(f.grid, f.hat * f.grid.dealias_mask, f.vector)


def dealias_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product of the 2/3-truncated inputs, truncated back to the 2/3 band.

    A scalar times a vector multiplies every component; two fields with the
    same number of components multiply componentwise.
    """
    _same_grid(f, g)
    grid = f.grid
    mask = grid.dealias_mask
    fv = ifft(f.hat * mask, grid)
    gv = ifft(g.hat * mask, grid)
    if f.ncomp != g.ncomp and 1 not in (f.ncomp, g.ncomp):
        raise InvalidFieldError("incompatible component counts")
    prod = fv * gv
    vector = f.vector or g.vector
    return SpectralField.from_hat(grid, fft(prod, grid) * mask, vector=vector)


def resolution_fraction(f: SpectralField) -> float:
    """Fraction of L2 energy carried by modes outside the 2/3 band."""
    e = np.abs(f.hat) ** 2
    total = float(np.sum(e))
    if total == 0.0:
        return 0.0
    return float(np.sum(e[..., ~f.grid.dealias_mask])) / total


def wkinf_norm(f: SpectralField, k: int) -> float:
    """``max_{|alpha| <= k} max_nodes |d^alpha f|`` (max-of-derivatives convention)."""
    _check_hermitian(f)
    if k not in (0, 1, 2):
        raise ValueError("only k in {0, 1, 2} is supported")
    return _wkinf_values(f.hat, f.grid, k)


def _wkinf_values(hat, grid, k, batch_axes=0) -> np.ndarray | float:
    """Max-of-derivatives sup norm for raw ``hat`` arrays.

    The leading ``batch_axes + 1`` axes (batch dims then components) are
    reduced per batch entry.
    """
    best = None
    for alpha in multi_indices_upto(grid.dim, k):
        if sum(alpha) == 0:
            vals = ifft(hat, grid)
        else:
            vals = ifft(hat * derivative_multiplier(grid, alpha), grid)
        m = np.max(np.abs(vals).reshape(vals.shape[:batch_axes] + (-1,)), axis=-1)
        best = m if best is None else np.maximum(best, m)
    return float(best) if batch_axes == 0 else best


# ---------------------------------------------------------------------------
# continuous extrema of the trigonometric interpolant


def _local_extrema_candidates(fine, sign, count):
    a = sign * fine
    mask = np.ones(a.shape, dtype=bool)
    for ax in range(a.ndim):
        mask &= a <= np.roll(a, 1, axis=ax)
        mask &= a <= np.roll(a, -1, axis=ax)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        idx = np.array([np.argmin(a)])
    order = np.argsort(a.ravel()[idx])[:count]
    return [np.unravel_index(i, a.shape) for i in idx[order]]


def _newton_polish(hat, grid, Y, signs, h, iterations=4):
    """Batched Newton iteration towards nearby extrema; returns best value seen per point."""
    kv = grid.kvec.reshape(grid.dim, -1)
    hflat = hat.ravel()
    if grid.dim == 1:
        return _newton_polish_1d(hflat, kv[0], Y[:, 0], signs, h, iterations)
    best = None
    for it in range(iterations + 1):
        E = hflat * np.exp(1j * ((Y + np.pi) @ kv))
        val = E.sum(axis=1).real
        best = val if best is None else np.where(signs * val < signs * best, val, best)
        if it == iterations:
            break
        grad = -(E @ kv.T).imag
        hess = -np.einsum("pm,am,bm->pab", E.real, kv, kv)
        H = signs[:, None, None] * hess
        g = signs[:, None] * grad
        ok = np.all(np.linalg.eigvalsh(H) > 0, axis=1)
        H[~ok] = np.eye(grid.dim)
        g[~ok] = 0.0
        step = -np.linalg.solve(H, g[..., None])[..., 0]
        norm = np.linalg.norm(step, axis=1)
        scale = np.where(norm > h, h / np.maximum(norm, 1e-300), 1.0)
        Y = Y + step * scale[:, None]
        if np.all(norm < 1e-15):
            break
    return best


def _newton_polish_1d(hflat, k, y, signs, h, iterations):
    best = None
    for it in range(iterations + 1):
        E = hflat * np.exp(1j * np.multiply.outer(y + np.pi, k))
        val = E.sum(axis=1).real
        best = val if best is None else np.where(signs * val < signs * best, val, best)
        if it == iterations:
            break
        grad = -(E @ k).imag
        hess = -(E.real @ (k * k))
        ok = signs * hess > 0
        step = np.where(ok, -grad / np.where(ok, hess, 1.0), 0.0)
        step = np.clip(step, -h, h)
        y = y + step
        if np.all(np.abs(step) < 1e-9):
            break
    return best


def continuous_extrema(f: SpectralField, oversample: int = 4, candidates: int = 2) -> tuple:
    """(min, max) of the trigonometric interpolant of a scalar field.

    Samples on an oversampled grid, then Newton-polishes the best local
    candidates.  The result never lies inside the node range.
    """
    if f.ncomp != 1:
        raise InvalidFieldError("continuous_extrema expects a scalar field")
    vals = f.values[0]
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        return lo, hi
    grid = f.grid
    hat = f.hat[0]
    L = oversample * grid.M
    padded = np.zeros((L,) * grid.dim, dtype=complex)
    idx = np.ix_(*([grid.k1d.astype(int) % L] * grid.dim))
    padded[idx] = hat
    fine = np.fft.ifftn(padded).real * L**grid.dim
    lo = min(lo, float(fine.min()))
    hi = max(hi, float(fine.max()))
    step = 2 * np.pi / L
    cands, signs = [], []
    for sign in (1.0, -1.0):
        for c in _local_extrema_candidates(fine, sign, candidates):
            cands.append(-np.pi + step * np.array(c, dtype=float))
            signs.append(sign)
    signs = np.array(signs)
    best = _newton_polish(hat, grid, np.array(cands), signs, step, iterations=3)
    lo = min(lo, float(np.min(best[signs > 0])))
    hi = max(hi, float(np.max(best[signs < 0])))
    return lo, hi


def continuous_sup_abs(f: SpectralField) -> float:
    out = 0.0
    for c in range(f.ncomp):
        lo, hi = continuous_extrema(f.component(c))
        out = max(out, abs(lo), abs(hi))
    return out


# ---------------------------------------------------------------------------
# random test fields and fitted constants


def random_hat(grid: TorusGrid, rng: np.random.Generator, s: float, *, ncomp: int = 1,
               batch: int | None = None, cutoff: int | None = None) -> np.ndarray:
    """Raw coefficients of random real band-limited fields.

    Complex Gaussian coefficients with decay ``(1 + |k|)^-(s+1)``, restricted to
    ``|k|_inf <= cutoff`` (default: the 2/3 band) and symmetrised.
    """
    cutoff = grid.dealias_cutoff if cutoff is None else cutoff
    lead = (ncomp,) if batch is None else (batch, ncomp)
    shape = lead + grid.shape
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    z *= (1.0 + np.sqrt(grid.ksq)) ** (-(s + 1.0)) * grid.band_mask(cutoff)
    # real part of the synthesised field enforces c_{-k} = conj(c_k)
    return fft(ifft(z, grid), grid)


def random_field(grid: TorusGrid, rng: np.random.Generator, s: float = 3, *,
                 vector: bool = False, cutoff: int | None = None) -> SpectralField:
    ncomp = grid.dim if vector else 1
    return SpectralField.from_hat(grid, random_hat(grid, rng, s, ncomp=ncomp, cutoff=cutoff),
                                  vector=vector)


@lru_cache(maxsize=64)
def embedding_constant(s: int, k: int, grid: TorusGrid, trials: int, seed: int = 0) -> float:
    """Empirical ``max ||f||_{k,inf} / ||f||_{s,2}`` over random band-limited fields.

    The constant field (ratio exactly 1) is always among the candidates.
    """
    if not s > grid.dim / 2 + k:
        raise ValueError(f"embedding W^(s,2) -> W^(k,inf) needs s > N/2 + k (s={s}, k={k})")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(s, k, grid.dim, grid.M)))
    w = sobolev_weights(grid, float(s))
    best = 1.0
    done = 0
    while done < trials:
        b = min(1000, trials - done)
        hat = random_hat(grid, rng, s, batch=b)
        num = _wkinf_values(hat, grid, k, batch_axes=1)
        den = np.sqrt(np.sum(w * np.abs(hat) ** 2, axis=tuple(range(1, hat.ndim))))
        best = max(best, float(np.max(num / den)))
        done += b
    return best


# ---------------------------------------------------------------------------
# Moser-type calculus checks


@dataclass(frozen=True)
class SmoothMap:
    """A scalar map ``F`` with its first derivatives ``F', F'', ...``."""

    func: Callable
    derivatives: tuple

    @classmethod
    def exp(cls, order: int = 6):
        return cls(np.exp, tuple([np.exp] * order))

    @classmethod
    def sin(cls, order: int = 6):
        cycle = (np.cos, lambda y: -np.sin(y), lambda y: -np.cos(y), np.sin)
        return cls(np.sin, tuple(cycle[i % 4] for i in range(order)))


@dataclass(frozen=True)
class MoserReport:
    kind: str
    lhs: float
    rhs_factors: tuple
    ratio: float
    under_resolved: bool = False


def _ratio(lhs, rhs):
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else float("inf")


def moser_check(kind: str, u: SpectralField, v, s: int, alpha) -> MoserReport:
    """Evaluate one Moser-calculus inequality spectrally.

    ``kind`` is ``"product"`` (``||d^a(uv)||``), ``"commutator"``
    (``||d^a(uv) - u d^a v||``) or ``"composition"`` (``||d^a F(u)||`` with
    ``v`` a :class:`SmoothMap`).  ``rhs_factors`` omit the constant ``c_s``.
    """
    alpha = _as_alpha(alpha, u.grid.dim)
    order = sum(alpha)
    if order > s:
        raise ValueError("|alpha| must not exceed s")
    flag = resolution_fraction(u) > 0.01
    if kind in ("product", "commutator"):
        _same_grid(u, v)
        flag = flag or resolution_fraction(v) > 0.01
        uv = dealias_product(u, v)
        d_uv = derivative(uv, alpha)
        if kind == "product":
            lhs = l2_norm(d_uv)
            rhs = (sup_norm(u) * homogeneous_norm(v, s), sup_norm(v) * homogeneous_norm(u, s))
        else:
            lhs = l2_norm(d_uv - dealias_product(u, derivative(v, alpha)))
            grad_u = max(sup_norm(derivative(u, a)) for a in multi_indices(u.grid.dim, 1))
            rhs = (grad_u * homogeneous_norm(v, s - 1), sup_norm(v) * homogeneous_norm(u, s))
    elif kind == "composition":
        if not isinstance(v, SmoothMap) or len(v.derivatives) < s:
            raise ValueError("composition needs a SmoothMap with at least s derivatives")
        if u.ncomp != 1:
            raise InvalidFieldError("composition expects a scalar field")
        Fu = SpectralField(u.grid, v.func(u.values))
        flag = flag or resolution_fraction(Fu) > 0.01
        lhs = l2_norm(derivative(Fu, alpha))
        lo, hi = continuous_extrema(u)
        ys = np.linspace(lo, hi, 257)
        cnorm = max(float(np.max(np.abs(d(ys)))) for d in v.derivatives[:s])
        usup = max(abs(lo), abs(hi))
        power = usup ** (order - 1) if usup > 0 else 0.0
        rhs = (cnorm * power * l2_norm(derivative(u, alpha)), 0.0)
    else:
        raise ValueError(f"unknown Moser check kind {kind!r}")
    rhs = tuple(float(x) for x in rhs)
    return MoserReport(kind, float(lhs), rhs, float(_ratio(lhs, sum(rhs))), bool(flag))


def moser_ensemble(kind: str, grid: TorusGrid, s: int, samples: int, seed: int,
                   alpha=None) -> np.ndarray:
    """Ratios of :func:`moser_check` over random band-limited inputs.

    Inputs live in half the 2/3 band so products are represented exactly.
    Composition inputs are scaled to unit sup norm and use ``F = exp``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(17, s)))
    if alpha is None:
        alpha = (s,) + (0,) * (grid.dim - 1)
    cutoff = grid.dealias_cutoff // 2
    F = SmoothMap.exp(max(s, 1))
    out = np.empty(samples)
    for i in range(samples):
        u = random_field(grid, rng, s, cutoff=cutoff)
        if kind == "composition":
            u = u * (1.0 / sup_norm(u))
            out[i] = moser_check(kind, u, F, s, alpha).ratio
        else:
            v = random_field(grid, rng, s, cutoff=cutoff)
            out[i] = moser_check(kind, u, v, s, alpha).ratio
    return out


def stack_vector(components: Sequence[SpectralField]) -> SpectralField:
    grid = components[0].grid
    return SpectralField(grid, np.concatenate([c.values for c in components]), vector=True)
