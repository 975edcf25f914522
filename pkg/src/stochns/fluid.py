"""Constitutive pieces of the symmetrised barotropic system.

Pressure law ``p = a rho^gamma``; the symmetrising variable is
``r = sqrt(2 a gamma / (gamma - 1)) rho^((gamma - 1) / 2)`` and ``D(r) = 1 / rho(r)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidFieldError, SingularCoefficientError, VacuumError
from .spectral import (
    SpectralField,
    dealias_product,
    derivative_multiplier,
    gradient,
    ifft,
)


@dataclass(frozen=True)
class FluidParams:
    gamma: float = 2.0
    a: float = 1.0
    mu: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")

    @property
    def r_scale(self) -> float:
        return np.sqrt(2.0 * self.a * self.gamma / (self.gamma - 1.0))

    @property
    def rho_scale(self) -> float:
        """``((gamma - 1) / (2 a gamma))^(1 / (gamma - 1))`` so that ``rho = rho_scale * r^(2/(gamma-1))``."""
        return ((self.gamma - 1.0) / (2.0 * self.a * self.gamma)) ** (1.0 / (self.gamma - 1.0))

    @property
    def viscous_sum(self) -> float:
        """``mu + lambda + mu/3``, the largest symbol of ``div S``."""
        return self.mu + self.lam + self.mu / 3.0


def _positive_values(x, name):
    vals = x.values if isinstance(x, SpectralField) else np.asarray(x, dtype=float)
    bad = np.argwhere(~(vals > 0))
    if bad.size:
        node = tuple(int(i) for i in bad[0])
        raise VacuumError(f"{name} is nonpositive at node {node}", node=node)
    return vals


def _wrap(x, vals):
    if isinstance(x, SpectralField):
        return SpectralField(x.grid, vals, x.vector)
    return vals if np.ndim(vals) else float(vals)


def rho_to_r(rho, params: FluidParams):
    """Pointwise ``rho -> r`` at collocation nodes (or on plain arrays/scalars)."""
    vals = _positive_values(rho, "density")
    return _wrap(rho, params.r_scale * vals ** ((params.gamma - 1.0) / 2.0))


def r_to_rho(r, params: FluidParams):
    vals = _positive_values(r, "r")
    return _wrap(r, params.rho_scale * vals ** (2.0 / (params.gamma - 1.0)))


def coeff_D(r, params: FluidParams, r_floor: float = 0.0):
    """``D(r) = 1 / rho(r)``; raises when ``r`` falls below ``r_floor``."""
    vals = _positive_values(r, "r")
    if r_floor > 0:
        low = np.argwhere(vals < r_floor)
        if low.size:
            node = tuple(int(i) for i in low[0])
            raise SingularCoefficientError(
                f"r = {vals[tuple(low[0])]:.3e} below floor {r_floor:.3e} at node {node}", node=node
            )
    return _wrap(r, vals ** (-2.0 / (params.gamma - 1.0)) / params.rho_scale)


def stress_divergence(u: SpectralField, params: FluidParams) -> SpectralField:
    """``div S(grad u) = mu Lap u + (lambda + mu/3) grad div u``, spectrally."""
    if not u.vector:
        raise InvalidFieldError("stress_divergence expects a vector field")
    return SpectralField.from_hat(u.grid, stress_divergence_hat(u.hat, u.grid, params), vector=True)


def stress_divergence_hat(uhat, grid, params: FluidParams):
    k = grid.kvec
    nyq = grid.M // 2
    # first-derivative symbols drop Nyquist; pairs of them are applied for grad div
    ik = np.where(np.abs(k) == nyq, 0.0, 1j * k)
    div = np.sum(ik * uhat, axis=0)
    return -params.mu * grid.ksq * uhat + (params.lam + params.mu / 3.0) * ik * div


def stress_tensor(u: SpectralField, params: FluidParams) -> np.ndarray:
    """Collocation values of ``S(grad u)``, shape ``(N, N, *grid.shape)``; ``S[i, j]``."""
    grid = u.grid
    N = grid.dim
    unit = [tuple(int(i == d) for i in range(N)) for d in range(N)]
    # J[i, j] = d_j u_i
    J = np.array([[ifft(u.hat[i] * derivative_multiplier(grid, unit[j]), grid) for j in range(N)]
                  for i in range(N)])
    div = np.trace(J)
    S = params.mu * (J + np.swapaxes(J, 0, 1))
    eye = np.eye(N).reshape((N, N) + (1,) * N)
    S += (params.lam - 2.0 * params.mu / 3.0) * div * eye
    return S


def stress_divergence_tensor(u: SpectralField, params: FluidParams) -> SpectralField:
    """Componentwise spectral divergence of the assembled stress tensor (reference path)."""
    grid = u.grid
    N = grid.dim
    S = stress_tensor(u, params)
    unit = [tuple(int(i == d) for i in range(N)) for d in range(N)]
    hat = np.fft.fftn(S, axes=grid.axes) / grid.size
    out = np.array([sum(hat[i, j] * derivative_multiplier(grid, unit[j]) for j in range(N))
                    for i in range(N)])
    return SpectralField.from_hat(grid, out, vector=True)


def pressure_gradient_term(r: SpectralField) -> SpectralField:
    """Dealiased ``r grad r``."""
    return dealias_product(r, gradient(r))


@dataclass(frozen=True)
class CutoffSpec:
    """Quintic smoothstep cut-off: 1 on ``[0, R]``, 0 on ``[R + 1, inf)``."""

    R: float

    LIPSCHITZ = 15.0 / 8.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"cut-off radius must be positive, got {self.R}")

    def __call__(self, y):
        return cutoff_phi(self, y)


def cutoff_phi(spec: CutoffSpec, y):
    t = np.clip(np.asarray(y, dtype=float) - spec.R, 0.0, 1.0)
    out = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    return float(out) if np.ndim(out) == 0 else out
