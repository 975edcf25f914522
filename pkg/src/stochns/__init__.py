"""Spectral discretization and numerical experiments for the stochastic
compressible Navier-Stokes system in symmetrized variables on the torus."""

from .errors import *  # noqa: F401,F403
from .fluid import FluidParams, coeff_D, r_to_rho, rho_to_r
from .integrator import CutoffSystem, State, Trajectory
from .io import RunConfig, parse_config, read_snapshot, render_config, write_snapshot
from .noise import NoiseModel, NoiseStream
from .spectral import SpectralField, TorusGrid

__version__ = "0.1.0"
