"""
Advection-diffusion operator and its Galerkin projection onto the Fourier basis.

Units: coordinates are fractions of the unit square, velocities are grid
fractions per time step and diffusivity is grid-fraction squared per step.
``vx`` is the velocity along axis 0 (``s1``) and ``vy`` along axis 1 (``s2``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .expm import matrix_exponential
from .grid import GridSpec, spectral_basis

log = logging.getLogger(__name__)

KM_PER_DEGREE = 111.32


@dataclass(frozen=True)
class FlowFields:
    vx: np.ndarray
    vy: np.ndarray
    diffusivity: np.ndarray
    time_tag: object = None

    def __post_init__(self):
        vx, vy, d = (np.asarray(a, dtype=float) for a in (self.vx, self.vy, self.diffusivity))
        if not (vx.shape == vy.shape == d.shape) or vx.ndim != 2:
            raise ValueError("vx, vy and diffusivity must be 2-D arrays of one shape")
        if not all(np.all(np.isfinite(a)) for a in (vx, vy, d)):
            raise ValueError("flow fields must be finite")
        if np.any(d < 0):
            raise ValueError("diffusivity must be non-negative")
        for name, a in (("vx", vx), ("vy", vy), ("diffusivity", d)):
            object.__setattr__(self, name, a)

    @property
    def shape(self):
        return self.vx.shape

    def is_uniform(self) -> bool:
        return all(np.ptp(a) == 0.0 for a in (self.vx, self.vy, self.diffusivity))


def uniform_flow(grid: GridSpec, speed: float, direction_deg: float, diffusivity: float = 0.0) -> FlowFields:
    """Spatially constant flow of the given magnitude; the angle is measured from the ``s1`` axis."""
    if speed < 0:
        raise ValueError("speed must be non-negative")
    th = np.deg2rad(direction_deg)
    ones = np.ones(grid.shape)
    return FlowFields(speed * np.cos(th) * ones, speed * np.sin(th) * ones, diffusivity * ones)


def zero_flow(grid: GridSpec) -> FlowFields:
    z = np.zeros(grid.shape)
    return FlowFields(z, z, z)


def kmh_per_unit(grid: GridSpec, cadence_minutes: float = 5.0) -> tuple[float, float]:
    """Factors converting grid-fraction/step to km/h along each axis."""
    per_hour = 60.0 / cadence_minutes
    k1 = grid.n1 * grid.step_lat * KM_PER_DEGREE * per_hour
    k2 = grid.n2 * grid.step_lon * KM_PER_DEGREE * np.cos(np.deg2rad(grid.origin_lat)) * per_hour
    return k1, k2


def periodic_gradient(f: np.ndarray):
    """Central differences on the torus, in unit-square coordinates."""
    n1, n2 = f.shape
    d1 = (np.roll(f, -1, 0) - np.roll(f, 1, 0)) * (n1 / 2.0)
    d2 = (np.roll(f, -1, 1) - np.roll(f, 1, 1)) * (n2 / 2.0)
    return d1, d2


def periodic_laplacian(f: np.ndarray) -> np.ndarray:
    n1, n2 = f.shape
    return ((np.roll(f, -1, 0) - 2 * f + np.roll(f, 1, 0)) * n1**2
            + (np.roll(f, -1, 1) - 2 * f + np.roll(f, 1, 1)) * n2**2)


def apply_operator(field: np.ndarray, flow: FlowFields, grad=None, lap=None) -> np.ndarray:
    """Evaluate ``-v.grad f + grad D . grad f + D lap f`` on the grid.

    ``grad`` and ``lap`` may be supplied (e.g. analytic derivatives of a
    basis function); otherwise periodic central differences are used.
    ``grad D`` is always a periodic central difference.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != flow.shape:
        raise ValueError(f"field shape {field.shape} != flow shape {flow.shape}")
    g1, g2 = periodic_gradient(field) if grad is None else grad
    lap = periodic_laplacian(field) if lap is None else lap
    dD1, dD2 = periodic_gradient(flow.diffusivity)
    return (dD1 - flow.vx) * g1 + (dD2 - flow.vy) * g2 + flow.diffusivity * lap


@dataclass(frozen=True)
class TransitionMatrix:
    p: np.ndarray
    exp_p: np.ndarray
    step: float = 1.0


def galerkin_generator(flow: FlowFields, truncation, grid: GridSpec) -> np.ndarray:
    """Galerkin matrix ``P = Gamma^-1 Psi`` by exact summation over the grid.

    ``Psi[i, j] = sum_s f_i(s) (A f_j)(s)`` with analytic derivatives of the
    basis columns, ``Gamma = diag(sum_s f_i(s)^2)``.
    """
    if flow.shape != grid.shape:
        raise ValueError("flow does not match grid")
    basis = spectral_basis(*truncation)
    F = basis.design_matrix(grid)
    d1, d2, lap = basis.gradients(grid)
    dD1, dD2 = (g.ravel()[:, None] for g in periodic_gradient(flow.diffusivity))
    vx, vy, D = (a.ravel()[:, None] for a in (flow.vx, flow.vy, flow.diffusivity))
    AF = (dD1 - vx) * d1 + (dD2 - vy) * d2 + D * lap
    gram = np.einsum("ij,ij->j", F, F)
    if np.any(gram <= 0):
        raise RuntimeError("singular basis Gram matrix")
    return (F.T @ AF) / gram[:, None]


def galerkin_transition(flow: FlowFields, truncation, grid: GridSpec, step: float = 1.0) -> TransitionMatrix:
    p = galerkin_generator(flow, truncation, grid)
    return TransitionMatrix(p, matrix_exponential(p * step), step)


def derive_diffusivity(flow: FlowFields, dx: float, dy: float) -> np.ndarray:
    """Smagorinsky-type diffusivity ``0.28 dx dy |S|`` from the velocity field.

    Partials use second-order differences in unit-square coordinates (central
    inside, one-sided on the edge rows/columns).
    """
    n1, n2 = flow.shape
    dvx1, dvx2 = np.gradient(flow.vx, 1.0 / n1, 1.0 / n2, edge_order=2)
    dvy1, dvy2 = np.gradient(flow.vy, 1.0 / n1, 1.0 / n2, edge_order=2)
    return 0.28 * dx * dy * np.hypot(dvx1 - dvy2, dvx2 + dvy1)
