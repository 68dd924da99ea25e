"""Model assembly, fitting and forecasting on top of the building blocks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fusion import EmptyDataError, FusedObservation, fill_first_frame, fuse
from .grid import GridSpec, analyze, spectral_basis
from .physics import FlowFields, galerkin_transition
from .state_space import (GibbsConfig, PosteriorDraws, Priors, StateSpaceModel, build_G, compute_mse, predict,
                          run_gibbs)

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    kind: str  # "physics" or "data-driven"
    grid: GridSpec
    truncation: tuple
    times: list
    source_ids: list
    draws: PosteriorDraws
    transition: object  # matrix, or list of per-step matrices
    forecast_G: np.ndarray

    @property
    def augmented(self) -> bool:
        return self.kind == "physics"

    @property
    def q(self) -> int:
        return self.truncation[0] * self.truncation[1]

    @property
    def state_dim(self) -> int:
        return self.draws.theta.shape[-1]

    def fields(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """``(F alpha, F gamma)`` for a state; the bias field is zero without augmentation."""
        F = spectral_basis(*self.truncation).design_matrix(self.grid)
        alpha = F @ theta[: self.q]
        bias = F @ theta[self.q:] if self.augmented else np.zeros_like(alpha)
        return alpha.reshape(self.grid.shape), bias.reshape(self.grid.shape)

    def estimate(self, theta) -> np.ndarray:
        a, b = self.fields(theta)
        return a + b

    def filtered_fields(self) -> list:
        """Posterior-mean field estimates at ``t = 1..T``."""
        tm = self.draws.theta_mean
        return [self.estimate(tm[t]) for t in range(1, len(tm))]

    def forecast(self, k: int, G=None) -> list:
        """Forecast ``(field, bias)`` pairs at horizons ``1..k`` from the posterior mean of ``theta_T``."""
        G = self.forecast_G if G is None else G
        states = predict(self.draws.theta_mean[-1], G, k)
        return [self.fields(s) for s in states[1:]]


def fuse_all(streams, grid: GridSpec, times, downsample=None) -> list:
    return [fuse(streams, t, grid, downsample) for t in times]


def build_model(obs: list, grid: GridSpec, truncation, augmented: bool = True, c0_scale: float = 10.0,
                source_ids=None) -> tuple[StateSpaceModel, list]:
    """Assemble the state-space model for fused observations at ``t = 1..T``.

    The prior mean of ``alpha_0`` is the spectral fit of the first fused
    frame (gaps filled with the frame mean); the bias half starts at zero.
    """
    basis = spectral_basis(*truncation)
    F = basis.design_matrix(grid)
    q = basis.dim
    if source_ids is None:
        source_ids = sorted({s for o in obs for s in o.source_ids})
    if not any(o.size for o in obs):
        raise EmptyDataError("no observations in the fitting window")
    first = next(o for o in obs if o.size)
    alpha0 = analyze(fill_first_frame(first), truncation).values
    d = 2 * q if augmented else q
    m0 = np.zeros(d)
    m0[:q] = alpha0

    def lazy_H(o: FusedObservation):
        return lambda: o.observation_matrix(F, augmented)

    ys = [o.y for o in obs]
    Hs = [lazy_H(o) for o in obs]
    rows = [o.source_of_row(source_ids) for o in obs]
    model = StateSpaceModel(ys, Hs, rows, m0, c0_scale * np.eye(d), len(source_ids))
    return model, source_ids


def physics_transitions(flows, truncation, grid: GridSpec, T: int) -> list:
    """Augmented transitions ``G_t``, one per step; a single flow is reused for every step."""
    if isinstance(flows, FlowFields):
        G = build_G(galerkin_transition(flows, truncation, grid).exp_p)
        return [G] * T
    flows = list(flows)
    if len(flows) != T:
        raise ValueError(f"need {T} flows, got {len(flows)}")
    cache = {}
    out = []
    for f in flows:
        key = id(f)
        if key not in cache:
            cache[key] = build_G(galerkin_transition(f, truncation, grid).exp_p)
        out.append(cache[key])
    return out


def fit_physics(streams, grid: GridSpec, times, flows, truncation, config: GibbsConfig, priors: Priors = None,
                downsample=None) -> FitResult:
    obs = fuse_all(streams, grid, times, downsample)
    model, sids = build_model(obs, grid, truncation, augmented=True)
    Gs = physics_transitions(flows, truncation, grid, len(times))
    priors = priors or Priors.default(model.dim, model.n_sources)
    draws = run_gibbs(model, config, priors, Gs=Gs)
    return FitResult("physics", grid, tuple(truncation), list(times), sids, draws, Gs, Gs[-1])


def fit_data_driven(streams, grid: GridSpec, times, truncation, config: GibbsConfig, priors: Priors = None,
                    downsample=None) -> FitResult:
    obs = fuse_all(streams, grid, times, downsample)
    model, sids = build_model(obs, grid, truncation, augmented=False)
    priors = priors or Priors.default(model.dim, model.n_sources)
    draws = run_gibbs(model, config, priors, learn_G=True)
    G = draws.G_mean
    return FitResult("data-driven", grid, tuple(truncation), list(times), sids, draws, G, G)


def horizon_mse(fit: FitResult, references: list, G=None) -> list:
    """MSE of the forecast at horizons ``1..len(references)``.

    ``references`` are grids (NaN for unobserved pixels), e.g. held-out
    frames of one source.
    """
    fc = fit.forecast(len(references), G)
    return [compute_mse(a + b, ref) for (a, b), ref in zip(fc, references)]
