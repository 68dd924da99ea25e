"""
Physics-informed spatio-temporal modelling of advected fields from
multi-source gridded observations.

The field on a periodic grid is expanded in a real Fourier basis
(:mod:`adstm.grid`); an advection-diffusion operator is projected onto the
retained modes to give a transition matrix (:mod:`adstm.physics`); a
bias-augmented linear-Gaussian state-space model is fitted by a Gibbs
sampler with forward filtering and backward sampling
(:mod:`adstm.state_space`, :mod:`adstm.pipeline`).  Observations from
several sources with gaps are read and stacked by :mod:`adstm.fusion`, and
:mod:`adstm.simulator` generates synthetic benchmarks.
"""

__version__ = "0.1.0"

from .expm import matrix_exponential
from .fusion import (EmptyDataError, FGRIDError, FusedObservation, ObservationFrame, SourceStream,
                     build_downsample_mask, fuse, load_streams, parse_frame)
from .grid import GridSpec, SpectralCoeffs, analyze, build_wavenumber_sets, synthesize, truncate
from .optical_flow import estimate_optical_flow, horn_schunck
from .physics import FlowFields, derive_diffusivity, galerkin_generator, galerkin_transition, uniform_flow
from .pipeline import FitResult, fit_data_driven, fit_physics, horizon_mse
from .simulator import SimConfig, SourceSpec, generate_streams, table1_config
from .state_space import (DivergenceError, GibbsConfig, Priors, compute_mse, ffbs, fit_data_driven_G,
                          kalman_step, predict, run_gibbs)

__all__ = [
    "matrix_exponential", "EmptyDataError", "FGRIDError", "FusedObservation", "ObservationFrame", "SourceStream",
    "build_downsample_mask", "fuse", "load_streams", "parse_frame", "GridSpec", "SpectralCoeffs", "analyze",
    "build_wavenumber_sets", "synthesize", "truncate", "estimate_optical_flow", "horn_schunck", "FlowFields",
    "derive_diffusivity", "galerkin_generator", "galerkin_transition", "uniform_flow", "FitResult",
    "fit_data_driven", "fit_physics", "horizon_mse", "SimConfig", "SourceSpec", "generate_streams",
    "table1_config", "DivergenceError", "GibbsConfig", "Priors", "compute_mse", "ffbs", "fit_data_driven_G",
    "kalman_step", "predict", "run_gibbs",
]
