"""Bayesian matrix-variate dynamic linear models with spatial deformation."""
from .data import CompletedData, MissingLayout, ObservedDataset, build_layout
from .model import HyperParams, ModelSpec, ParameterState, Variant
from .samplers import ChainConfig, PosteriorSample, Tunings, hybrid_step, run_chain
from .missing import da_step, impute_missing, run_da_chain
from .interpolation import PredictiveDraws, UngaugedSet, run_interpolation
from .spatial import SiteSet

__all__ = [
    "ChainConfig", "CompletedData", "HyperParams", "MissingLayout", "ModelSpec", "ObservedDataset",
    "ParameterState", "PosteriorSample", "PredictiveDraws", "SiteSet", "Tunings", "UngaugedSet", "Variant",
    "build_layout", "da_step", "hybrid_step", "impute_missing", "run_chain", "run_da_chain", "run_interpolation",
]
__version__ = "0.1.0"
