"""Sparse variational Gaussian processes: shallow, multioutput, deep and latent-variable models."""

import logging

from .deep import DeepGP, IWConfig, LatentPosteriorTable, deep_elbo, iw_lv_elbo, lv_elbo, predict_deep
from .errors import (
    ArityError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    DivergenceError,
    FactorizationError,
    MissingLatentRow,
    NonFiniteError,
    ShapeError,
    SVGPError,
    UnsupportedMean,
)
from .gauss import Gaussian, JointGaussian, LinearMap, cholesky, condition, kl, linear_push, mix_marginal, sample
from .inducing import DerivativeFeatures, InducingPoints, kfu, kuu
from .kernels import RBF
from .likelihoods import Bernoulli, HeteroscedasticGaussian, QuadratureRule, predict_y, variational_expectation
from .models import LayerSpec, ModelSpec, build_model
from .multioutput import LMC, SeparateIndependent
from .rng import CounterRNG
from .svgp import SVGPLayer, elbo, exact_gp_oracle, predict_f, prior_kl
from .train import TrainConfig, fd_audit, fit

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "Bernoulli", "CheckpointVersionError", "ConfigError", "CounterRNG", "DataError", "DeepGP",
    "DerivativeFeatures", "DivergenceError", "FactorizationError", "Gaussian", "HeteroscedasticGaussian",
    "IWConfig", "InducingPoints", "JointGaussian", "LMC", "LatentPosteriorTable", "LayerSpec", "LinearMap",
    "MissingLatentRow", "ModelSpec", "NonFiniteError", "QuadratureRule", "RBF", "SVGPError", "SVGPLayer",
    "SeparateIndependent", "ShapeError", "TrainConfig", "UnsupportedMean", "ArityError", "build_model",
    "cholesky", "condition", "deep_elbo", "elbo", "exact_gp_oracle", "fd_audit", "fit", "iw_lv_elbo", "kfu",
    "kl", "kuu", "linear_push", "lv_elbo", "mix_marginal", "predict_deep", "predict_f", "predict_y",
    "prior_kl", "sample", "variational_expectation",
]
