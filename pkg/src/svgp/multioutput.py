"""Multioutput constructions built from SVGP layers.

Flattened output vectors use output-major ordering: entry ``d * N + n`` is
output ``d`` at point ``n``.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ShapeError
from .gauss import DTYPE, Gaussian, as_tensor
from .kernels import MeanFunction, RBF
from .params import GENERATIVE
from .svgp import Layer


class SeparateIndependent(Layer):
    """Concatenation of independent layers, each with its own kernel and inducing set."""

    def __init__(self, layers):
        super().__init__()
        layers = list(layers)
        if not layers:
            raise ShapeError("need at least one sub-layer")
        if len({l.in_dim for l in layers}) != 1:
            raise ShapeError("sub-layers must share the input dimension")
        self.sublayers = nn.ModuleList(layers)

    @property
    def in_dim(self) -> int:
        return self.sublayers[0].in_dim

    @property
    def out_dim(self) -> int:
        return sum(l.out_dim for l in self.sublayers)

    @property
    def noise_dim(self) -> int:
        return sum(l.noise_dim for l in self.sublayers)

    def predict_f(self, X, full_cov: bool = False):
        parts = [l.predict_f(X, full_cov) for l in self.sublayers]
        mean = torch.cat([p[0] for p in parts], -1)
        second = torch.cat([p[1] for p in parts], -3 if full_cov else -1)
        return mean, second

    def sample(self, X, eps, full_cov: bool = False):
        eps = as_tensor(eps)
        out, start = [], 0
        for l in self.sublayers:
            out.append(l.sample(X, eps[..., start : start + l.noise_dim], full_cov))
            start += l.noise_dim
        return torch.cat(out, -1)

    def prior_kl(self):
        return sum(l.prior_kl() for l in self.sublayers)

    def config(self) -> dict:
        return {"type": "separate", "layers": [l.config() for l in self.sublayers]}


class LMC(Layer):
    """Outputs W g(x) for a latent multioutput layer g with D_g outputs."""

    def __init__(self, latent: Layer, W):
        super().__init__()
        W = as_tensor(W)
        if W.ndim != 2 or W.shape[1] != latent.out_dim:
            raise ShapeError(f"W must be (D, {latent.out_dim}), got {tuple(W.shape)}")
        if not bool(torch.isfinite(W).all()):
            raise ShapeError("W must be finite")
        self.latent = latent
        self.register("W", W, GENERATIVE)

    @property
    def in_dim(self) -> int:
        return self.latent.in_dim

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.latent.noise_dim

    def predict_f(self, X, full_cov: bool = False):
        """Marginal mean and variance per output (``full_cov`` is over points, output-major)."""
        gm, g2 = self.latent.predict_f(X, full_cov)
        mean = gm @ self.W.T
        if full_cov:
            # cov[d, n, n'] restricted to the diagonal output blocks
            return mean, torch.einsum("dg,...gnm->...dnm", self.W.pow(2), g2)
        return mean, g2 @ self.W.pow(2).T

    def predict_output_cov(self, X):
        """Mean (N, D) and per-point output covariance (N, D, D)."""
        gm, gv = self.latent.predict_f(X)
        cov = torch.einsum("dg,...ng,eg->...nde", self.W, gv, self.W)
        return gm @ self.W.T, cov

    def sample(self, X, eps, full_cov: bool = False):
        return self.latent.sample(X, eps, full_cov) @ self.W.T

    def prior_kl(self):
        return self.latent.prior_kl()

    def config(self) -> dict:
        return {"type": "lmc", "latent": self.latent.config(), "output_dim": self.out_dim}


def init_lmc_weights(D: int, D_g: int, rng: np.random.Generator, scale: float = 0.01) -> torch.Tensor:
    W = np.eye(D, D_g) + scale * rng.standard_normal((D, D_g))
    return torch.as_tensor(W, dtype=DTYPE)


def mo_predict(bundle: Layer, Xnew, full_output_cov: bool = False):
    """Per-point mean (N, D) and either marginal variances (N, D) or output covariances (N, D, D)."""
    if not full_output_cov:
        return bundle.predict_f(Xnew)
    if isinstance(bundle, LMC):
        return bundle.predict_output_cov(Xnew)
    mean, var = bundle.predict_f(Xnew)
    return mean, torch.diag_embed(var)


def mo_prior_kl(bundle: Layer) -> torch.Tensor:
    return bundle.prior_kl()


def derivative_gp_predict(kernel: RBF, mean: MeanFunction, Xnew) -> Gaussian:
    """Prior Gaussian over the gradient field at Xnew, flattened output-major.

    Entry ``i * N + n`` is d f / d x_i at Xnew[n].
    """
    Xnew = as_tensor(Xnew)
    if Xnew.ndim != 2 or Xnew.shape[1] != kernel.input_dim:
        raise ShapeError(f"Xnew must be (N, {kernel.input_dim})")
    if mean.output_dim != 1:
        raise ShapeError("derivative GP needs a single-output mean")
    N, d = Xnew.shape
    J = mean.jacobian()[0]  # (d,)
    mu = J.repeat_interleave(N)
    A = Xnew.repeat(d, 1)
    dims = torch.arange(d).repeat_interleave(N)
    cov = kernel.cross_hess(A, A, dims, dims)
    return Gaussian(mu, 0.5 * (cov + cov.T))
