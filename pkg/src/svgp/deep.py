"""Deep GP stacks, latent-variable inputs and their ELBOs.

Training-time tensors use the layout ``(B, R, S, dim)``: B datapoints of the
batch, R outer Monte Carlo repetitions, S importance replicates of the
latent input. Intermediate layers are sampled jointly across the S axis and
independently across everything else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import MissingLatentRow, ShapeError
from .gauss import DTYPE, as_tensor
from .likelihoods import DEFAULT_QUADRATURE, Likelihood
from .params import VARIATIONAL, Parameterized, inv_softplus, softplus
from .rng import CounterRNG, Stream
from .svgp import Layer, elbo as svgp_elbo


@dataclass(frozen=True)
class IWConfig:
    S: int = 5
    outer_mc: int = 1

    def __post_init__(self):
        if self.S < 1 or self.outer_mc < 1:
            raise ValueError("S and outer_mc must be at least 1")


class LatentPosteriorTable(Parameterized):
    """Independent q(h_n) = N(m_n, diag(s_n^2)) for each training point; prior N(0, I)."""

    def __init__(self, N: int, latent_dim: int, means=None, scales=None):
        super().__init__()
        means = torch.zeros(N, latent_dim, dtype=DTYPE) if means is None else as_tensor(means).reshape(N, latent_dim)
        scales = torch.ones(N, latent_dim, dtype=DTYPE) if scales is None else as_tensor(scales)
        scales = scales.expand(N, latent_dim)
        self.register("means", means, VARIATIONAL)
        self.register("scales", inv_softplus(scales), VARIATIONAL, "softplus")

    @property
    def N(self) -> int:
        return self.means.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[1]

    def rows(self, idx):
        idx = torch.as_tensor(np.asarray(idx), dtype=torch.long).reshape(-1)
        if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= self.N):
            bad = idx[(idx < 0) | (idx >= self.N)][0]
            raise MissingLatentRow(f"no latent posterior row for datapoint {int(bad)} (table has {self.N})")
        return self.means[idx], softplus(self.scales[idx])

    def kl(self, idx) -> torch.Tensor:
        m, s = self.rows(idx)
        return 0.5 * (s.pow(2) + m.pow(2) - 1.0 - 2.0 * torch.log(s)).sum(-1)


class DeepGP(Parameterized):
    """A stack of layers feeding one likelihood, with optional latent inputs at layer 1.

    ``data_dim`` may be 0, in which case layer 1 sees the latent input only.
    """

    def __init__(
        self,
        layers,
        likelihood: Likelihood,
        latent_dim: int = 0,
        data_dim: int | None = None,
        latent_table: LatentPosteriorTable | None = None,
    ):
        super().__init__()
        layers = list(layers)
        if not layers:
            raise ShapeError("a model needs at least one layer")
        self.latent_dim = int(latent_dim)
        self.data_dim = layers[0].in_dim - self.latent_dim if data_dim is None else int(data_dim)
        if layers[0].in_dim != self.data_dim + self.latent_dim:
            raise ShapeError(
                f"layer 1 takes {layers[0].in_dim} inputs, expected data {self.data_dim} + latent {self.latent_dim}"
            )
        for l in range(1, len(layers)):
            if layers[l].in_dim != layers[l - 1].out_dim:
                raise ShapeError(f"layer {l + 1} input dim {layers[l].in_dim} != layer {l} output dim {layers[l - 1].out_dim}")
        if latent_table is not None and latent_table.latent_dim != self.latent_dim:
            raise ShapeError("latent table dimension does not match the model")
        self.layers = nn.ModuleList(layers)
        self.likelihood = likelihood
        self.latent = latent_table

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def kl_layers(self) -> torch.Tensor:
        return sum(layer.prior_kl() for layer in self.layers)

    def config(self) -> dict:
        return {
            "layers": [layer.config() for layer in self.layers],
            "likelihood": self.likelihood.config(),
            "latent_dim": self.latent_dim,
            "data_dim": self.data_dim,
            "num_data": None if self.latent is None else self.latent.N,
        }


def _labels(y) -> torch.Tensor:
    y = as_tensor(y)
    return y[:, None] if y.ndim == 1 else y


def _cascade(model: DeepGP, F: torch.Tensor, noise: Callable[[int, int], torch.Tensor], joint: bool):
    samples = []
    for l, layer in enumerate(model.layers[:-1]):
        F = layer.sample(F, noise(l, layer.noise_dim), full_cov=joint)
        samples.append(F)
    return samples, F


@dataclass
class Propagation:
    samples: list
    mean: torch.Tensor
    var: torch.Tensor
    h: torch.Tensor | None = None


def propagate(model: DeepGP, X, stream: Stream, idx=None, n_mc: int = 1, table: LatentPosteriorTable | None = None):
    """Sample through layers 1..L-1 for each datapoint; return the final layer's Gaussian.

    Tensors have shape (B, n_mc, 1, dim). Latent inputs come from ``table``
    when given, otherwise from the N(0, I) prior.
    """
    X = as_tensor(X)
    B = X.shape[0]
    idx = np.arange(B) if idx is None else np.asarray(idx)
    F = X[:, None, None, :].expand(B, n_mc, 1, X.shape[1])
    h = None
    if model.latent_dim:
        eps = stream.normal("latent", idx, (n_mc, 1, model.latent_dim))
        if table is None:
            h = eps
        else:
            m, s = table.rows(idx)
            h = m[:, None, None, :] + s[:, None, None, :] * eps
        F = torch.cat([F, h], -1)
    samples, F = _cascade(model, F, lambda l, D: stream.normal(f"layer{l}", idx, (n_mc, 1, D)), joint=False)
    mean, var = model.layers[-1].predict_f(F)
    return Propagation(samples, mean, var, h)


def _scale(total_N, B) -> float:
    if B == 0:
        raise ShapeError("objective needs a nonempty batch")
    total_N = B if total_N is None else int(total_N)
    if total_N < B:
        raise ShapeError(f"total_N={total_N} is smaller than the batch ({B})")
    return total_N / B


def deep_elbo(model: DeepGP, X, y, idx=None, total_N=None, stream: Stream | None = None, n_mc: int = 1,
              quad=DEFAULT_QUADRATURE) -> torch.Tensor:
    """Doubly stochastic ELBO. With one layer this is the closed-form shallow ELBO."""
    if model.latent_dim:
        raise ValueError("deep_elbo is for models without latent inputs; use lv_elbo")
    X, y = as_tensor(X), _labels(y)
    if model.L == 1:
        return svgp_elbo(model.layers[0], model.likelihood, X, y, total_N, quad)
    scale = _scale(total_N, X.shape[0])
    stream = stream or CounterRNG(0).stream(0)
    prop = propagate(model, X, stream, idx, n_mc)
    ve = model.likelihood.variational_expectation(y[:, None, None, :], prop.mean, prop.var, quad)
    return scale * ve.mean((1, 2)).sum() - model.kl_layers()


def _latent_weights(model, table, X, y, idx, stream, R, S, quad):
    """Expected log likelihood and log p(h)/q(h) for every (datapoint, repetition, replicate)."""
    if not model.latent_dim:
        raise ValueError("model has no latent inputs")
    if table is None:
        raise ValueError("latent objectives need a LatentPosteriorTable")
    X, y = as_tensor(X), _labels(y)
    B = X.shape[0]
    idx = np.arange(B) if idx is None else np.asarray(idx)
    m, s = table.rows(idx)
    eps = stream.normal("latent", idx, (R, S, model.latent_dim))
    h = m[:, None, None, :] + s[:, None, None, :] * eps
    F = torch.cat([X[:, None, None, :].expand(B, R, S, X.shape[1]), h], -1)
    _, F = _cascade(model, F, lambda l, D: stream.normal(f"layer{l}", idx, (R, S, D)), joint=S > 1)
    mean, var = model.layers[-1].predict_f(F)
    ve = model.likelihood.variational_expectation(y[:, None, None, :], mean, var, quad)
    # log N(h; 0, I) - log N(h; m, s^2); the 2 pi terms cancel
    log_ratio = (-0.5 * h.pow(2) + 0.5 * eps.pow(2) + torch.log(s)[:, None, None, :]).sum(-1)
    return ve, log_ratio


def lv_elbo(model: DeepGP, X, y, idx=None, total_N=None, stream: Stream | None = None, n_mc: int = 1,
            table: LatentPosteriorTable | None = None, kl_estimator: str = "analytic",
            quad=DEFAULT_QUADRATURE) -> torch.Tensor:
    """Latent-variable ELBO with per-datapoint KL(q(h_n) || N(0, I)).

    ``kl_estimator="sample"`` replaces the closed-form latent KL with the
    single-sample estimate log q(h) - log p(h) at the drawn h.
    """
    table = model.latent if table is None else table
    X = as_tensor(X)
    scale = _scale(total_N, X.shape[0])
    stream = stream or CounterRNG(0).stream(0)
    ve, log_ratio = _latent_weights(model, table, X, y, idx, stream, n_mc, 1, quad)
    if kl_estimator == "analytic":
        idx = np.arange(X.shape[0]) if idx is None else idx
        data = ve[..., 0].mean(1) - table.kl(idx)
    elif kl_estimator == "sample":
        data = (ve + log_ratio)[..., 0].mean(1)
    else:
        raise ValueError(f"unknown kl_estimator {kl_estimator!r}")
    return scale * data.sum() - model.kl_layers()


def iw_lv_terms(model: DeepGP, X, y, idx=None, stream: Stream | None = None, iw: IWConfig = IWConfig(),
                table: LatentPosteriorTable | None = None, quad=DEFAULT_QUADRATURE) -> torch.Tensor:
    """Per-datapoint, per-outer-draw values of log (1/S) sum_s explik_s p(h_s)/q(h_s); shape (B, outer_mc)."""
    table = model.latent if table is None else table
    stream = stream or CounterRNG(0).stream(0)
    ve, log_ratio = _latent_weights(model, table, X, y, idx, stream, iw.outer_mc, iw.S, quad)
    return torch.logsumexp(ve + log_ratio, -1) - math.log(iw.S)


def iw_lv_elbo(model: DeepGP, X, y, idx=None, total_N=None, stream: Stream | None = None,
               iw: IWConfig = IWConfig(), table: LatentPosteriorTable | None = None,
               quad=DEFAULT_QUADRATURE) -> torch.Tensor:
    """Importance-weighted latent-variable ELBO (shallow or deep)."""
    X = as_tensor(X)
    scale = _scale(total_N, X.shape[0])
    terms = iw_lv_terms(model, X, y, idx, stream, iw, table, quad)
    return scale * terms.mean(1).sum() - model.kl_layers()


def iw_lv_estimates(model: DeepGP, X, y, idx=None, total_N=None, stream: Stream | None = None,
                    iw: IWConfig = IWConfig(), table=None, quad=DEFAULT_QUADRATURE) -> torch.Tensor:
    """One ELBO_S estimate per outer draw, shape (outer_mc,)."""
    X = as_tensor(X)
    scale = _scale(total_N, X.shape[0])
    terms = iw_lv_terms(model, X, y, idx, stream, iw, table, quad)
    return scale * terms.sum(0) - model.kl_layers()


@dataclass
class DeepPrediction:
    path_mean: torch.Tensor  # (P, N, D) latent
    path_var: torch.Tensor
    mean: torch.Tensor  # (N, k) pooled over paths, label space
    var: torch.Tensor
    likelihood: Likelihood
    quad: object

    def log_density(self, y) -> torch.Tensor:
        """log of the path-mixture predictive density at labels y, shape (N,)."""
        y = _labels(y)
        with torch.no_grad():
            lp = self.likelihood.predict_log_density(y[None], self.path_mean, self.path_var, self.quad)
            return torch.logsumexp(lp, 0) - math.log(lp.shape[0])


def predict_deep(model: DeepGP, Xnew, n_paths: int = 1, rng: CounterRNG | None = None, step: int = 0,
                 joint: bool = False, quad=DEFAULT_QUADRATURE) -> DeepPrediction:
    """Propagate ``n_paths`` sample paths through the stack.

    Latent inputs are drawn from the prior. With ``joint`` every path is a
    joint draw over all rows of Xnew; otherwise rows are drawn from their
    marginals (the per-row summaries are the same in distribution).
    """
    Xnew = as_tensor(Xnew)
    if not bool(torch.isfinite(Xnew).all()):
        raise ShapeError("prediction inputs must be finite")
    rng = rng or CounterRNG(0)
    stream = rng.stream(step)
    N = Xnew.shape[0]
    rows = np.arange(N)
    P = int(n_paths)

    def noise(purpose, D):
        return stream.normal(purpose, rows, (P, D)).permute(1, 0, 2)

    with torch.no_grad():
        F = Xnew[None].expand(P, N, Xnew.shape[1])
        if model.latent_dim:
            F = torch.cat([F, noise("predict-latent", model.latent_dim)], -1)
        _, F = _cascade(model, F, lambda l, D: noise(f"predict-layer{l}", D), joint=joint)
        mean, var = model.layers[-1].predict_f(F)
        ym, yv = model.likelihood.predict_mean_and_var(mean, var, quad)
        pooled = ym.mean(0)
        pooled_var = yv.mean(0) + (ym - pooled).pow(2).mean(0)
    return DeepPrediction(mean, var, pooled, pooled_var, model.likelihood, quad)
