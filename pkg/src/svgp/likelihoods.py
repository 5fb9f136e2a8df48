"""Observation models.

Latent marginals are passed as ``(mean, var)`` tensors of shape
``(..., N, latent_dim)``; labels ``y`` are ``(N, k)``. Per-point results are
summed over label columns and come back as ``(..., N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ArityError, NonFiniteError
from .gauss import DTYPE, as_tensor
from .params import GENERATIVE, Parameterized, inv_positive, positive, softplus

LOG_2PI = math.log(2 * math.pi)
LOG_PROB_FLOOR = -1e12


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite orders for one and two latent dimensions.

    ``mc_samples`` is used only when ``order_1d == 0``, which switches the
    one-dimensional expectations to seeded Monte Carlo.
    """

    order_1d: int = 20
    order_2d: int = 10
    mc_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.order_1d < 0 or self.order_2d < 1 or self.mc_samples < 1:
            raise ValueError("quadrature orders and sample counts must be positive")


DEFAULT_QUADRATURE = QuadratureRule()

_GH_CACHE: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}


def hermite_rule(order: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Nodes and weights for E[g(z)], z ~ N(0, 1); weights sum to one."""
    if order not in _GH_CACHE:
        x, w = np.polynomial.hermite.hermgauss(order)
        _GH_CACHE[order] = (
            torch.as_tensor(x * math.sqrt(2.0), dtype=DTYPE),
            torch.as_tensor(w / math.sqrt(math.pi), dtype=DTYPE),
        )
    return _GH_CACHE[order]


def expect_1d(fn: Callable, mean, var, rule: QuadratureRule = DEFAULT_QUADRATURE) -> torch.Tensor:
    """E[fn(f)] for f ~ N(mean, var), elementwise."""
    if rule.order_1d == 0:
        gen = torch.Generator().manual_seed(rule.seed)
        z = torch.randn(rule.mc_samples, dtype=DTYPE, generator=gen)
        w = torch.full((rule.mc_samples,), 1.0 / rule.mc_samples, dtype=DTYPE)
    else:
        z, w = hermite_rule(rule.order_1d)
    f = mean[..., None] + torch.sqrt(var)[..., None] * z
    return (fn(f) * w).sum(-1)


def _check_finite(*tensors):
    for t in tensors:
        if not bool(torch.isfinite(t).all()):
            raise NonFiniteError("non-finite input to likelihood")


class Likelihood(Parameterized):
    kind = "base"
    latent_per_label = 1

    def latent_dim(self, label_dim: int) -> int:
        return label_dim * self.latent_per_label

    def _check(self, y, mean):
        if mean.shape[-1] != self.latent_dim(y.shape[-1]):
            raise ArityError(
                f"{self.kind} likelihood needs {self.latent_dim(y.shape[-1])} latent outputs "
                f"for {y.shape[-1]} label columns, got {mean.shape[-1]}"
            )

    def config(self) -> dict:
        return {"kind": self.kind}


class Gaussian(Likelihood):
    """Homoscedastic Gaussian noise with a learned variance."""

    kind = "gaussian"

    def __init__(self, variance=1.0):
        super().__init__()
        self.register("variance", inv_positive(variance), GENERATIVE, "softplus")

    @property
    def noise(self) -> torch.Tensor:
        return positive(self.variance)

    def log_prob(self, y, f):
        y, f = as_tensor(y), as_tensor(f)
        self._check(y, f)
        s2 = self.noise
        return (-0.5 * (LOG_2PI + torch.log(s2) + (y - f) ** 2 / s2)).sum(-1)

    def variational_expectation(self, y, mean, var, rule=DEFAULT_QUADRATURE):
        y = as_tensor(y)
        self._check(y, mean)
        _check_finite(y, mean, var)
        s2 = self.noise
        return (-0.5 * (LOG_2PI + torch.log(s2)) - ((y - mean) ** 2 + var) / (2 * s2)).sum(-1)

    def predict_mean_and_var(self, mean, var, rule=DEFAULT_QUADRATURE):
        return mean, var + self.noise

    def predict_log_density(self, y, mean, var, rule=DEFAULT_QUADRATURE):
        y = as_tensor(y)
        self._check(y, mean)
        v = var + self.noise
        return (-0.5 * (LOG_2PI + torch.log(v) + (y - mean) ** 2 / v)).sum(-1)


class Bernoulli(Likelihood):
    """Labels in {0, 1} through a logistic link."""

    kind = "bernoulli"

    @staticmethod
    def _signed(y, f):
        return (2.0 * y - 1.0) * f

    def log_prob(self, y, f):
        y, f = as_tensor(y), as_tensor(f)
        self._check(y, f)
        return torch.clamp(F.logsigmoid(self._signed(y, f)), min=LOG_PROB_FLOOR).sum(-1)

    def variational_expectation(self, y, mean, var, rule=DEFAULT_QUADRATURE):
        y = as_tensor(y)
        self._check(y, mean)
        _check_finite(y, mean, var)
        sign = 2.0 * y - 1.0
        return expect_1d(lambda f: F.logsigmoid(sign[..., None] * f), mean, var, rule).sum(-1)

    def _log_p1(self, mean, var, rule):
        if rule.order_1d == 0:
            return torch.log(expect_1d(torch.sigmoid, mean, var, rule))
        z, w = hermite_rule(rule.order_1d)
        f = mean[..., None] + torch.sqrt(var)[..., None] * z
        return torch.logsumexp(F.logsigmoid(f) + torch.log(w), -1)

    def predict_mean_and_var(self, mean, var, rule=DEFAULT_QUADRATURE):
        p = torch.exp(self._log_p1(mean, var, rule))
        return p, p * (1 - p)

    def predict_log_density(self, y, mean, var, rule=DEFAULT_QUADRATURE):
        y = as_tensor(y)
        self._check(y, mean)
        log_p1 = self._log_p1(mean, var, rule)
        log_p0 = self._log_p1(-mean, var, rule)
        return (y * log_p1 + (1 - y) * log_p0).sum(-1)


class HeteroscedasticGaussian(Likelihood):
    """Two latent outputs per label: mean f[0] and variance g(f[1]).

    g is softplus plus a small floor.
    """

    kind = "heteroscedastic"
    latent_per_label = 2

    def _check(self, y, mean):
        if y.shape[-1] != 1:
            raise ArityError("heteroscedastic likelihood supports a single label column")
        super()._check(y, mean)

    @staticmethod
    def transform(f2):
        return positive(f2)

    def log_prob(self, y, f):
        y, f = as_tensor(y), as_tensor(f)
        self._check(y, f)
        v = self.transform(f[..., 1])
        return -0.5 * (LOG_2PI + torch.log(v) + (y[..., 0] - f[..., 0]) ** 2 / v)

    def _grid(self, mean, var, rule):
        z, w = hermite_rule(rule.order_2d)
        f1 = mean[..., 0, None, None] + torch.sqrt(var[..., 0])[..., None, None] * z[:, None]
        f2 = mean[..., 1, None, None] + torch.sqrt(var[..., 1])[..., None, None] * z[None, :]
        return f1, f2, w[:, None] * w[None, :]

    def variational_expectation(self, y, mean, var, rule=DEFAULT_QUADRATURE):
        y = as_tensor(y)
        self._check(y, mean)
        _check_finite(y, mean, var)
        f1, f2, w = self._grid(mean, var, rule)
        v = self.transform(f2)
        yy = y[..., 0, None, None]
        lp = -0.5 * (LOG_2PI + torch.log(v) + (yy - f1) ** 2 / v)
        return (lp * w).sum((-1, -2))

    def predict_mean_and_var(self, mean, var, rule=DEFAULT_QUADRATURE):
        noise = expect_1d(self.transform, mean[..., 1], var[..., 1], rule)
        return mean[..., :1], (var[..., 0] + noise)[..., None]

    def predict_log_density(self, y, mean, var, rule=DEFAULT_QUADRATURE):
        y = as_tensor(y)
        self._check(y, mean)
        z, w = hermite_rule(rule.order_1d or 20)
        f2 = mean[..., 1, None] + torch.sqrt(var[..., 1])[..., None] * z
        v = var[..., 0, None] + self.transform(f2)
        lp = -0.5 * (LOG_2PI + torch.log(v) + (y[..., 0, None] - mean[..., 0, None]) ** 2 / v)
        return torch.logsumexp(lp + torch.log(w), -1)


LIKELIHOODS = {cls.kind: cls for cls in (Gaussian, Bernoulli, HeteroscedasticGaussian)}


@dataclass
class PredictiveSummary:
    mean: torch.Tensor
    variance: torch.Tensor
    log_density: Callable[[torch.Tensor], torch.Tensor]


def variational_expectation(lik: Likelihood, y, fmean, fvar, quad=DEFAULT_QUADRATURE):
    return lik.variational_expectation(as_tensor(y), as_tensor(fmean), as_tensor(fvar), quad)


def log_prob(lik: Likelihood, y, f):
    return lik.log_prob(y, f)


def predict_y(lik: Likelihood, fmean, fvar, quad=DEFAULT_QUADRATURE) -> PredictiveSummary:
    fmean, fvar = as_tensor(fmean), as_tensor(fvar)
    m, v = lik.predict_mean_and_var(fmean, fvar, quad)
    return PredictiveSummary(m, v, lambda y: lik.predict_log_density(as_tensor(y), fmean, fvar, quad))
