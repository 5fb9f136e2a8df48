"""Shallow sparse variational GP layer, its prior KL and ELBO.

The inducing posterior is stored in one of three parameterizations:

``none``  q(u) = N(q_mean, S S^T) directly
``mean``  q(v) with v = u - mu_u (mean-corrected), same covariance
``full``  q(w) with u = mu_u + L w, L = chol(Kuu); prior on w is N(0, I)
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch

from .errors import ShapeError
from .gauss import DTYPE, Gaussian, as_tensor, cholesky
from .inducing import InducingVariables
from .kernels import MeanFunction, Stationary, Zero
from .likelihoods import DEFAULT_QUADRATURE, Gaussian as GaussianLikelihood, Likelihood
from .params import VARIATIONAL, Parameterized, lower_from_raw, raw_from_lower

WHITENINGS = ("none", "mean", "full")


class VariationalState(Parameterized):
    """Gaussian over M inducing variables for each of D outputs."""

    def __init__(self, M: int, D: int = 1, whitening: str = "full", q_mean=None, q_sqrt=None):
        super().__init__()
        if whitening not in WHITENINGS:
            raise ValueError(f"whitening must be one of {WHITENINGS}, got {whitening!r}")
        self.whitening = whitening
        q_mean = torch.zeros(M, D, dtype=DTYPE) if q_mean is None else as_tensor(q_mean).reshape(M, D)
        if q_sqrt is None:
            q_sqrt = torch.eye(M, dtype=DTYPE).expand(D, M, M)
        q_sqrt = as_tensor(q_sqrt)
        if q_sqrt.ndim == 0:
            q_sqrt = q_sqrt * torch.eye(M, dtype=DTYPE).expand(D, M, M)
        if q_sqrt.ndim == 2:
            q_sqrt = q_sqrt.expand(D, M, M)
        if q_sqrt.shape != (D, M, M):
            raise ShapeError(f"q_sqrt must be ({D}, {M}, {M}), got {tuple(q_sqrt.shape)}")
        self.register("q_mean", q_mean, VARIATIONAL)
        self.register("q_sqrt", raw_from_lower(q_sqrt), VARIATIONAL, "triangular")

    @property
    def M(self) -> int:
        return self.q_mean.shape[0]

    @property
    def D(self) -> int:
        return self.q_mean.shape[1]

    @property
    def sqrt(self) -> torch.Tensor:
        return lower_from_raw(self.q_sqrt)

    @property
    def cov(self) -> torch.Tensor:
        S = self.sqrt
        return S @ S.transpose(-1, -2)


class Layer(Parameterized):
    """Anything that maps inputs to a multioutput Gaussian with a prior KL."""

    in_dim: int
    out_dim: int

    @property
    def noise_dim(self) -> int:
        return self.out_dim

    def predict_f(self, X, full_cov: bool = False):
        raise NotImplementedError

    def prior_kl(self) -> torch.Tensor:
        raise NotImplementedError

    def sample(self, X, eps, full_cov: bool = False) -> torch.Tensor:
        """Reparameterized draw at X. ``eps`` has shape (..., N, noise_dim).

        With ``full_cov`` the draw is joint over the N axis, otherwise each
        point is drawn from its own marginal.
        """
        eps = as_tensor(eps)
        if full_cov:
            mean, cov = self.predict_f(X, full_cov=True)  # (..., D, N, N)
            L = cholesky(cov).lower
            return mean + (L @ eps.transpose(-1, -2)[..., None])[..., 0].transpose(-1, -2)
        mean, var = self.predict_f(X)
        return mean + torch.sqrt(var) * eps


class SVGPLayer(Layer):
    """Sparse variational GP with D outputs sharing one kernel and one inducing set."""

    def __init__(
        self,
        kernel: Stationary,
        inducing: InducingVariables,
        mean: MeanFunction | None = None,
        output_dim: int = 1,
        whitening: str = "full",
        q_mean=None,
        q_sqrt=None,
    ):
        super().__init__()
        if kernel.input_dim != inducing.input_dim:
            raise ShapeError(f"kernel input dim {kernel.input_dim} != inducing dim {inducing.input_dim}")
        mean = Zero(kernel.input_dim, output_dim) if mean is None else mean
        if mean.input_dim != kernel.input_dim or mean.output_dim != output_dim:
            raise ShapeError(
                f"mean maps {mean.input_dim}->{mean.output_dim}, layer needs {kernel.input_dim}->{output_dim}"
            )
        self.kernel = kernel
        self.inducing = inducing
        self.mean = mean
        self.vstate = VariationalState(inducing.M, output_dim, whitening, q_mean, q_sqrt)

    @property
    def in_dim(self) -> int:
        return self.kernel.input_dim

    @property
    def out_dim(self) -> int:
        return self.vstate.D

    @property
    def whitening(self) -> str:
        return self.vstate.whitening

    def prior_u(self):
        """(mu_u (M, D), Cholesky factor of Kuu)."""
        return self.inducing.prior_mean(self.mean), cholesky(self.inducing.Kuu(self.kernel))

    def predict_f(self, X, full_cov: bool = False):
        """Posterior marginals at X of shape (..., N, d).

        Returns mean (..., N, D) and either var (..., N, D) or cov (..., D, N, N).
        """
        X = as_tensor(X)
        if X.shape[-1] != self.in_dim:
            raise ShapeError(f"inputs have dimension {X.shape[-1]}, layer expects {self.in_dim}")
        if not bool(torch.isfinite(X).all()):
            raise ShapeError("inputs must be finite")
        L = cholesky(self.inducing.Kuu(self.kernel)).lower
        Kuf = self.inducing.Kuf(self.kernel, X)  # (..., M, N)
        Lkf = torch.linalg.solve_triangular(L, Kuf, upper=False)
        vs = self.vstate
        if vs.whitening == "full":
            B, delta = Lkf, vs.q_mean
        else:
            B = torch.linalg.solve_triangular(L.T, Lkf, upper=True)  # Kuu^{-1} Kuf
            delta = vs.q_mean
            if vs.whitening == "none":
                delta = delta - self.inducing.prior_mean(self.mean)
        mean = self.mean(X) + B.transpose(-1, -2) @ delta
        SB = vs.sqrt.transpose(-1, -2) @ B[..., None, :, :]  # (..., D, M, N)
        if full_cov:
            Kff = self.kernel.K(X)
            base = Kff - Lkf.transpose(-1, -2) @ Lkf
            cov = base[..., None, :, :] + SB.transpose(-1, -2) @ SB
            return mean, cov
        var = self.kernel.K_diag(X) - Lkf.pow(2).sum(-2)
        var = var[..., None] + SB.pow(2).sum(-2).transpose(-1, -2)
        return mean, var

    def prior_kl(self) -> torch.Tensor:
        vs = self.vstate
        S, m = vs.sqrt, vs.q_mean.T  # (D, M, M), (D, M)
        if vs.whitening == "full":
            trace = S.pow(2).sum((-1, -2))
            maha = m.pow(2).sum(-1)
            logdet_p = torch.zeros((), dtype=DTYPE)
        else:
            L = cholesky(self.inducing.Kuu(self.kernel)).lower
            if vs.whitening == "none":
                m = m - self.inducing.prior_mean(self.mean).T
            trace = torch.linalg.solve_triangular(L, S, upper=False).pow(2).sum((-1, -2))
            maha = torch.linalg.solve_triangular(L, m.T, upper=False).pow(2).sum(0)
            logdet_p = 2.0 * torch.log(torch.diagonal(L)).sum()
        logdet_q = 2.0 * torch.log(torch.diagonal(S, dim1=-2, dim2=-1)).sum(-1)
        kl = 0.5 * (trace + maha - vs.M + logdet_p - logdet_q)
        return kl.sum()

    def config(self) -> dict:
        return {
            "type": "svgp",
            "kernel": self.kernel.config(),
            "mean": self.mean.config(),
            "inducing": self.inducing.config(),
            "output_dim": self.out_dim,
            "whitening": self.whitening,
        }


def predict_f(layer: Layer, Xnew, full_cov: bool = False):
    return layer.predict_f(Xnew, full_cov)


def prior_kl(layer: Layer) -> torch.Tensor:
    return layer.prior_kl()


def elbo(layer: Layer, lik: Likelihood, X, y, total_N: int | None = None, quad=DEFAULT_QUADRATURE) -> torch.Tensor:
    """Expected log likelihood over the batch, rescaled to total_N points, minus the prior KL."""
    X, y = as_tensor(X), as_tensor(y)
    if y.ndim == 1:
        y = y[:, None]
    B = X.shape[0]
    if B == 0:
        raise ShapeError("elbo needs a nonempty batch")
    total_N = B if total_N is None else int(total_N)
    if total_N < B:
        raise ShapeError(f"total_N={total_N} is smaller than the batch ({B})")
    mean, var = layer.predict_f(X)
    ve = lik.variational_expectation(y, mean, var, quad)
    return (total_N / B) * ve.sum() - layer.prior_kl()


def convert(layer: SVGPLayer, whitening: str) -> SVGPLayer:
    """Copy of ``layer`` whose inducing posterior uses another parameterization."""
    if whitening not in WHITENINGS:
        raise ValueError(f"unknown whitening {whitening!r}")
    with torch.no_grad():
        mu_u, chol = layer.prior_u()
        L = chol.lower
        vs = layer.vstate
        # to the u parameterization first
        S = vs.sqrt
        if vs.whitening == "full":
            q_u, S_u = mu_u + L @ vs.q_mean, L @ S
        elif vs.whitening == "mean":
            q_u, S_u = mu_u + vs.q_mean, S
        else:
            q_u, S_u = vs.q_mean.clone(), S
        if whitening == "full":
            q, Sq = torch.linalg.solve_triangular(L, q_u - mu_u, upper=False), torch.linalg.solve_triangular(
                L, S_u, upper=False
            )
        elif whitening == "mean":
            q, Sq = q_u - mu_u, S_u
        else:
            q, Sq = q_u, S_u
    out = copy.deepcopy(layer)
    out.vstate = VariationalState(vs.M, vs.D, whitening, q, Sq)
    return out


def to_whitened(layer: SVGPLayer) -> SVGPLayer:
    return convert(layer, "full")


def from_whitened(layer: SVGPLayer) -> SVGPLayer:
    return convert(layer, "none")


@dataclass
class ExactGP:
    posterior: Gaussian
    log_marginal: float


def exact_gp_oracle(kernel: Stationary, mean: MeanFunction, lik: GaussianLikelihood, X, y, Xnew) -> ExactGP:
    """Dense GP regression: posterior at Xnew and the exact log marginal likelihood."""
    with torch.no_grad():
        Xnew = as_tensor(Xnew)
        X = as_tensor(X).reshape(-1, Xnew.shape[-1])
        y = as_tensor(y).reshape(-1)
        prior_mean = mean(Xnew)[:, 0]
        Kss = kernel.K(Xnew)
        if X.shape[0] == 0:
            return ExactGP(Gaussian(prior_mean, Kss), 0.0)
        N = X.shape[0]
        Ky = kernel.K(X) + lik.noise * torch.eye(N, dtype=DTYPE)
        L = cholesky(Ky)
        r = y - mean(X)[:, 0]
        alpha = L.solve_lower(r[:, None])
        Ksx = kernel.K(Xnew, X)
        A = L.solve_lower(Ksx.T)
        post_mean = prior_mean + (A.T @ alpha)[:, 0]
        post_cov = Kss - A.T @ A
        post_cov = 0.5 * (post_cov + post_cov.T)
        log_ml = -0.5 * alpha.pow(2).sum() - 0.5 * L.logdet() - 0.5 * N * math.log(2 * math.pi)
        return ExactGP(Gaussian(post_mean, post_cov), float(log_ml))
