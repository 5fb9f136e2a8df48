"""Inducing-variable constructions.

``Kuf`` is returned in (M, N) orientation; ``kfu`` gives the (N, M) view.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ShapeError
from .gauss import DTYPE, as_tensor
from .kernels import MeanFunction, Stationary
from .params import VARIATIONAL, Parameterized


class InducingVariables(Parameterized):
    kind = "base"

    @property
    def M(self) -> int:
        raise NotImplementedError

    def Kuu(self, kernel: Stationary) -> torch.Tensor:
        raise NotImplementedError

    def Kuf(self, kernel: Stationary, X) -> torch.Tensor:
        raise NotImplementedError

    def prior_mean(self, mean: MeanFunction) -> torch.Tensor:
        raise NotImplementedError


def _points(Z) -> torch.Tensor:
    Z = as_tensor(Z)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise ShapeError(f"inducing points must be an (M, d) matrix with M >= 1, got {tuple(Z.shape)}")
    if not bool(torch.isfinite(Z).all()):
        raise ShapeError("inducing points must be finite")
    return Z


class InducingPoints(InducingVariables):
    """Dirac features: u_m = f(Z_m)."""

    kind = "dirac"

    def __init__(self, Z):
        super().__init__()
        self.register("Z", _points(Z), VARIATIONAL)

    @property
    def M(self) -> int:
        return self.Z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.Z.shape[1]

    def Kuu(self, kernel):
        return kernel.K(self.Z, self.Z)

    def Kuf(self, kernel, X):
        return kernel.K(self.Z, X)

    def prior_mean(self, mean):
        return mean(self.Z)

    def config(self) -> dict:
        return {"kind": self.kind, "M": self.M, "input_dim": self.input_dim}


class DerivativeFeatures(InducingVariables):
    """u_m = d f / d x_{dims[m]} evaluated at Z_m."""

    kind = "derivative"

    def __init__(self, Z, dims):
        super().__init__()
        Z = _points(Z)
        dims = torch.as_tensor(np.asarray(dims), dtype=torch.long).reshape(-1)
        if dims.shape[0] != Z.shape[0]:
            raise ShapeError(f"need one derivative dimension per point, got {dims.shape[0]} for {Z.shape[0]}")
        if bool(((dims < 0) | (dims >= Z.shape[1])).any()):
            raise ShapeError(f"derivative dimensions must lie in [0, {Z.shape[1]})")
        self.register("Z", Z, VARIATIONAL)
        self.register_buffer("dims", dims)

    @property
    def M(self) -> int:
        return self.Z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.Z.shape[1]

    def Kuu(self, kernel):
        return kernel.cross_hess(self.Z, self.Z, self.dims, self.dims)

    def Kuf(self, kernel, X):
        return kernel.grad(as_tensor(X), self.Z, self.dims).transpose(-1, -2)

    def prior_mean(self, mean):
        J = mean.jacobian()  # (out, in); raises UnsupportedMean
        return J[:, self.dims].T

    def config(self) -> dict:
        return {"kind": self.kind, "M": self.M, "input_dim": self.input_dim, "dims": self.dims.tolist()}


class DiagKuuHook(InducingVariables):
    """Interface for features whose Kuu is diagonal.

    Subclasses implement ``kuu_diag`` and ``Kuf``; no concrete feature ships.
    """

    kind = "diag"

    def kuu_diag(self, kernel) -> torch.Tensor:
        raise NotImplementedError

    def Kuu(self, kernel):
        d = self.kuu_diag(kernel)
        if bool((d <= 0).any()):
            raise ValueError("diagonal Kuu entries must be positive")
        return torch.diag_embed(d)


def kuu(ind: InducingVariables, k: Stationary) -> torch.Tensor:
    return ind.Kuu(k)


def kfu(X, ind: InducingVariables, k: Stationary) -> torch.Tensor:
    X = as_tensor(X)
    if X.ndim != 2 or X.shape[1] != ind.input_dim:
        raise ShapeError(f"X must be (N, {ind.input_dim})")
    return ind.Kuf(k, X).T


def prior_mu_u(ind: InducingVariables, m: MeanFunction) -> torch.Tensor:
    mu = ind.prior_mean(m)
    return mu[:, 0] if mu.shape[1] == 1 else mu


def init_inducing_points(X, M: int, rng: np.random.Generator) -> torch.Tensor:
    """Random subset of the inputs; extra points come from a normal fit to their moments."""
    X = np.asarray(X, dtype=np.float64)
    N, d = X.shape
    take = min(M, N)
    Z = X[rng.choice(N, size=take, replace=False)]
    if M > N:
        mu = X.mean(0)
        sd = X.std(0) if N > 1 else np.ones(d)
        sd = np.where(sd > 0, sd, 1.0)
        Z = np.concatenate([Z, mu + sd * rng.standard_normal((M - N, d))])
    return torch.as_tensor(Z, dtype=DTYPE)
