"""Covariance and mean functions.

Inputs are batches of shape ``(..., N, d)``; kernel matrices come back as
``(..., N, M)``. Only the RBF family ships, but :class:`Stationary` is the
place to hang other stationary families.
"""

from __future__ import annotations

import torch

from .errors import ShapeError, UnsupportedMean
from .gauss import DTYPE, as_tensor
from .params import GENERATIVE, Parameterized, inv_positive, positive


def _check_inputs(A: torch.Tensor, dim: int, name: str) -> None:
    if A.ndim < 2 or A.shape[-1] != dim:
        raise ShapeError(f"{name} must have shape (..., N, {dim}), got {tuple(A.shape)}")


class Stationary(Parameterized):
    family = "stationary"

    def __init__(self, input_dim: int, variance=1.0, lengthscales=1.0):
        super().__init__()
        self.input_dim = int(input_dim)
        ls = as_tensor(lengthscales)
        if ls.ndim == 0:
            ls = ls.repeat(self.input_dim)
        if ls.shape != (self.input_dim,):
            raise ShapeError(f"expected {self.input_dim} lengthscales, got {tuple(ls.shape)}")
        self.register("variance", inv_positive(variance), GENERATIVE, "softplus")
        self.register("lengthscales", inv_positive(ls), GENERATIVE, "softplus")

    @property
    def var(self) -> torch.Tensor:
        return positive(self.variance)

    @property
    def ls(self) -> torch.Tensor:
        return positive(self.lengthscales)

    def scaled_diff(self, A, B) -> torch.Tensor:
        A, B = as_tensor(A), as_tensor(B)
        _check_inputs(A, self.input_dim, "A")
        _check_inputs(B, self.input_dim, "B")
        return (A[..., :, None, :] - B[..., None, :, :]) / self.ls

    def K(self, A, B=None) -> torch.Tensor:
        raise NotImplementedError

    def K_diag(self, A) -> torch.Tensor:
        A = as_tensor(A)
        _check_inputs(A, self.input_dim, "A")
        return self.var * torch.ones(A.shape[:-1], dtype=DTYPE)

    def config(self) -> dict:
        return {"family": self.family, "input_dim": self.input_dim}


class RBF(Stationary):
    """Squared-exponential kernel with ARD lengthscales."""

    family = "RBF"

    def K(self, A, B=None) -> torch.Tensor:
        B = A if B is None else B
        r2 = self.scaled_diff(A, B).pow(2).sum(-1)
        return self.var * torch.exp(-0.5 * r2)

    def grad(self, A, B, dims_B) -> torch.Tensor:
        """d k(A_i, B_j) / d B_j[dims_B[j]], shape (..., N, M)."""
        A, B = as_tensor(A), as_tensor(B)
        dims_B = torch.as_tensor(dims_B, dtype=torch.long)
        k = self.K(A, B)
        ls2 = self.ls.pow(2)
        diff = A[..., :, None, :] - B[..., None, :, :]
        idx = dims_B.expand(diff.shape[:-1])[..., None]
        sel = torch.gather(diff, -1, idx)[..., 0]
        return k * sel / ls2[dims_B]

    def cross_hess(self, A, B, dims_A, dims_B) -> torch.Tensor:
        """d^2 k(A_i, B_j) / d A_i[dims_A[i]] d B_j[dims_B[j]], shape (..., N, M)."""
        A, B = as_tensor(A), as_tensor(B)
        dims_A = torch.as_tensor(dims_A, dtype=torch.long)
        dims_B = torch.as_tensor(dims_B, dtype=torch.long)
        k = self.K(A, B)
        ls2 = self.ls.pow(2)
        diff = A[..., :, None, :] - B[..., None, :, :]
        shape = diff.shape[:-1]
        da = dims_A[:, None].expand(shape)
        db = dims_B[None, :].expand(shape)
        diff_a = torch.gather(diff, -1, da[..., None])[..., 0]
        diff_b = torch.gather(diff, -1, db[..., None])[..., 0]
        same = (da == db).to(DTYPE)
        return k * (same / ls2[da] - diff_a * diff_b / (ls2[da] * ls2[db]))


KERNELS = {"RBF": RBF}


def kern_matrix(k: Stationary, A, B) -> torch.Tensor:
    return k.K(A, B)


def kern_grad(k: RBF, x, x_prime, d: int) -> torch.Tensor:
    """Derivative of k(x, x') with respect to x'_d."""
    x, x_prime = as_tensor(x).reshape(1, -1), as_tensor(x_prime).reshape(1, -1)
    _check_dim_index(k, d)
    return k.grad(x, x_prime, [d])[0, 0]


def kern_cross_hess(k: RBF, x, x_prime, d: int, d_prime: int) -> torch.Tensor:
    """Mixed derivative of k(x, x') with respect to x_d and x'_d'."""
    x, x_prime = as_tensor(x).reshape(1, -1), as_tensor(x_prime).reshape(1, -1)
    _check_dim_index(k, d)
    _check_dim_index(k, d_prime)
    return k.cross_hess(x, x_prime, [d], [d_prime])[0, 0]


def _check_dim_index(k, d):
    if not 0 <= int(d) < k.input_dim:
        raise ShapeError(f"dimension index {d} outside [0, {k.input_dim})")


# ---------------------------------------------------------------------------
# mean functions


class MeanFunction(Parameterized):
    kind = "base"

    def __init__(self, input_dim: int, output_dim: int):
        super().__init__()
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)

    def __call__(self, A) -> torch.Tensor:
        A = as_tensor(A)
        _check_inputs(A, self.input_dim, "A")
        return self.forward(A)

    def jacobian(self) -> torch.Tensor:
        """Constant Jacobian (output_dim, input_dim); every shipped family is affine."""
        raise UnsupportedMean(f"{self.kind} mean has no derivative")

    def config(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "output_dim": self.output_dim}


class Zero(MeanFunction):
    kind = "zero"

    def __init__(self, input_dim: int, output_dim: int = 1):
        super().__init__(input_dim, output_dim)

    def forward(self, A):
        return torch.zeros(A.shape[:-1] + (self.output_dim,), dtype=DTYPE)

    def jacobian(self):
        return torch.zeros(self.output_dim, self.input_dim, dtype=DTYPE)


class Constant(MeanFunction):
    kind = "constant"

    def __init__(self, input_dim: int, output_dim: int = 1, c=0.0):
        super().__init__(input_dim, output_dim)
        c = as_tensor(c)
        self.register("c", c.expand(output_dim).clone() if c.ndim == 0 else c, GENERATIVE)

    def forward(self, A):
        return self.c.expand(A.shape[:-1] + (self.output_dim,))

    def jacobian(self):
        return torch.zeros(self.output_dim, self.input_dim, dtype=DTYPE)


class Linear(MeanFunction):
    """x -> A x + b with A of shape (output_dim, input_dim)."""

    kind = "linear"

    def __init__(self, input_dim: int, output_dim: int = 1, A=None, b=None):
        super().__init__(input_dim, output_dim)
        A = torch.zeros(output_dim, input_dim, dtype=DTYPE) if A is None else as_tensor(A)
        b = torch.zeros(output_dim, dtype=DTYPE) if b is None else as_tensor(b).reshape(-1)
        if A.shape != (output_dim, input_dim) or b.shape != (output_dim,):
            raise ShapeError(f"Linear mean needs A {(output_dim, input_dim)} and b ({output_dim},)")
        self.register("A", A, GENERATIVE)
        self.register("b", b, GENERATIVE)

    def forward(self, X):
        return X @ self.A.T + self.b

    def jacobian(self):
        return self.A


class Identity(MeanFunction):
    kind = "identity"

    def __init__(self, input_dim: int, output_dim: int | None = None):
        output_dim = input_dim if output_dim is None else output_dim
        if output_dim != input_dim:
            raise ShapeError("identity mean needs equal input and output dimension")
        super().__init__(input_dim, output_dim)

    def forward(self, A):
        return A

    def jacobian(self):
        return torch.eye(self.input_dim, dtype=DTYPE)


MEANS = {cls.kind: cls for cls in (Zero, Constant, Linear, Identity)}


def mean_vector(m: MeanFunction, A) -> torch.Tensor:
    return m(A)


def inner_layer_mean(input_dim: int, output_dim: int) -> MeanFunction:
    """Identity when dimensions agree, otherwise a fixed-start Linear map
    whose weight is the identity truncated or zero-padded to shape."""
    if input_dim == output_dim:
        return Identity(input_dim)
    A = torch.eye(output_dim, input_dim, dtype=DTYPE)
    return Linear(input_dim, output_dim, A=A)
