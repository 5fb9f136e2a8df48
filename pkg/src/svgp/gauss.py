"""Dense multivariate-Gaussian algebra.

Every inverse is realized as a triangular solve against a Cholesky factor.
Factorizations go through :func:`cholesky`, which walks a trace-scaled
jitter ladder before giving up.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import torch

from .errors import FactorizationError, ShapeError

DTYPE = torch.float64

# relative jitter levels tried after a plain factorization fails
JITTER_LADDER = tuple(10.0 ** k for k in range(-10, -3))

logger = logging.getLogger(__name__)

_jitter_events: contextvars.ContextVar[list | None] = contextvars.ContextVar(
    "svgp_jitter_events", default=None
)


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


@contextlib.contextmanager
def record_jitter():
    """Collect the jitter values used by every escalated factorization."""
    events: list[float] = []
    token = _jitter_events.set(events)
    try:
        yield events
    finally:
        _jitter_events.reset(token)


@dataclass(frozen=True)
class CholFactor:
    lower: torch.Tensor
    jitter_used: torch.Tensor

    def solve_lower(self, rhs: torch.Tensor) -> torch.Tensor:
        """Return L^{-1} rhs."""
        return torch.linalg.solve_triangular(self.lower, rhs, upper=False)

    def solve_upper(self, rhs: torch.Tensor) -> torch.Tensor:
        """Return L^{-T} rhs."""
        return torch.linalg.solve_triangular(self.lower.transpose(-1, -2), rhs, upper=True)

    def solve(self, rhs: torch.Tensor) -> torch.Tensor:
        return self.solve_upper(self.solve_lower(rhs))

    def logdet(self) -> torch.Tensor:
        return 2.0 * torch.log(torch.diagonal(self.lower, dim1=-2, dim2=-1)).sum(-1)


def cholesky(A) -> CholFactor:
    """Cholesky factor of a (batch of) symmetric matrices.

    Tries the matrix as given, then adds ``level * trace(A) / n`` to the
    diagonal for each level of :data:`JITTER_LADDER`. Batch elements escalate
    independently.
    """
    A = as_tensor(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"cholesky needs square matrices, got shape {tuple(A.shape)}")
    n = A.shape[-1]
    L, info = torch.linalg.cholesky_ex(A)
    jitter = torch.zeros(A.shape[:-2], dtype=DTYPE)
    bad = info != 0
    if not bool(bad.any()):
        return CholFactor(L, jitter)

    with torch.no_grad():
        scale = torch.diagonal(A, dim1=-2, dim2=-1).sum(-1) / n
        scale = torch.where(scale > 0, scale, torch.ones_like(scale))
    eye = torch.eye(n, dtype=DTYPE)
    for level in JITTER_LADDER:
        jitter = torch.where(bad, level * scale, jitter)
        L, info = torch.linalg.cholesky_ex(A + jitter[..., None, None] * eye)
        bad = info != 0
        if not bool(bad.any()):
            worst = float(jitter.max())
            logger.warning("cholesky needed jitter %.3g (n=%d)", worst, n)
            events = _jitter_events.get()
            if events is not None:
                events.append(worst)
            return CholFactor(L, jitter)
    raise FactorizationError(
        f"matrix of size {n} is not positive definite even with jitter "
        f"{JITTER_LADDER[-1]:g} * trace/n"
    )


def _check_symmetric(cov: torch.Tensor, name: str) -> None:
    with torch.no_grad():
        scale = max(1.0, float(cov.abs().max())) if cov.numel() else 1.0
        asym = float((cov - cov.transpose(-1, -2)).abs().max()) if cov.numel() else 0.0
    if asym > 1e-12 * scale:
        raise ShapeError(f"{name} is not symmetric (max asymmetry {asym:.3g})")


def _sym(a: torch.Tensor) -> torch.Tensor:
    return 0.5 * (a + a.transpose(-1, -2))


@dataclass(frozen=True)
class Gaussian:
    """Finite-dimensional Gaussian N(mean, cov)."""

    mean: torch.Tensor
    cov: torch.Tensor

    def __post_init__(self):
        mean = as_tensor(self.mean).reshape(-1)
        n = mean.shape[0]
        cov = as_tensor(self.cov)
        if cov.numel() != n * n:
            raise ShapeError(f"cov with {cov.numel()} entries does not match mean of length {n}")
        cov = cov.reshape(n, n)
        _check_symmetric(cov, "cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def chol(self) -> CholFactor:
        return cholesky(self.cov)


@dataclass(frozen=True)
class LinearMap:
    matrix: torch.Tensor

    def __post_init__(self):
        m = as_tensor(self.matrix)
        if m.ndim == 1:
            m = m[None, :]
        if m.ndim != 2:
            raise ShapeError("LinearMap needs a 2-D matrix")
        if not bool(torch.isfinite(m).all()):
            raise ShapeError("LinearMap has non-finite entries")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class JointGaussian:
    """Gaussian over the stacked vector (f, u), kept in partitioned blocks."""

    mean_f: torch.Tensor
    mean_u: torch.Tensor
    cov_ff: torch.Tensor
    cov_fu: torch.Tensor
    cov_uu: torch.Tensor
    degenerate: bool = False

    def __post_init__(self):
        for name in ("mean_f", "mean_u", "cov_ff", "cov_fu", "cov_uu"):
            object.__setattr__(self, name, as_tensor(getattr(self, name)))
        object.__setattr__(self, "mean_f", self.mean_f.reshape(-1))
        object.__setattr__(self, "mean_u", self.mean_u.reshape(-1))
        nf, nu = self.mean_f.shape[0], self.mean_u.shape[0]
        object.__setattr__(self, "cov_ff", self.cov_ff.reshape(nf, nf))
        object.__setattr__(self, "cov_uu", self.cov_uu.reshape(nu, nu))
        object.__setattr__(self, "cov_fu", self.cov_fu.reshape(nf, nu))

    @classmethod
    def split(cls, g: Gaussian, n_f: int) -> JointGaussian:
        if not 0 < n_f < g.dim:
            raise ShapeError(f"cannot split a {g.dim}-dim Gaussian at {n_f}")
        return cls(g.mean[:n_f], g.mean[n_f:], g.cov[:n_f, :n_f], g.cov[:n_f, n_f:], g.cov[n_f:, n_f:])

    def marginal_f(self) -> Gaussian:
        return Gaussian(self.mean_f, self.cov_ff)

    def marginal_u(self) -> Gaussian:
        return Gaussian(self.mean_u, self.cov_uu)

    def to_gaussian(self) -> Gaussian:
        top = torch.cat([self.cov_ff, self.cov_fu], dim=1)
        bottom = torch.cat([self.cov_fu.T, self.cov_uu], dim=1)
        return Gaussian(torch.cat([self.mean_f, self.mean_u]), torch.cat([top, bottom], dim=0))


def condition(joint: JointGaussian, u_obs) -> Gaussian:
    """Distribution of f given u = u_obs."""
    u_obs = as_tensor(u_obs).reshape(-1)
    if u_obs.shape != joint.mean_u.shape:
        raise ShapeError(f"u_obs has length {u_obs.shape[0]}, expected {joint.mean_u.shape[0]}")
    L = cholesky(joint.cov_uu)
    A = L.solve_lower(joint.cov_fu.T)  # L^{-1} S_uf
    r = L.solve_lower((u_obs - joint.mean_u)[:, None])[:, 0]
    return Gaussian(joint.mean_f + A.T @ r, _sym(joint.cov_ff - A.T @ A))


def mix_marginal(joint: JointGaussian, q_u: Gaussian) -> Gaussian:
    """Marginal of f when u is drawn from q_u instead of its prior."""
    if q_u.dim != joint.mean_u.shape[0]:
        raise ShapeError(f"q_u has dimension {q_u.dim}, expected {joint.mean_u.shape[0]}")
    L = cholesky(joint.cov_uu)
    A = L.solve_lower(joint.cov_fu.T)
    B = L.solve_upper(A)  # S_uu^{-1} S_uf
    r = L.solve_lower((q_u.mean - joint.mean_u)[:, None])[:, 0]
    cov = joint.cov_ff - A.T @ A + B.T @ q_u.cov @ B
    return Gaussian(joint.mean_f + A.T @ r, _sym(cov))


def linear_push(p_f: Gaussian, phi: LinearMap) -> JointGaussian:
    """Joint over (f, u = phi f). The joint covariance is singular by construction."""
    P = phi.matrix
    if P.shape[1] != p_f.dim:
        raise ShapeError(f"map expects dimension {P.shape[1]}, Gaussian has {p_f.dim}")
    cov_fu = p_f.cov @ P.T
    return JointGaussian(p_f.mean, P @ p_f.mean, p_f.cov, cov_fu, _sym(P @ cov_fu), degenerate=True)


def kl(q: Gaussian, p: Gaussian) -> torch.Tensor:
    """KL(q || p) in nats, clamped at zero."""
    if q.dim != p.dim:
        raise ShapeError(f"dimension mismatch {q.dim} vs {p.dim}")
    Lp, Lq = p.chol, q.chol
    trace = Lp.solve_lower(Lq.lower).pow(2).sum()
    mahal = Lp.solve_lower((p.mean - q.mean)[:, None]).pow(2).sum()
    value = 0.5 * (trace + mahal - q.dim + Lp.logdet() - Lq.logdet())
    return torch.clamp(value, min=0.0)


def kl_standard_normal(mean: torch.Tensor, sqrt: torch.Tensor) -> torch.Tensor:
    """KL(N(mean, sqrt sqrt^T) || N(0, I)) for lower-triangular ``sqrt``."""
    M = mean.shape[-1]
    logdet = torch.log(torch.diagonal(sqrt, dim1=-2, dim2=-1)).sum(-1)
    return 0.5 * (sqrt.pow(2).sum((-1, -2)) + mean.pow(2).sum(-1) - M) - logdet


def sample(p: Gaussian, noise) -> torch.Tensor:
    """Reparameterized draws mean + L eps for each row eps of ``noise``."""
    noise = as_tensor(noise)
    if noise.shape[-1] != p.dim:
        raise ShapeError(f"noise has trailing dimension {noise.shape[-1]}, expected {p.dim}")
    return p.mean + noise @ p.chol.lower.T


def log_normal_pdf(x: torch.Tensor, mean, var) -> torch.Tensor:
    return -0.5 * (math.log(2 * math.pi) + torch.log(var) + (x - mean) ** 2 / var)
