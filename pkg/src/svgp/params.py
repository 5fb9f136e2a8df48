"""Parameter bookkeeping: positivity transforms and role-tagged registration.

Every trainable quantity is stored as an unconstrained ``nn.Parameter`` and
tagged with a role (``variational`` or ``generative``) and the transform that
maps it to its constrained value.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .gauss import DTYPE, as_tensor

POSITIVE_FLOOR = 1e-6

VARIATIONAL = "variational"
GENERATIVE = "generative"
ROLES = (VARIATIONAL, GENERATIVE)
TRANSFORMS = ("identity", "softplus", "triangular")


def softplus(x: torch.Tensor) -> torch.Tensor:
    # logaddexp has no threshold kink, unlike F.softplus
    return torch.logaddexp(x, torch.zeros((), dtype=x.dtype))


def inv_softplus(y) -> torch.Tensor:
    y = as_tensor(y)
    return y + torch.log(-torch.expm1(-y))


def positive(raw: torch.Tensor) -> torch.Tensor:
    return softplus(raw) + POSITIVE_FLOOR


def inv_positive(value) -> torch.Tensor:
    value = as_tensor(value)
    if bool((value <= POSITIVE_FLOOR).any()):
        raise ValueError(f"positive parameter must exceed {POSITIVE_FLOOR}")
    return inv_softplus(value - POSITIVE_FLOOR)


def lower_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """Lower-triangular factor with softplus-positive diagonal."""
    diag = softplus(torch.diagonal(raw, dim1=-2, dim2=-1))
    return torch.tril(raw, diagonal=-1) + torch.diag_embed(diag)


def raw_from_lower(L) -> torch.Tensor:
    L = as_tensor(L)
    d = torch.diagonal(L, dim1=-2, dim2=-1)
    if bool((d <= 0).any()):
        raise ValueError("triangular factor needs a strictly positive diagonal")
    return torch.tril(L, diagonal=-1) + torch.diag_embed(inv_softplus(d))


@dataclass(frozen=True)
class ParamInfo:
    role: str
    transform: str


class Parameterized(nn.Module):
    """``nn.Module`` whose parameters carry a role and a transform tag."""

    def __init__(self):
        super().__init__()
        self._param_info: dict[str, ParamInfo] = {}

    def register(self, name: str, raw, role: str, transform: str = "identity") -> None:
        assert role in ROLES and transform in TRANSFORMS
        self.register_parameter(name, nn.Parameter(as_tensor(raw).clone()))
        self._param_info[name] = ParamInfo(role, transform)


class ParameterSet:
    """Flat, ordered registry of every raw parameter in a model."""

    def __init__(self, model: nn.Module):
        self.tensors: dict[str, nn.Parameter] = {}
        self.info: dict[str, ParamInfo] = {}
        for prefix, module in model.named_modules():
            meta = getattr(module, "_param_info", {})
            for local, param in module.named_parameters(recurse=False):
                name = f"{prefix}.{local}" if prefix else local
                if local not in meta:
                    raise KeyError(f"parameter {name} has no role tag")
                if name in self.tensors:
                    raise KeyError(f"duplicate parameter name {name}")
                if any(param is p for p in self.tensors.values()):
                    raise KeyError(f"parameter {name} registered twice")
                self.tensors[name] = param
                self.info[name] = meta[local]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self, role: str | None = None) -> list[str]:
        return [n for n in self.tensors if role is None or self.info[n].role == role]

    def values(self) -> dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self.tensors.items()}

    def load(self, values: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for n, v in values.items():
                self.tensors[n].copy_(as_tensor(v))

    def size(self) -> int:
        return sum(p.numel() for p in self.tensors.values())


__all__ = [
    "DTYPE",
    "GENERATIVE",
    "VARIATIONAL",
    "ParameterSet",
    "Parameterized",
    "inv_positive",
    "inv_softplus",
    "lower_from_raw",
    "positive",
    "raw_from_lower",
    "softplus",
]
