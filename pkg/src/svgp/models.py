"""Model construction from plain-dict topologies.

Two entry points: :func:`build_model` initializes a fresh model from a
:class:`ModelSpec` and training data; :func:`model_from_topology` rebuilds the exact
module structure recorded by ``DeepGP.config()`` so raw parameters can be
loaded into it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .deep import DeepGP, LatentPosteriorTable
from .errors import ConfigError
from .gauss import DTYPE, as_tensor
from .inducing import DerivativeFeatures, InducingPoints, init_inducing_points
from .kernels import KERNELS, MEANS, Constant, Identity, Linear, Zero, inner_layer_mean
from .likelihoods import LIKELIHOODS
from .multioutput import LMC, SeparateIndependent, init_lmc_weights
from .svgp import SVGPLayer

INNER_Q_SQRT = 1e-5


@dataclass
class LayerSpec:
    num_inducing: int = 20
    output_dim: int | None = None  # required for inner layers; inferred for the last
    kernel_variance: float = 1.0
    lengthscales: float | list = 1.0
    mean: str = "auto"  # auto | zero | constant | linear | identity
    whitening: str = "full"
    features: str = "dirac"  # dirac | derivative
    mixing: str = "shared"  # shared | separate | lmc
    lmc_latent: int | None = None
    q_sqrt_init: float | None = None


@dataclass
class ModelSpec:
    layers: list = field(default_factory=lambda: [LayerSpec()])
    likelihood: str = "gaussian"
    likelihood_variance: float = 0.1
    latent_dim: int = 0
    latent_mean_init: float = 0.0
    latent_scale_init: float = 1.0


def _mean(kind: str, in_dim: int, out_dim: int, terminal: bool):
    if kind == "auto":
        return Zero(in_dim, out_dim) if terminal else inner_layer_mean(in_dim, out_dim)
    if kind == "zero":
        return Zero(in_dim, out_dim)
    if kind == "constant":
        return Constant(in_dim, out_dim)
    if kind == "linear":
        return Linear(in_dim, out_dim, A=torch.eye(out_dim, in_dim, dtype=DTYPE))
    if kind == "identity":
        return Identity(in_dim, out_dim)
    raise ConfigError(f"unknown mean function {kind!r}")


def _single_layer(spec: LayerSpec, Z, out_dim, terminal, rng, mean=None):
    in_dim = Z.shape[1]
    kernel = KERNELS["RBF"](in_dim, spec.kernel_variance, spec.lengthscales)
    if spec.features == "dirac":
        inducing = InducingPoints(Z)
    elif spec.features == "derivative":
        inducing = DerivativeFeatures(Z, rng.integers(0, in_dim, size=Z.shape[0]))
    else:
        raise ConfigError(f"unknown inducing features {spec.features!r}")
    mean = _mean(spec.mean, in_dim, out_dim, terminal) if mean is None else mean
    q_sqrt = spec.q_sqrt_init if spec.q_sqrt_init is not None else (1.0 if terminal else INNER_Q_SQRT)
    return SVGPLayer(kernel, inducing, mean, out_dim, spec.whitening, q_sqrt=q_sqrt)


def build_layer(spec: LayerSpec, Z, out_dim: int, terminal: bool, rng: np.random.Generator):
    if spec.mixing == "shared":
        return _single_layer(spec, Z, out_dim, terminal, rng)
    if spec.mixing == "separate":
        in_dim = Z.shape[1]
        parts = []
        for j in range(out_dim):
            if terminal or spec.mean not in ("auto", "identity", "linear"):
                mean = _mean("zero" if spec.mean == "auto" else spec.mean, in_dim, 1, True)
            else:
                mean = Linear(in_dim, 1, A=torch.eye(out_dim, in_dim, dtype=DTYPE)[j : j + 1])
            parts.append(_single_layer(spec, Z, 1, terminal, rng, mean=mean))
        return SeparateIndependent(parts)
    if spec.mixing == "lmc":
        D_g = spec.lmc_latent or out_dim
        latent = _single_layer(spec, Z, D_g, True, rng, mean=Zero(Z.shape[1], D_g))
        return LMC(latent, init_lmc_weights(out_dim, D_g, rng))
    raise ConfigError(f"unknown mixing {spec.mixing!r}")


def _mean_image(layer, Z) -> np.ndarray:
    """Where the prior mean of ``layer`` sends the points Z; seeds the next layer's inducing inputs."""
    with torch.no_grad():
        if isinstance(layer, SVGPLayer):
            return layer.mean(as_tensor(Z)).numpy()
        if isinstance(layer, SeparateIndependent):
            return np.concatenate([_mean_image(l, Z) for l in layer.sublayers], 1)
    out = np.zeros((Z.shape[0], layer.out_dim))
    k = min(Z.shape[1], layer.out_dim)
    out[:, :k] = Z[:, :k]
    return out


def build_model(spec: ModelSpec, X, y, seed: int = 0) -> DeepGP:
    """Fresh model whose first-layer inducing points are a seeded subset of X."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y = y[:, None] if y.ndim == 1 else y
    N, d = X.shape
    if spec.likelihood not in LIKELIHOODS:
        raise ConfigError(f"unknown likelihood {spec.likelihood!r}")
    lik_cls = LIKELIHOODS[spec.likelihood]
    lik = lik_cls(spec.likelihood_variance) if spec.likelihood == "gaussian" else lik_cls()
    final_dim = lik.latent_dim(y.shape[1])
    rng = np.random.default_rng([seed, 1])
    layers = []
    M0 = spec.layers[0].num_inducing
    Z = init_inducing_points(X, M0, rng).numpy() if d else np.zeros((M0, 0))
    if spec.latent_dim:
        Z = np.concatenate([Z, rng.standard_normal((M0, spec.latent_dim))], 1)
    for l, lspec in enumerate(spec.layers):
        terminal = l == len(spec.layers) - 1
        out_dim = final_dim if terminal else lspec.output_dim
        if out_dim is None:
            raise ConfigError(f"layer {l + 1} needs output_dim")
        if terminal and lspec.output_dim not in (None, final_dim):
            raise ConfigError(f"last layer must output {final_dim} latent values for this likelihood")
        if l > 0 and lspec.num_inducing != Z.shape[0]:
            Zl = init_inducing_points(Z, lspec.num_inducing, rng).numpy()
        else:
            Zl = Z
        layer = build_layer(lspec, Zl, out_dim, terminal, rng)
        layers.append(layer)
        if not terminal:
            Z = _mean_image(layer, Zl)
    table = None
    if spec.latent_dim:
        means = spec.latent_mean_init * rng.standard_normal((N, spec.latent_dim))
        table = LatentPosteriorTable(N, spec.latent_dim, means, torch.full((N, spec.latent_dim), spec.latent_scale_init, dtype=DTYPE))
    return DeepGP(layers, lik, spec.latent_dim, d, table)


# ---------------------------------------------------------------------------
# rebuilding from a recorded topology


def _kernel_from(cfg):
    return KERNELS[cfg["family"]](cfg["input_dim"])


def _mean_from(cfg):
    cls = MEANS[cfg["kind"]]
    return cls(cfg["input_dim"], cfg["output_dim"])


def _inducing_from(cfg):
    Z = torch.zeros(cfg["M"], cfg["input_dim"], dtype=DTYPE)
    if cfg["kind"] == "dirac":
        return InducingPoints(Z)
    if cfg["kind"] == "derivative":
        return DerivativeFeatures(Z, cfg["dims"])
    raise ConfigError(f"unknown inducing kind {cfg['kind']!r}")


def layer_from_topology(cfg):
    t = cfg["type"]
    if t == "svgp":
        return SVGPLayer(_kernel_from(cfg["kernel"]), _inducing_from(cfg["inducing"]), _mean_from(cfg["mean"]),
                         cfg["output_dim"], cfg["whitening"])
    if t == "separate":
        return SeparateIndependent([layer_from_topology(c) for c in cfg["layers"]])
    if t == "lmc":
        latent = layer_from_topology(cfg["latent"])
        return LMC(latent, torch.zeros(cfg["output_dim"], latent.out_dim, dtype=DTYPE))
    raise ConfigError(f"unknown layer type {t!r}")


def model_from_topology(cfg) -> DeepGP:
    layers = [layer_from_topology(c) for c in cfg["layers"]]
    lik = LIKELIHOODS[cfg["likelihood"]["kind"]]()
    table = None
    if cfg["latent_dim"]:
        table = LatentPosteriorTable(cfg["num_data"], cfg["latent_dim"])
    return DeepGP(layers, lik, cfg["latent_dim"], cfg["data_dim"], table)
