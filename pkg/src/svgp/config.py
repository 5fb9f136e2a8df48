"""Run configuration: schema, loading and conversion to library specs.

Config files are YAML (JSON is valid YAML). Relative data and output paths
resolve against the config file's directory. Everything is validated before
any data is read or any model is built.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

from .deep import IWConfig
from .errors import ConfigError
from .models import LayerSpec, ModelSpec
from .train import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LayerSection(_Strict):
    num_inducing: PositiveInt = 20
    output_dim: Optional[PositiveInt] = None
    kernel_variance: PositiveFloat = 1.0
    lengthscales: Union[PositiveFloat, list[PositiveFloat]] = 1.0
    mean: Literal["auto", "zero", "constant", "linear", "identity"] = "auto"
    whitening: Literal["none", "mean", "full"] = "full"
    features: Literal["dirac", "derivative"] = "dirac"
    mixing: Literal["shared", "separate", "lmc"] = "shared"
    lmc_latent: Optional[PositiveInt] = None
    q_sqrt_init: Optional[PositiveFloat] = None


class ModelSection(_Strict):
    layers: list[LayerSection] = Field(default_factory=lambda: [LayerSection()], min_length=1)
    likelihood: Literal["gaussian", "bernoulli", "heteroscedastic"] = "gaussian"
    likelihood_variance: PositiveFloat = 0.1
    latent_dim: int = Field(0, ge=0)
    latent_mean_init: float = 0.0
    latent_scale_init: PositiveFloat = 1.0


class IWSection(_Strict):
    S: PositiveInt = 5
    outer_mc: PositiveInt = 1


class TrainSection(_Strict):
    steps: PositiveInt = 1000
    batch_size: Optional[PositiveInt] = None
    learning_rate: float = Field(0.01, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: PositiveFloat = 1e-8
    freeze_generative_steps: int = Field(500, ge=0)
    n_mc: PositiveInt = 1
    iw: Optional[IWSection] = None
    objective: Literal["elbo", "deep", "lv", "iw_lv"] = "elbo"
    schedule: Literal["constant", "cosine"] = "constant"


class DataSection(_Strict):
    train: str


class OutputSection(_Strict):
    checkpoint: str = "model.json"
    trace: str = "trace.csv"


class RunConfig(_Strict):
    data: DataSection
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    seed: int = Field(0, ge=0)
    output: OutputSection = Field(default_factory=OutputSection)
    base_dir: Path = Field(Path("."), exclude=True)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def model_spec(self) -> ModelSpec:
        m = self.model
        layers = [LayerSpec(**layer.model_dump()) for layer in m.layers]
        return ModelSpec(layers, m.likelihood, m.likelihood_variance, m.latent_dim, m.latent_mean_init,
                         m.latent_scale_init)

    def train_config(self) -> TrainConfig:
        t = self.train.model_dump(exclude={"iw"})
        iw = IWConfig(**self.train.iw.model_dump()) if self.train.iw else None
        return TrainConfig(**t, iw=iw, seed=self.seed)


def _describe(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(doc, base_dir=".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    if "base_dir" in doc:
        raise ConfigError("base_dir: extra inputs are not permitted")
    try:
        cfg = RunConfig(**doc, base_dir=Path(base_dir))
    except ValidationError as err:
        raise ConfigError(_describe(err)) from None
    if cfg.model.latent_dim and cfg.train.objective in ("elbo", "deep"):
        raise ConfigError("train.objective: latent_dim > 0 needs objective lv or iw_lv")
    if not cfg.model.latent_dim and cfg.train.objective in ("lv", "iw_lv"):
        raise ConfigError("train.objective: lv and iw_lv need model.latent_dim > 0")
    for i, layer in enumerate(cfg.model.layers[:-1]):
        if layer.output_dim is None:
            raise ConfigError(f"model.layers.{i}.output_dim: required for inner layers")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err})") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML ({err})") from err
    return parse_config(doc, path.parent)
