"""Gradients, finite-difference audits, Adam and the minibatch training loop.

Everything here maximizes: gradients are ascent directions for the ELBO.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .deep import DeepGP, IWConfig, deep_elbo, iw_lv_elbo, lv_elbo
from .errors import DivergenceError, NonFiniteError
from .gauss import as_tensor, record_jitter
from .params import GENERATIVE, ParameterSet
from .rng import CounterRNG

logger = logging.getLogger(__name__)

OBJECTIVES = ("elbo", "deep", "lv", "iw_lv")
SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int | None = None  # None -> min(N, 256)
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    freeze_generative_steps: int = 500
    seed: int = 0
    n_mc: int = 1
    iw: IWConfig | None = None
    objective: str = "elbo"
    schedule: str = "constant"  # constant | cosine (anneals the rate to 0 at the last step)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.n_mc < 1:
            raise ValueError("n_mc must be at least 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def rate(self, step: int) -> float:
        if self.schedule == "cosine":
            return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * step / self.steps))
        return self.learning_rate


def make_objective(model: DeepGP, X, y, kind: str, n_mc: int = 1, iw: IWConfig | None = None,
                   seed: int = 0, kl_estimator: str = "analytic") -> Callable:
    """Return ``f(idx, step) -> ELBO estimate`` on the rows ``idx`` of (X, y)."""
    X, y = as_tensor(X), as_tensor(y)
    if y.ndim == 1:
        y = y[:, None]
    N = X.shape[0]
    rng = CounterRNG(seed)

    def objective(idx=None, step: int = 0) -> torch.Tensor:
        idx = np.arange(N) if idx is None else np.asarray(idx)
        Xb, yb = X[idx], y[idx]
        stream = rng.stream(step)
        if kind in ("elbo", "deep"):
            return deep_elbo(model, Xb, yb, idx, N, stream, n_mc)
        if kind == "lv":
            return lv_elbo(model, Xb, yb, idx, N, stream, n_mc, kl_estimator=kl_estimator)
        if kind == "iw_lv":
            return iw_lv_elbo(model, Xb, yb, idx, N, stream, iw or IWConfig())
        raise ValueError(f"unknown objective {kind!r}")

    return objective


def grad(objective: Callable[[], torch.Tensor], params: ParameterSet) -> tuple[torch.Tensor, dict]:
    """Value and gradient of a (seeded, hence deterministic) objective w.r.t. every raw parameter."""
    names = list(params)
    tensors = [params[n] for n in names]
    with torch.enable_grad():
        value = objective()
        if not bool(torch.isfinite(value)):
            raise NonFiniteError("objective is not finite")
        if value.requires_grad:
            gs = torch.autograd.grad(value, tensors, allow_unused=True)
        else:
            gs = [None] * len(tensors)
    out = {}
    for n, t, g in zip(names, tensors, gs):
        g = torch.zeros_like(t) if g is None else g.detach()
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteError(f"gradient of {n} is not finite", name=n)
        out[n] = g
    return value.detach(), out


@dataclass
class AuditReport:
    max_rel_err: float
    worst: str
    worst_index: int
    per_param: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err <= tol


def fd_audit(objective: Callable[[], torch.Tensor], params: ParameterSet, h: float = 1e-5,
             floor: float = 1e-6) -> AuditReport:
    """Compare autograd gradients against central differences, entry by entry.

    The relative error of an entry is |g_ad - g_fd| / max(|g_ad|, |g_fd|, floor).
    """
    _, analytic = grad(objective, params)
    worst = (0.0, "", -1)
    per_param = {}
    with torch.no_grad():
        for name in params:
            p = params[name]
            flat = p.view(-1)
            g = analytic[name].reshape(-1)
            errs = []
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(objective())
                flat[i] = orig - h
                down = float(objective())
                flat[i] = orig
                fd = (up - down) / (2 * h)
                ad = float(g[i])
                err = abs(ad - fd) / max(abs(ad), abs(fd), floor)
                errs.append(err)
                if err > worst[0]:
                    worst = (err, name, i)
            per_param[name] = max(errs) if errs else 0.0
    return AuditReport(worst[0], worst[1], worst[2], per_param)


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(values: dict, grads: dict, state: AdamState, config: TrainConfig,
              lr: float | None = None) -> tuple[dict, AdamState]:
    """One bias-corrected Adam ascent step; returns new values and state."""
    lr = config.learning_rate if lr is None else lr
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_values, m_new, v_new = {}, {}, {}
    for name, x in values.items():
        g = grads[name]
        m = b1 * state.m.get(name, torch.zeros_like(x)) + (1 - b1) * g
        v = b2 * state.v.get(name, torch.zeros_like(x)) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_values[name] = x + lr * m_hat / (torch.sqrt(v_hat) + config.eps)
        m_new[name], v_new[name] = m, v
    return new_values, AdamState(t, m_new, v_new)


@dataclass
class TraceRow:
    step: int
    elbo: float
    jitter_events: int
    wall_ms: float


@dataclass
class FitResult:
    model: DeepGP
    trace: list

    @property
    def elbos(self) -> np.ndarray:
        return np.array([r.elbo for r in self.trace])


def minibatches(N: int, batch_size: int, seed: int):
    """Endless stream of index arrays: a seeded reshuffle per epoch, consecutive slices within it."""
    epoch = 0
    while True:
        order = np.random.default_rng([seed, epoch]).permutation(N)
        for start in range(0, N, batch_size):
            yield order[start : start + batch_size]
        epoch += 1


def fit(model: DeepGP, X, y, config: TrainConfig, callback: Callable | None = None) -> FitResult:
    """Maximize the configured objective with Adam; mutates and returns ``model``."""
    X = as_tensor(X)
    N = X.shape[0]
    if N == 0:
        raise ValueError("training data is empty")
    batch_size = min(N, 256) if config.batch_size is None else min(config.batch_size, N)
    objective = make_objective(model, X, y, config.objective, config.n_mc, config.iw, config.seed)
    params = ParameterSet(model)
    generative = set(params.names(GENERATIVE))
    state = AdamState()
    trace = []
    bad_streak = 0
    batches = minibatches(N, batch_size, config.seed)
    for step in range(config.steps):
        idx = next(batches)
        t0 = time.perf_counter()
        with record_jitter() as events:
            try:
                value, grads = grad(lambda: objective(idx, step), params)
            except NonFiniteError as err:
                value, grads = torch.tensor(math.nan), None
                logger.warning("step %d: %s", step, err)
        elbo_value = float(value)
        if grads is None:
            bad_streak += 1
            if bad_streak >= 10:
                raise DivergenceError(f"ELBO estimate non-finite for 10 consecutive steps (last step {step})")
        else:
            bad_streak = 0
            if step < config.freeze_generative_steps:
                for name in generative:
                    grads[name] = torch.zeros_like(grads[name])
            new_values, state = adam_step(params.values(), grads, state, config, config.rate(step))
            params.load(new_values)
        row = TraceRow(step, elbo_value, len(events), (time.perf_counter() - t0) * 1e3)
        trace.append(row)
        if callback is not None:
            callback(row)
    return FitResult(model, trace)
