"""Command-line entry point: ``svgp fit | predict | gen-data | elbo``.

Exit codes: 0 success, 2 configuration or parameter errors, 3 data errors
(unparseable files, missing columns, shape mismatches), 4 numerical
divergence. Set SVGP_LOG to error, warn, info or debug for diagnostics.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np
import torch

from . import datasets
from .config import load_config
from .deep import IWConfig, predict_deep
from .errors import (
    ArityError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    DivergenceError,
    FactorizationError,
    MissingLatentRow,
    NonFiniteError,
    ShapeError,
)
from .files import check_binary, load_checkpoint, read_dataset, save_checkpoint, write_dataset, write_table
from .models import build_model
from .rng import CounterRNG
from .train import fit, make_objective

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

logger = logging.getLogger("svgp.cli")


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    name = os.environ.get("SVGP_LOG", "warn").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"SVGP_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("svgp")
    root.handlers[:] = [handler]
    root.setLevel(LOG_LEVELS[name])


def _check_input_dims(model, X, path) -> None:
    if X.shape[1] != model.data_dim:
        raise DataError(f"{path}: model expects {model.data_dim} input columns, file has {X.shape[1]}")


def _check_labels(model, y, path) -> None:
    expected = model.out_dim // model.likelihood.latent_per_label
    if y.shape[1] != expected:
        raise DataError(f"{path}: model expects {expected} target columns, file has {y.shape[1]}")
    if model.likelihood.kind == "bernoulli":
        check_binary(y, path)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    data_path = cfg.resolve(cfg.data.train)
    data = read_dataset(data_path)
    if cfg.model.likelihood == "bernoulli":
        check_binary(data.y, data_path)
    model = build_model(cfg.model_spec(), data.X, data.y, cfg.seed)
    train_cfg = cfg.train_config()
    result = fit(model, data.X, data.y, train_cfg)
    out = args.out or cfg.resolve(cfg.output.checkpoint)
    lineage = {"objective": train_cfg.objective, "init_seed": cfg.seed, "train_seed": train_cfg.seed}
    save_checkpoint(out, model, seed=cfg.seed, step=train_cfg.steps, lineage=lineage)
    trace_path = cfg.resolve(cfg.output.trace) if args.trace is None else args.trace
    write_table(trace_path, {
        "step": np.array([r.step for r in result.trace], dtype=float),
        "elbo": result.elbos,
        "wall_ms": np.array([r.wall_ms for r in result.trace]),
    })
    logger.info("wrote %s and %s", out, trace_path)
    return 0


def cmd_predict(args) -> int:
    if args.paths < 1:
        raise UsageError("--paths must be at least 1")
    ckpt = load_checkpoint(args.model)
    model = ckpt.model
    data = read_dataset(args.data, require_y=False)
    _check_input_dims(model, data.X, args.data)
    y = data.y
    if args.density_at is not None:
        dens = read_dataset(args.density_at, require_y=True)
        if dens.N != data.N:
            raise DataError(f"{args.density_at}: has {dens.N} rows, {args.data} has {data.N}")
        y = dens.y
    if y is not None:
        _check_labels(model, y, args.density_at or args.data)
    pred = predict_deep(model, data.X, n_paths=args.paths, rng=CounterRNG(args.seed))
    cols = {}
    mean, var = pred.mean.numpy(), pred.var.numpy()
    for i in range(mean.shape[1]):
        cols[f"mean{i}"] = mean[:, i]
    for i in range(var.shape[1]):
        cols[f"var{i}"] = var[:, i]
    if y is not None:
        cols["log_density"] = pred.log_density(torch.as_tensor(y)).numpy()
    if args.out:
        write_table(args.out, cols)
    else:
        _write_stdout(cols)
    return 0


def _write_stdout(cols) -> None:
    names = list(cols)
    sys.stdout.write(",".join(names) + "\n")
    for row in np.column_stack([cols[n] for n in names]):
        sys.stdout.write(",".join(repr(float(v)) for v in row) + "\n")
    sys.stdout.flush()


def _prior_draw(args) -> None:
    if args.depth not in (1, 2, 4, 8):
        raise UsageError("--depth must be one of 1, 2, 4, 8")
    if args.draws < 1 or args.grid_points < 2:
        raise UsageError("--draws must be >= 1 and --grid-points >= 2")
    grid = np.linspace(0.0, 10.0, args.grid_points)
    F = datasets.prior_draws(grid, args.depth, args.draws, lengthscale=args.lengthscale, seed=args.seed)
    write_dataset(args.out, grid, F.T)


def cmd_gen_data(args) -> int:
    kind = args.kind
    if args.noise is not None and args.noise < 0:
        raise UsageError("--noise must be nonnegative")
    try:
        if kind == "prior-draw":
            _prior_draw(args)
            return 0
        if kind == "letters":
            X, y = datasets.letters(args.text, args.scale, args.noise if args.noise is not None else 0.0, args.seed)
        elif kind == "steps":
            if args.n < 1 or args.n_steps < 1:
                raise UsageError("--n and --n-steps must be at least 1")
            X, y = datasets.steps(args.n, args.n_steps, 0.05 if args.noise is None else args.noise, seed=args.seed)
        else:
            if args.n < 1 or args.gap < 0:
                raise UsageError("--n must be >= 1 and --gap >= 0")
            X, y = datasets.mixture(args.n, args.gap, 0.1 if args.noise is None else args.noise, seed=args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None
    write_dataset(args.out, X, y)
    return 0


def cmd_elbo(args) -> int:
    if args.mc < 1 or args.S < 1 or args.n_mc < 1:
        raise UsageError("--mc, --S and --n-mc must be at least 1")
    ckpt = load_checkpoint(args.model)
    model = ckpt.model
    data = read_dataset(args.data)
    _check_input_dims(model, data.X, args.data)
    _check_labels(model, data.y, args.data)
    if model.latent_dim and args.objective in ("elbo", "deep"):
        raise UsageError(f"--objective {args.objective} does not apply to a latent-variable model")
    if not model.latent_dim and args.objective in ("lv", "iw_lv"):
        raise UsageError(f"--objective {args.objective} needs a latent-variable model")
    objective = make_objective(model, data.X, data.y, args.objective, n_mc=args.n_mc,
                               iw=IWConfig(S=args.S), seed=args.seed, kl_estimator=args.kl_estimator)
    with torch.no_grad():
        values = np.array([float(objective(None, step)) for step in range(args.mc)])
    if not np.isfinite(values).all():
        raise DivergenceError("objective estimate is not finite")
    se = values.std(ddof=1) / math.sqrt(len(values)) if len(values) > 1 else 0.0
    print(f"{repr(float(values.mean()))} {repr(float(se))}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svgp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="train a model from a YAML/JSON run config")
    f.add_argument("--config", required=True)
    f.add_argument("--out", help="checkpoint path (default: output.checkpoint from the config)")
    f.add_argument("--trace", help="trace path (default: output.trace from the config)")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser(
        "predict",
        help="pooled predictive summaries per row",
        description="Writes columns mean<i>, var<i> (label-space predictive mean and variance, pooled over "
                    "sample paths) and, when targets are available from --data or --density-at, log_density "
                    "(log of the path-mixture predictive density at those targets).",
    )
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--paths", type=int, default=1, help="number of sample paths through the stack")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--density-at", help="dataset whose y columns give the targets for log_density")
    pr.add_argument("--out", help="output path (default: stdout)")
    pr.set_defaults(func=cmd_predict)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--kind", required=True, choices=["steps", "mixture", "letters", "prior-draw"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=500, help="steps/mixture: number of points")
    g.add_argument("--noise", type=float, help="observation noise sd (letters: pixel jitter)")
    g.add_argument("--n-steps", type=int, default=4, help="steps: number of constant pieces")
    g.add_argument("--gap", type=float, default=2.0, help="mixture: vertical distance between branches")
    g.add_argument("--text", default="DGP", help="letters: string to rasterize")
    g.add_argument("--scale", type=int, default=1, help="letters: points per pixel side")
    g.add_argument("--depth", type=int, default=1, help="prior-draw: number of layers (1, 2, 4, 8)")
    g.add_argument("--draws", type=int, default=1, help="prior-draw: number of samples, one y column each")
    g.add_argument("--grid-points", type=int, default=200, help="prior-draw: points on [0, 10]")
    g.add_argument("--lengthscale", type=float, default=0.7, help="prior-draw: RBF lengthscale")
    g.set_defaults(func=cmd_gen_data)

    e = sub.add_parser("elbo", help="evaluate an objective; prints mean and standard error")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--objective", required=True, choices=["elbo", "deep", "lv", "iw_lv"])
    e.add_argument("--S", type=int, default=5, help="iw_lv: importance samples")
    e.add_argument("--mc", type=int, default=1, help="independent repetitions of the estimator")
    e.add_argument("--n-mc", type=int, default=1, help="inner Monte Carlo samples per repetition")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--kl-estimator", choices=["analytic", "sample"], default="analytic",
                   help="lv: closed-form or single-sample latent KL")
    e.set_defaults(func=cmd_elbo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, ArityError, MissingLatentRow, CheckpointVersionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NonFiniteError, FactorizationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
