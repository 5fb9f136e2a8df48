"""Dataset tables and model checkpoints on disk.

Datasets are comma-separated with a header ``x0,...,x{d-1},y0,...,y{k-1}``.
Checkpoints are JSON documents; floats are written with ``repr`` so every raw
parameter survives a save/load cycle bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .deep import DeepGP
from .errors import CheckpointVersionError, DataError
from .gauss import DTYPE
from .models import model_from_topology
from .params import ParameterSet

CHECKPOINT_FORMAT = "svgp-checkpoint"
CHECKPOINT_VERSION = 1
CHECKPOINT_FIELDS = {"format", "version", "topology", "whitening", "parameters", "seed", "lineage", "step"}

_COLUMN = re.compile(r"^([xy])(\d+)$")


@dataclass
class Dataset:
    X: np.ndarray  # (N, d)
    y: np.ndarray | None  # (N, k), None when the file carries no targets

    @property
    def N(self) -> int:
        return self.X.shape[0]


def _column_groups(header: list[str], path) -> dict[str, list[int]]:
    groups = {"x": {}, "y": {}}
    for pos, name in enumerate(header):
        m = _COLUMN.match(name.strip())
        if m is None:
            raise DataError(f"{path}: unrecognized column {name.strip()!r} (expected x<i> or y<i>)")
        kind, i = m.group(1), int(m.group(2))
        if i in groups[kind]:
            raise DataError(f"{path}: duplicate column {kind}{i}")
        groups[kind][i] = pos
    out = {}
    for kind, cols in groups.items():
        for i in range(len(cols)):
            if i not in cols:
                raise DataError(f"{path}: missing column {kind}{i}")
        out[kind] = [cols[i] for i in range(len(cols))]
    return out


def read_dataset(path, require_y: bool = True) -> Dataset:
    """Parse a dataset table; errors name the offending column or row (1-based, header is row 1)."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as err:
        raise DataError(f"{path}: cannot read dataset ({err})") from err
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file, expected a header row")
    groups = _column_groups(rows[0], path)
    if require_y and not groups["y"]:
        raise DataError(f"{path}: missing column y0")
    width = len(rows[0])
    values = np.empty((len(rows) - 1, width))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: row {r} has {len(row)} cells, header has {width}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {rows[0][c].strip()}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r}, column {rows[0][c].strip()}: non-finite value {cell!r}")
            values[r - 2, c] = v
    if values.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    X = values[:, groups["x"]]
    y = values[:, groups["y"]] if groups["y"] else None
    return Dataset(X, y)


def check_binary(y: np.ndarray, path="") -> None:
    bad = np.argwhere((y != 0) & (y != 1))
    if bad.size:
        r, c = bad[0]
        raise DataError(f"{path}: row {r + 2}, column y{c}: Bernoulli target must be 0 or 1, got {y[r, c]!r}")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_table(path, columns: dict[str, np.ndarray]) -> None:
    """Write named 1-D columns as a comma-separated table with LF line endings."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=np.float64).reshape(-1) for n in names])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_dataset(path, X, y=None) -> None:
    X = np.asarray(X, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    cols = {f"x{i}": X[:, i] for i in range(X.shape[1])}
    if y is not None:
        y = np.asarray(y, dtype=np.float64)
        y = y[:, None] if y.ndim == 1 else y
        cols.update({f"y{i}": y[:, i] for i in range(y.shape[1])})
    write_table(path, cols)


# ---------------------------------------------------------------------------
# checkpoints


def _whitening_modes(topology: dict) -> list:
    def modes(cfg):
        if cfg["type"] == "svgp":
            return cfg["whitening"]
        if cfg["type"] == "separate":
            return [modes(c) for c in cfg["layers"]]
        return modes(cfg["latent"])

    return [modes(c) for c in topology["layers"]]


def checkpoint_dict(model: DeepGP, seed: int = 0, step: int = 0, lineage: dict | None = None) -> dict:
    topology = model.config()
    params = ParameterSet(model)
    tensors = {}
    for name in params:
        t = params[name].detach()
        tensors[name] = {"shape": list(t.shape), "data": [float(v) for v in t.reshape(-1).tolist()]}
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "topology": topology,
        "whitening": _whitening_modes(topology),
        "parameters": tensors,
        "seed": int(seed),
        "lineage": lineage or {},
        "step": int(step),
    }


def dumps_checkpoint(model: DeepGP, seed: int = 0, step: int = 0, lineage: dict | None = None) -> str:
    doc = checkpoint_dict(model, seed, step, lineage)
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_checkpoint(path, model: DeepGP, seed: int = 0, step: int = 0, lineage: dict | None = None) -> None:
    Path(path).write_text(dumps_checkpoint(model, seed, step, lineage), encoding="utf-8")


@dataclass
class Checkpoint:
    model: DeepGP
    seed: int
    step: int
    lineage: dict


def checkpoint_from_dict(doc: dict) -> Checkpoint:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointVersionError("not a model checkpoint (missing or wrong 'format')")
    version = doc.get("version")
    if not isinstance(version, int) or version < 1:
        raise CheckpointVersionError(f"invalid checkpoint version {version!r}")
    if version > CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} is newer than supported version {CHECKPOINT_VERSION}"
        )
    unknown = sorted(set(doc) - CHECKPOINT_FIELDS)
    if unknown:
        raise CheckpointVersionError(f"unknown checkpoint fields for version {version}: {', '.join(unknown)}")
    missing = sorted(CHECKPOINT_FIELDS - set(doc))
    if missing:
        raise CheckpointVersionError(f"checkpoint is missing fields: {', '.join(missing)}")
    model = model_from_topology(doc["topology"])
    params = ParameterSet(model)
    stored = doc["parameters"]
    if set(stored) != set(params):
        diff = sorted(set(stored) ^ set(params))
        raise CheckpointVersionError(f"checkpoint parameters do not match topology: {', '.join(diff)}")
    values = {}
    for name in params:
        entry = stored[name]
        t = torch.tensor(entry["data"], dtype=DTYPE).reshape(entry["shape"])
        if tuple(t.shape) != tuple(params[name].shape):
            raise CheckpointVersionError(
                f"parameter {name} has shape {tuple(t.shape)}, topology expects {tuple(params[name].shape)}"
            )
        values[name] = t
    params.load(values)
    return Checkpoint(model, doc["seed"], doc["step"], doc["lineage"])


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise CheckpointVersionError(f"{path}: not valid JSON ({err})") from err
    return checkpoint_from_dict(doc)
