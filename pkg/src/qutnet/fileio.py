"""CSV ingestion, model serialization and atomic file output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .network import Architecture, NetworkParams, shifted_softplus

__all__ = [
    "InputError",
    "Table",
    "read_table",
    "Standardizer",
    "atomic_write",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "format_float",
    "csv_text",
]

ACTIVATIONS = {shifted_softplus.name: shifted_softplus}


class InputError(ValueError):
    """Malformed user input (bad CSV cell, wrong width, unknown format)."""


def format_float(v: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(v))


@dataclass(frozen=True)
class Table:
    header: tuple[str, ...]
    values: np.ndarray  # (rows, columns)

    @property
    def features(self) -> np.ndarray:
        return self.values[:, :-1]

    @property
    def response(self) -> np.ndarray:
        return self.values[:, -1]


def read_table(path) -> Table:
    """Read a numeric CSV with a header row.

    Raises :class:`InputError` naming the line and column of the first bad
    cell; NaN and infinite values are rejected.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: empty file, a header row is required")
    header = tuple(h.strip() for h in rows[0])
    width = len(header)
    data = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != width:
            raise InputError(f"{path}: line {line} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: line {line}, column {j + 1} ({header[j]!r}): cannot parse {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise InputError(
                    f"{path}: line {line}, column {j + 1} ({header[j]!r}): non-finite value {cell!r}"
                )
            data[i, j] = v
    return Table(header, data)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        return cls(mean, np.where(scale > 0, scale, 1.0))

    def transform(self, x):
        return (x - self.mean) / self.scale


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _array_entry(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def model_to_dict(params: NetworkParams, arch: Architecture,
                  standardizer: Standardizer | None = None,
                  feature_names=None) -> dict:
    return {
        "format": "qutnet-model",
        "version": 1,
        "layer_widths": list(arch.layer_widths),
        "activation": arch.activation.name,
        "weights": [_array_entry(w) for w in params.weights],
        "biases": [_array_entry(b) for b in params.biases],
        "standardization": None if standardizer is None else {
            "mean": [float(v) for v in standardizer.mean],
            "scale": [float(v) for v in standardizer.scale],
        },
        "feature_names": None if feature_names is None else list(feature_names),
    }


def _array_from(entry) -> np.ndarray:
    shape = tuple(entry["shape"])
    data = np.asarray(entry["data"], dtype=float)
    if data.size != int(np.prod(shape)):
        raise InputError(f"array declares shape {shape} but holds {data.size} values")
    return data.reshape(shape)


def model_from_dict(d: dict):
    """Inverse of :func:`model_to_dict`; returns ``(params, arch, standardizer)``."""
    try:
        if d.get("format") != "qutnet-model":
            raise InputError("not a qutnet model file")
        activation = ACTIVATIONS[d["activation"]]
        arch = Architecture(tuple(d["layer_widths"]), activation)
        params = NetworkParams(
            tuple(_array_from(e) for e in d["weights"]),
            tuple(_array_from(e) for e in d["biases"]),
        )
        std = d.get("standardization")
        standardizer = None if std is None else Standardizer(
            np.asarray(std["mean"], dtype=float), np.asarray(std["scale"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed model file: {exc}") from exc
    try:
        params.check(arch)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return params, arch, standardizer


def save_model(path, params, arch, standardizer=None, feature_names=None) -> None:
    atomic_write(path, json.dumps(model_to_dict(params, arch, standardizer, feature_names), indent=1) + "\n")


def load_model(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load model {path}: {exc}") from exc
    return model_from_dict(d)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
