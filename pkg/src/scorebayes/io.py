"""Dataset CSV ingestion and deterministic result serialization."""
import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, NonFiniteEvaluation


@dataclass
class Dataset:
    """``n x m`` numeric table with column names; ``y`` split out when present."""

    values: np.ndarray
    columns: tuple

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    def column(self, name):
        return self.values[:, self.columns.index(name)]

    @property
    def y(self) -> Optional[np.ndarray]:
        return self.column("y") if "y" in self.columns else None

    @property
    def X(self) -> Optional[np.ndarray]:
        if "y" not in self.columns:
            return None
        keep = [j for j, c in enumerate(self.columns) if c != "y"]
        return self.values[:, keep]


def read_dataset(path):
    """Read a headed numeric CSV. Parse failures and NaN cells raise :class:`ConfigError`."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}", "read_dataset") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ConfigError(f"{path}: missing header", "read_dataset")
        columns = tuple(h.strip() for h in header)
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise ConfigError(f"{path}: line {lineno}: expected {len(columns)} fields, got {len(row)}",
                                  "read_dataset")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}", "read_dataset") from exc
            if not all(math.isfinite(v) for v in vals):
                raise ConfigError(f"{path}: line {lineno}: non-finite cell", "read_dataset")
            rows.append(vals)
    if not rows:
        raise ConfigError(f"{path}: empty dataset", "read_dataset")
    return Dataset(np.array(rows, dtype=float), columns)


def write_dataset(path, dataset):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(dataset.columns) + "\n")
        for row in dataset.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def csv_text(header, rows):
    """CSV text with shortest round-trip float rendering."""
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(v if isinstance(v, str) else
                            str(v) if isinstance(v, (int, np.integer)) else repr(float(v))
                            for v in row))
    return "\n".join(out) + "\n"


def to_jsonable(obj, path="result"):
    """Convert numpy containers to plain JSON types, rejecting non-finite numbers."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v, f"{path}.{k}") for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist(), path)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise NonFiniteEvaluation(f"non-finite value at {path}", "write_results")
        return v
    return obj


def json_text(obj):
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"
