"""Digit images: 8x8 grey levels scaled to [0, 1] with labels 0-9."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import ConfigError

N_FEATURES = 64
MAX_LEVEL = 16.0


def load_digits_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Rows of 64 grey levels (0-16) followed by the label."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != N_FEATURES + 1:
                raise ConfigError(f"{path}: line {lineno}: expected {N_FEATURES + 1} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ConfigError(f"{path}: line {lineno}: non-numeric value") from None
    if not rows:
        raise ConfigError(f"{path}: no samples")
    data = np.asarray(rows)
    return _check(data[:, :N_FEATURES] / MAX_LEVEL, data[:, N_FEATURES])


def load_digits_builtin() -> tuple[np.ndarray, np.ndarray]:
    """The 1797-sample 8x8 digits set shipped with scikit-learn."""
    from sklearn.datasets import load_digits

    d = load_digits()
    return _check(d.data / MAX_LEVEL, d.target)


def load_dataset(path: str | Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    return load_digits_csv(path) if path else load_digits_builtin()


def _check(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.min() < 0 or x.max() > 1:
        raise ConfigError("pixel values must lie in [0, 16]")
    labels = y.astype(np.int64)
    if (labels != y).any() or labels.min() < 0 or labels.max() > 9:
        raise ConfigError("labels must be integers 0-9")
    return x, labels
