"""Input validation helpers shared by the public entry points."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigError


def check_positive_int(name, value):
    """Return ``value`` as int, requiring an integer >= 1."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if value < 1:
        raise ConfigError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_nonnegative(name, value):
    """Return ``value`` as float, requiring a finite number >= 0."""
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ConfigError(f"{name} must be finite and >= 0, got {value}")
    return value


def check_choice(name, value, choices):
    """Require ``value`` to be one of ``choices``."""
    if value not in choices:
        options = ", ".join(repr(c) for c in choices)
        raise ConfigError(f"{name} must be one of {options}, got {value!r}")
    return value


def check_columns_exist(available, requested, what="column"):
    """Require every requested column name to exist."""
    available = set(available)
    for name in requested:
        if name not in available:
            raise ConfigError(f"unknown {what} {name!r}")


def check_index_tuples(indices, sizes):
    """Validate index tuples against dimension sizes.

    Accepts a single tuple or an (n, n_dims) array-like; returns an int64
    array of shape (n, n_dims).
    """
    arr = np.asarray(indices)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != len(sizes):
        raise ConfigError(
            f"expected index tuples with {len(sizes)} entries, got shape {arr.shape}"
        )
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ConfigError("index tuples must be integers")
        arr = arr.astype(np.int64)
    arr = arr.astype(np.int64, copy=False)
    for j, size in enumerate(sizes):
        col = arr[:, j]
        if col.size and (col.min() < 0 or col.max() >= size):
            raise ConfigError(
                f"index out of range for dimension {j}: valid range is [0, {size})"
            )
    return arr
