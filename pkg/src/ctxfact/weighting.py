"""Cell-weight schemes for the weighted squared loss.

Observed combinations carry weight w1, missing combinations w0. Three
modes are supported:

* ``implicit-simple``: w1 = alpha * count, w0 = 1 (requires alpha > 1 so
  observed cells strictly outweigh missing ones);
* ``implicit-factorized``: w1 = alpha * count, w0 factorized over the
  dimensions as a product of per-entity factors mu*v + gamma;
* ``explicit``: w1 = 1 over stored ratings, w0 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

IMPLICIT_SIMPLE = "implicit-simple"
IMPLICIT_FACTORIZED = "implicit-factorized"
EXPLICIT = "explicit"

MODES = (IMPLICIT_SIMPLE, IMPLICIT_FACTORIZED, EXPLICIT)


@dataclass(frozen=True, eq=False)
class WeightingScheme:
    """Weight assignment for observed and missing entity combinations.

    For the factorized mode, ``mu`` and ``gamma`` hold one constant per
    dimension and ``v`` holds an optional per-entity vector per dimension
    (``None`` reads as all-zero, making that dimension's factor the
    constant gamma). Each per-entity factor mu*v + gamma must be
    non-negative.
    """

    mode: str
    alpha: float = 40.0
    mu: tuple[float, ...] | None = None
    gamma: tuple[float, ...] | None = None
    v: tuple | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown weighting mode {self.mode!r}")
        if self.mode in (IMPLICIT_SIMPLE, IMPLICIT_FACTORIZED):
            if not self.alpha > 1.0:
                raise ConfigError(
                    f"alpha must exceed 1 so observed weights dominate, got {self.alpha}"
                )
        if self.mode == IMPLICIT_FACTORIZED:
            if self.mu is None or self.gamma is None:
                raise ConfigError("factorized weighting needs mu and gamma per dimension")
            mu = tuple(float(x) for x in self.mu)
            gamma = tuple(float(x) for x in self.gamma)
            if len(mu) != len(gamma):
                raise ConfigError("mu and gamma must have one entry per dimension")
            v = self.v
            if v is None:
                v = (None,) * len(mu)
            elif len(v) != len(mu):
                raise ConfigError("v must have one entry (or None) per dimension")
            v = tuple(None if x is None else np.asarray(x, dtype=np.float64) for x in v)
            object.__setattr__(self, "mu", mu)
            object.__setattr__(self, "gamma", gamma)
            object.__setattr__(self, "v", v)
            for j, (m, g, vec) in enumerate(zip(mu, gamma, v)):
                factors = g if vec is None else m * vec + g
                if np.any(np.asarray(factors) < 0):
                    raise ConfigError(f"dimension {j}: factor mu*v + gamma is negative")

    # -- constructors -------------------------------------------------

    @classmethod
    def implicit(cls, alpha: float = 40.0) -> "WeightingScheme":
        return cls(mode=IMPLICIT_SIMPLE, alpha=float(alpha))

    @classmethod
    def explicit(cls) -> "WeightingScheme":
        return cls(mode=EXPLICIT)

    @classmethod
    def factorized(cls, mu, gamma, v=None, alpha: float = 40.0) -> "WeightingScheme":
        return cls(
            mode=IMPLICIT_FACTORIZED,
            alpha=float(alpha),
            mu=tuple(mu),
            gamma=tuple(gamma),
            v=None if v is None else tuple(v),
        )

    # -- properties ---------------------------------------------------

    @property
    def has_missing_weight(self) -> bool:
        return self.mode != EXPLICIT

    @property
    def uses_ratings(self) -> bool:
        return self.mode == EXPLICIT

    # -- scalar weights -----------------------------------------------

    def observed_weight(self, count: int) -> float:
        if count < 1:
            raise ConfigError("observed count must be >= 1")
        if self.mode == EXPLICIT:
            return 1.0
        return self.alpha * count

    def missing_weight(self, indices) -> float:
        if self.mode == EXPLICIT:
            return 0.0
        if self.mode == IMPLICIT_SIMPLE:
            return 1.0
        out = 1.0
        for j, idx in enumerate(indices):
            out *= self._factor(j, idx)
        return out

    def _factor(self, dim: int, idx: int) -> float:
        vec = self.v[dim]
        vj = 0.0 if vec is None else float(vec[idx])
        return self.mu[dim] * vj + self.gamma[dim]

    # -- vectorized weights (used by the solver) -----------------------

    def observed_weights(self, counts: np.ndarray) -> np.ndarray:
        if self.mode == EXPLICIT:
            return np.ones(len(counts))
        return self.alpha * np.asarray(counts, dtype=np.float64)

    def missing_weights(self, tuples: np.ndarray) -> np.ndarray:
        n = len(tuples)
        if self.mode == EXPLICIT:
            return np.zeros(n)
        if self.mode == IMPLICIT_SIMPLE:
            return np.ones(n)
        out = np.ones(n)
        for j in range(tuples.shape[1]):
            vec = self.v[j]
            vj = 0.0 if vec is None else vec[tuples[:, j]]
            out *= self.mu[j] * vj + self.gamma[j]
        return out

    def differenced_weights(self, counts: np.ndarray, tuples: np.ndarray) -> np.ndarray:
        """w1 - w0 for observed cells, the correction weight of training."""
        return self.observed_weights(counts) - self.missing_weights(tuples)

    def dimension_factors(self, dim: int, size: int) -> np.ndarray:
        """Per-entity missing-weight factor of one dimension.

        All ones in the simple mode; mu*v + gamma in the factorized mode.
        """
        if self.mode == IMPLICIT_FACTORIZED:
            vec = self.v[dim]
            base = np.zeros(size) if vec is None else np.asarray(vec[:size], dtype=np.float64)
            if vec is not None and len(vec) < size:
                raise ConfigError(f"dimension {dim}: v has {len(vec)} entries, need {size}")
            return self.mu[dim] * base + self.gamma[dim]
        return np.ones(size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightingScheme):
            return NotImplemented
        if (self.mode, self.alpha, self.mu, self.gamma) != (
            other.mode,
            other.alpha,
            other.mu,
            other.gamma,
        ):
            return False
        if self.v is None or other.v is None:
            return self.v is other.v
        if len(self.v) != len(other.v):
            return False
        for a, b in zip(self.v, other.v):
            if a is None or b is None:
                if a is not b:
                    return False
            elif not np.array_equal(a, b):
                return False
        return True


def weight_observed(count: int, scheme: WeightingScheme) -> float:
    """Weight of an entity combination observed ``count`` times."""
    return scheme.observed_weight(count)


def weight_missing(indices, scheme: WeightingScheme) -> float:
    """Weight of a missing entity combination at the given indices."""
    return scheme.missing_weight(indices)
