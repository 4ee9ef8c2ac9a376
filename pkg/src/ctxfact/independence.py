"""Context-independence diagnostics via Kullback-Leibler divergence.

Quantifies how much one context column tells about another: the average
divergence of the conditional distributions from the marginal. Near-zero
averages mean the columns are close to independent and modeling their
interaction is unlikely to help.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataspace import TransactionTable
from .errors import ConfigError
from .validation import check_choice, check_nonnegative

UNIFORM = "uniform"
SUPPORT_WEIGHTED = "support-weighted"


@dataclass(frozen=True)
class ContextDistributions:
    """Empirical distributions of column c1, marginal and conditional on c2."""

    states1: tuple[str, ...]
    states2: tuple[str, ...]
    marginal: np.ndarray
    conditionals: np.ndarray  # state of c2 per row, distribution over c1 states
    support2: np.ndarray  # raw occurrence counts per c2 state


def estimate_distributions(
    table: TransactionTable, c1: str, c2: str, smoothing_eps: float = 1e-9
) -> ContextDistributions:
    """Maximum-likelihood P(C1) and P(C1 | C2=j) with additive smoothing.

    ``smoothing_eps`` pseudo-counts are added to every cell before
    renormalizing; each returned vector sums to 1.
    """
    check_nonnegative("smoothing_eps", smoothing_eps)
    if len(table) == 0:
        raise ConfigError("cannot estimate distributions from an empty table")
    col1 = table.column(c1)
    col2 = table.column(c2)

    states1: dict[str, int] = {}
    states2: dict[str, int] = {}
    for v in col1:
        states1.setdefault(v, len(states1))
    for v in col2:
        states2.setdefault(v, len(states2))
    s1, s2 = len(states1), len(states2)

    joint = np.zeros((s2, s1))
    for v1, v2 in zip(col1, col2):
        joint[states2[v2], states1[v1]] += 1.0

    support2 = joint.sum(axis=1)
    marginal = joint.sum(axis=0) + smoothing_eps
    marginal /= marginal.sum()
    conditionals = joint + smoothing_eps
    row_sums = conditionals.sum(axis=1, keepdims=True)
    if np.any(row_sums == 0):
        raise ConfigError("a conditional distribution has no mass; use smoothing_eps > 0")
    conditionals /= row_sums

    return ContextDistributions(
        states1=tuple(states1),
        states2=tuple(states2),
        marginal=marginal,
        conditionals=conditionals,
        support2=support2,
    )


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """D_KL(p || q) in nats; zero p cells contribute nothing.

    Raises when p puts mass where q has none (the caller must smooth).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] == 0):
        raise ConfigError("divergence is infinite: zero-probability cell in the reference")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def avg_kl_divergence(
    table: TransactionTable,
    c1: str,
    c2: str,
    smoothing_eps: float = 1e-9,
    averaging: str = SUPPORT_WEIGHTED,
) -> float:
    """Average divergence of P(C1 | C2=j) from P(C1) over the states j.

    ``support-weighted`` weights each state by its empirical frequency;
    ``uniform`` averages plainly. Small values mean the marginal can
    stand in for the conditionals, i.e. C2 carries little information
    about C1.
    """
    check_choice("averaging", averaging, (UNIFORM, SUPPORT_WEIGHTED))
    dists = estimate_distributions(table, c1, c2, smoothing_eps)
    divergences = np.array(
        [kl_divergence(row, dists.marginal) for row in dists.conditionals]
    )
    if averaging == UNIFORM:
        return float(divergences.mean())
    weights = dists.support2 / dists.support2.sum()
    return float(divergences @ weights)


def context_divergence_table(
    table: TransactionTable,
    columns: list[str] | None = None,
    smoothing_eps: float = 1e-9,
    averaging: str = SUPPORT_WEIGHTED,
) -> list[tuple[str, str, float]]:
    """Average divergences for all ordered column pairs, self-pairs included."""
    if columns is None:
        columns = list(table.context_columns)
    if not columns:
        raise ConfigError("no context columns to analyze")
    out = []
    for c1 in columns:
        for c2 in columns:
            out.append((c1, c2, avg_kl_divergence(table, c1, c2, smoothing_eps, averaging)))
    return out
