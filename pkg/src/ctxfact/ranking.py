"""Scoring, top-N recommendation, and recall evaluation.

Queries fix an entity for every dimension except the target (item)
dimension; scoring computes the target-dependent coefficient vector once
and sweeps the item matrix in one pass. Out-of-vocabulary entities read
as zero feature vectors, so their terms contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataspace import START_SENTINEL, TransactionTable
from .errors import ConfigError
from .solver import FactorModel

OOV = -1


@dataclass(frozen=True)
class Query:
    """Fixed entity indices for every dimension except the target one.

    An index of -1 marks an out-of-vocabulary entity.
    """

    fixed_indices: Mapping[str, int]
    target_dimension: str
    n: int = 20


def predict(factor_model: FactorModel, indices: Sequence[int]) -> float:
    """Predicted preference for one full index tuple."""
    fm = factor_model
    if len(indices) != len(fm.dim_names):
        raise ConfigError(
            f"expected {len(fm.dim_names)} indices, got {len(indices)}"
        )
    total = 0.0
    for term, weight in zip(fm.model.terms, fm.model.term_weights):
        prod = np.ones(fm.k)
        for name in term:
            j = fm.dim_index(name)
            idx = int(indices[j])
            if idx == OOV:
                prod = None
                break
            prod = prod * fm.matrices[j][:, idx]
        if prod is not None:
            total += weight * float(prod.sum())
    return total


def score_items(
    factor_model: FactorModel,
    fixed_indices: Mapping[str, int],
    target_dimension: str,
) -> np.ndarray:
    """Scores for every entity of the target dimension under fixed context."""
    fm = factor_model
    target = fm.dim_index(target_dimension)
    for name in fm.dim_names:
        if name == target_dimension:
            if name in fixed_indices:
                raise ConfigError(f"target dimension {name!r} must not be fixed")
            continue
        if name not in fixed_indices:
            raise ConfigError(f"no entity fixed for dimension {name!r}")
        idx = int(fixed_indices[name])
        if idx != OOV and not 0 <= idx < fm.sizes[fm.dim_index(name)]:
            raise ConfigError(f"index {idx} out of range for dimension {name!r}")

    coeff = np.zeros(fm.k)
    constant = 0.0
    for term, weight in zip(fm.model.terms, fm.model.term_weights):
        prod = np.ones(fm.k)
        for name in term:
            if name == target_dimension:
                continue
            idx = int(fixed_indices[name])
            if idx == OOV:
                prod = None
                break
            prod = prod * fm.matrices[fm.dim_index(name)][:, idx]
        if prod is None:
            continue
        if target_dimension in term:
            coeff += weight * prod
        else:
            constant += weight * float(prod.sum())
    return coeff @ fm.matrices[target] + constant


def recommend_topn(factor_model: FactorModel, query: Query) -> list[tuple[int, float]]:
    """Top-N entities of the target dimension, highest score first.

    Ties break toward the lower entity index; returns min(N, S) entries.
    """
    if query.n < 1:
        raise ConfigError("query cutoff must be >= 1")
    scores = score_items(factor_model, query.fixed_indices, query.target_dimension)
    n = min(query.n, len(scores))
    order = np.argsort(-scores, kind="stable")[:n]
    return [(int(i), float(scores[i])) for i in order]


@dataclass(frozen=True)
class RecallResult:
    n: int
    hits: int
    events: int

    @property
    def recall(self) -> float:
        return self.hits / self.events if self.events else 0.0


def _last_train_items(train: TransactionTable) -> dict[str, str]:
    """Each user's most recent training item, by (timestamp, row order)."""
    last: dict[str, str] = {}
    for i in np.argsort(train.timestamps, kind="stable"):
        last[train.users[i]] = train.items[i]
    return last


def evaluate_recall(
    factor_model: FactorModel,
    test: TransactionTable,
    train: TransactionTable | None,
    ns: Sequence[int] = (20,),
    sequential_column: str | None = None,
    exclude_seen: bool = False,
    hit_log: list | None = None,
) -> list[RecallResult]:
    """Event-based recall over a time-split test set.

    Per test event the query takes the user and the event's stored context
    values; the sequential context, when named, is fixed to the user's
    last training item and never updated from test events. Every test
    event counts in the denominator; events with an out-of-vocabulary
    item are misses, other unknown entities contribute zero vectors.
    ``hit_log`` receives one (row, user, item, best_rank) entry per event
    when given (rank of -1 means the item was not ranked).
    """
    fm = factor_model
    item_dim = None
    for name in fm.dim_names:
        if name == test.item_col:
            item_dim = name
    if item_dim is None:
        raise ConfigError(
            f"test table item column {test.item_col!r} is not a model dimension"
        )
    ns = sorted(set(int(n) for n in ns))
    if not ns or ns[0] < 1:
        raise ConfigError("recall cutoffs must be >= 1")
    max_n = ns[-1]

    other_dims = [name for name in fm.dim_names if name != item_dim]
    if sequential_column is not None and sequential_column not in fm.dim_names:
        raise ConfigError(f"unknown sequential dimension {sequential_column!r}")
    last_items = (
        _last_train_items(train)
        if (sequential_column is not None and train is not None)
        else {}
    )
    seen: dict[str, set[int]] = {}
    if exclude_seen:
        if train is None:
            raise ConfigError("exclude_seen needs the training table")
        item_vocab = fm.vocabulary(item_dim)
        for user, item in zip(train.users, train.items):
            idx = item_vocab.get(item)
            if idx >= 0:
                seen.setdefault(user, set()).add(idx)

    def fixed_for(row: int) -> tuple[int, ...]:
        fixed = []
        for name in other_dims:
            vocab = fm.vocabulary(name)
            if name == test.user_col:
                value = test.users[row]
            elif name == sequential_column:
                value = last_items.get(test.users[row], START_SENTINEL)
            elif name in test.contexts:
                value = test.contexts[name][row]
            else:
                raise ConfigError(f"test table has no column for dimension {name!r}")
            fixed.append(vocab.get(value, OOV))
        return tuple(fixed)

    item_vocab = fm.vocabulary(item_dim)
    rank_cache: dict[tuple, dict[int, int]] = {}
    hits = {n: 0 for n in ns}
    events = len(test)

    for row in range(events):
        target = item_vocab.get(test.items[row], OOV)
        rank = -1
        if target != OOV:
            key = fixed_for(row)
            cache_key = key if not exclude_seen else (key, test.users[row])
            ranks = rank_cache.get(cache_key)
            if ranks is None:
                scores = score_items(fm, dict(zip(other_dims, key)), item_dim)
                if exclude_seen:
                    banned = seen.get(test.users[row])
                    if banned:
                        scores = scores.copy()
                        scores[list(banned)] = -np.inf
                top = np.argsort(-scores, kind="stable")[: min(max_n, len(scores))]
                ranks = {int(i): r for r, i in enumerate(top)}
                rank_cache[cache_key] = ranks
            rank = ranks.get(target, -1)
            if rank >= 0:
                for n in ns:
                    if rank < n:
                        hits[n] += 1
        if hit_log is not None:
            hit_log.append((row, test.users[row], test.items[row], rank))

    return [RecallResult(n=n, hits=hits[n], events=events) for n in ns]


def recall_at_n(
    factor_model: FactorModel,
    test: TransactionTable,
    train: TransactionTable | None,
    n: int = 20,
    sequential_column: str | None = None,
    exclude_seen: bool = False,
) -> float:
    """Fraction of test events whose item appears in the top-N ranking."""
    (result,) = evaluate_recall(
        factor_model,
        test,
        train,
        ns=(n,),
        sequential_column=sequential_column,
        exclude_seen=exclude_seen,
    )
    return result.recall
