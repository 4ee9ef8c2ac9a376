"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from ctxfact import (
    Dataspace,
    TransactionTable,
    Vocabulary,
    accumulate_observed_part,
    assemble_missing_part,
    derive_seasonality,
    time_split,
)

# The eight models compared against each other in the 4-dimensional
# experiments; dimension names are the letters themselves here.
COMPARISON_MODELS = (
    "USI+UQI",
    "UI+USI+UQI",
    "USQI",
    "UI+US+IS+UQ+IQ",
    "UI+US+UQ",
    "UI+IS+IQ",
    "UI+US+IS+UQ+IQ+SQ",
    "UI+US+IS+UQ+IQ+USI+UQI",
)


def make_table(rows, contexts=None, ratings=None, **kwargs) -> TransactionTable:
    """Table from (user, item, timestamp) triples."""
    return TransactionTable(
        [r[0] for r in rows],
        [r[1] for r in rows],
        [r[2] for r in rows],
        contexts=contexts,
        ratings=ratings,
        **kwargs,
    )


def synthetic_dataspace(
    rng: np.random.Generator,
    sizes,
    n_tuples: int,
    explicit: bool = False,
    max_count: int = 4,
) -> Dataspace:
    """Random dataspace with the given dimension sizes.

    Dimension names are single letters (U, I, S, Q, ...) so model
    expressions parse without an alias table. Distinct observed tuples
    are sampled without replacement; entities may stay unobserved.
    """
    names = tuple("UISQR"[: len(sizes)])
    n_cells = int(np.prod(sizes))
    n_tuples = min(n_tuples, n_cells)
    flat = rng.choice(n_cells, size=n_tuples, replace=False)
    tuples = np.stack(np.unravel_index(flat, sizes), axis=1).astype(np.int32)
    counts = rng.integers(1, max_count + 1, size=n_tuples).astype(np.int64)
    ratings = rng.uniform(1.0, 5.0, size=n_tuples) if explicit else None
    vocabs = tuple(
        Vocabulary([f"{name}{i}" for i in range(size)]) for name, size in zip(names, sizes)
    )
    return Dataspace(
        names=names,
        vocabularies=vocabs,
        tuples=tuples,
        counts=counts,
        ratings=ratings,
        user_dim="U",
        item_dim="I",
    )


def seasonal_dataset(
    rng: np.random.Generator,
    n_users: int = 60,
    n_items: int = 60,
    n_bands: int = 4,
    n_groups: int = 6,
    block: int = 10,
    base_frac: float = 0.35,
    noise: float = 0.05,
    n_train: int = 9000,
    n_test: int = 1500,
    band_width: int = 3600,
):
    """Synthetic tables where item preference depends jointly on the user
    group and the time band, plus a band-independent base preference.

    Returns (train_table, test_table); both carry a derived ``season``
    context column and the split is strictly time-based.
    """
    n_blocks = n_items // block
    season_length = n_bands * band_width
    train_days = 8

    def block_items(b):
        return np.arange(b * block, (b + 1) * block)

    def sample_rows(n_events, day_lo, day_hi):
        users = rng.integers(0, n_users, size=n_events)
        bands = rng.integers(0, n_bands, size=n_events)
        days = rng.integers(day_lo, day_hi, size=n_events)
        items = np.empty(n_events, dtype=np.int64)
        for row in range(n_events):
            g = users[row] % n_groups
            if rng.random() < noise:
                items[row] = rng.integers(0, n_items)
            elif rng.random() < base_frac:
                items[row] = rng.choice(block_items(g % n_blocks))
            else:
                seasonal_block = (g + 1 + 2 * bands[row]) % n_blocks
                items[row] = rng.choice(block_items(seasonal_block))
        ts = days * season_length + bands * band_width + rng.integers(0, band_width, n_events)
        order = np.argsort(ts, kind="stable")
        return (
            [f"u{users[i]}" for i in order],
            [f"i{items[i]}" for i in order],
            ts[order],
        )

    users, items, ts = sample_rows(n_train, 0, train_days)
    users2, items2, ts2 = sample_rows(n_test, train_days, train_days + 1)
    table = TransactionTable(users + users2, items + items2, np.concatenate([ts, ts2]))
    table = derive_seasonality(
        table, season_length, list(range(0, season_length, band_width))
    )
    return time_split(table, train_days * season_length)


def assembled_system(dataspace, fm, dim, entity, scheme, lam):
    """Production-side column system: missing part + observed part + ridge."""
    J, I_vec = assemble_missing_part(fm, dim, scheme)
    Jp, rhs = accumulate_observed_part(dataspace, fm, dim, entity, scheme)
    d = fm.dim_index(dim)
    fac = 1.0
    if scheme.mode == "implicit-factorized":
        fac = scheme.dimension_factors(d, fm.sizes[d])[entity]
    A = fac * J + Jp + lam * np.eye(fm.k)
    b = rhs - fac * I_vec
    return A, b


def terms_as_indices(fm):
    """Model terms as tuples of dimension indices into fm.matrices."""
    return [tuple(fm.dim_index(n) for n in t) for t in fm.model.terms]


def observed_maps(dataspace):
    """(counts dict, ratings dict) keyed by index tuple."""
    observed = dataspace.observed_counts()
    ratings = None
    if dataspace.ratings is not None:
        ratings = {
            tuple(int(x) for x in t): float(r)
            for t, r in zip(dataspace.tuples, dataspace.ratings)
        }
    return observed, ratings
