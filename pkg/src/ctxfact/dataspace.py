"""Transaction ingestion, context derivation, and dataspace indexing.

The dataspace is the Cartesian product of named dimensions (users, items,
and any number of event-context columns), each holding one entity
vocabulary. Training data is stored as distinct index tuples with
occurrence counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, RowError, SchemaError

START_SENTINEL = "<START>"


@dataclass(frozen=True)
class Transaction:
    """One timestamped event, with one value per declared context column."""

    user_id: str
    item_id: str
    timestamp: int
    context_values: tuple[str, ...] = ()
    rating: float | None = None


@dataclass(frozen=True)
class ColumnSchema:
    """Maps logical roles to column names of a tab-separated input file."""

    user: str = "user"
    item: str = "item"
    timestamp: str = "ts"
    rating: str | None = None
    contexts: tuple[str, ...] = ()


class TransactionTable:
    """Columnar store of events: user, item, timestamp, context columns.

    Tables are treated as immutable; derivation operations return new
    tables that share unchanged columns.
    """

    def __init__(
        self,
        users: Sequence[str],
        items: Sequence[str],
        timestamps,
        contexts: Mapping[str, Sequence[str]] | None = None,
        ratings=None,
        user_col: str = "user",
        item_col: str = "item",
        time_col: str = "ts",
        rating_col: str | None = None,
    ):
        self.users = list(users)
        self.items = list(items)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.contexts = {name: list(vals) for name, vals in (contexts or {}).items()}
        self.ratings = None if ratings is None else np.asarray(ratings, dtype=np.float64)
        self.user_col = user_col
        self.item_col = item_col
        self.time_col = time_col
        self.rating_col = rating_col

        n = len(self.users)
        if len(self.items) != n or len(self.timestamps) != n:
            raise ConfigError("user, item, and timestamp columns differ in length")
        if self.ratings is not None and len(self.ratings) != n:
            raise ConfigError("rating column differs in length")
        for name, vals in self.contexts.items():
            if len(vals) != n:
                raise ConfigError(f"context column {name!r} differs in length")
        if n and self.timestamps.min() < 0:
            raise ConfigError("timestamps must be >= 0")

    def __len__(self) -> int:
        return len(self.users)

    @property
    def context_columns(self) -> tuple[str, ...]:
        return tuple(self.contexts)

    @property
    def column_names(self) -> tuple[str, ...]:
        names = [self.user_col, self.item_col, self.time_col]
        if self.rating_col is not None:
            names.append(self.rating_col)
        names.extend(self.contexts)
        return tuple(names)

    def column(self, name: str):
        """Return the raw column for a user/item/context column name."""
        if name == self.user_col:
            return self.users
        if name == self.item_col:
            return self.items
        if name in self.contexts:
            return self.contexts[name]
        raise ConfigError(f"unknown column {name!r}")

    def row(self, i: int) -> Transaction:
        return Transaction(
            user_id=self.users[i],
            item_id=self.items[i],
            timestamp=int(self.timestamps[i]),
            context_values=tuple(vals[i] for vals in self.contexts.values()),
            rating=None if self.ratings is None else float(self.ratings[i]),
        )

    def __iter__(self) -> Iterator[Transaction]:
        return (self.row(i) for i in range(len(self)))

    def with_context(self, name: str, values: Sequence[str]) -> "TransactionTable":
        """Return a copy with one added context column."""
        if name in self.column_names:
            raise ConfigError(f"column {name!r} already exists")
        contexts = dict(self.contexts)
        contexts[name] = list(values)
        return self._replace(contexts=contexts)

    def select(self, mask) -> "TransactionTable":
        """Return the sub-table of rows where ``mask`` is true, in order."""
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        return self._replace(
            users=[self.users[i] for i in idx],
            items=[self.items[i] for i in idx],
            timestamps=self.timestamps[idx],
            contexts={n: [v[i] for i in idx] for n, v in self.contexts.items()},
            ratings=None if self.ratings is None else self.ratings[idx],
        )

    def _replace(self, **changes) -> "TransactionTable":
        kwargs = dict(
            users=self.users,
            items=self.items,
            timestamps=self.timestamps,
            contexts=self.contexts,
            ratings=self.ratings,
            user_col=self.user_col,
            item_col=self.item_col,
            time_col=self.time_col,
            rating_col=self.rating_col,
        )
        kwargs.update(changes)
        return TransactionTable(**kwargs)


def load_transactions(path, schema: ColumnSchema = ColumnSchema()) -> TransactionTable:
    """Load a tab-separated transaction file with a header row.

    Every row is parsed or a line-numbered error is raised; rows are kept
    in file order.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected a header row")
        positions = {name: i for i, name in enumerate(header)}

        required = [schema.user, schema.item, schema.timestamp, *schema.contexts]
        if schema.rating is not None:
            required.append(schema.rating)
        missing = [name for name in required if name not in positions]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")

        u_pos = positions[schema.user]
        i_pos = positions[schema.item]
        t_pos = positions[schema.timestamp]
        r_pos = None if schema.rating is None else positions[schema.rating]
        c_pos = [positions[c] for c in schema.contexts]
        width = max([u_pos, i_pos, t_pos, *c_pos, r_pos if r_pos is not None else 0]) + 1

        users: list[str] = []
        items: list[str] = []
        timestamps: list[int] = []
        ratings: list[float] = []
        contexts: dict[str, list[str]] = {c: [] for c in schema.contexts}

        for lineno, row in enumerate(reader, start=2):
            if len(row) < width:
                raise RowError(f"expected at least {width} fields, got {len(row)}", line=lineno)
            try:
                ts = int(row[t_pos])
            except ValueError:
                raise RowError(f"unparsable timestamp {row[t_pos]!r}", line=lineno) from None
            if ts < 0:
                raise RowError(f"negative timestamp {ts}", line=lineno)
            if r_pos is not None:
                try:
                    ratings.append(float(row[r_pos]))
                except ValueError:
                    raise RowError(f"unparsable rating {row[r_pos]!r}", line=lineno) from None
            users.append(row[u_pos])
            items.append(row[i_pos])
            timestamps.append(ts)
            for name, pos in zip(schema.contexts, c_pos):
                contexts[name].append(row[pos])

    return TransactionTable(
        users,
        items,
        timestamps,
        contexts=contexts,
        ratings=ratings if schema.rating is not None else None,
        user_col=schema.user,
        item_col=schema.item,
        time_col=schema.timestamp,
        rating_col=schema.rating,
    )


def write_transactions(table: TransactionTable, path) -> None:
    """Write a table back to TSV, context columns after the base columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(table.column_names)
        ctx_cols = [table.contexts[c] for c in table.contexts]
        for i in range(len(table)):
            row = [table.users[i], table.items[i], str(int(table.timestamps[i]))]
            if table.rating_col is not None:
                row.append(repr(float(table.ratings[i])))
            row.extend(col[i] for col in ctx_cols)
            writer.writerow(row)


def derive_seasonality(
    table: TransactionTable,
    season_length: int,
    band_boundaries: Sequence[int],
    column: str = "season",
) -> TransactionTable:
    """Add a context column assigning each event to a time band.

    The band of an event is the index of the last boundary that is
    <= (timestamp mod season_length). Boundaries must start at 0, be
    strictly ascending, and stay below the season length.
    """
    if season_length <= 0:
        raise ConfigError("season_length must be positive")
    bounds = list(band_boundaries)
    if not bounds:
        raise ConfigError("band_boundaries must be non-empty")
    if bounds[0] != 0:
        raise ConfigError("the first band boundary must be 0")
    if any(b >= season_length for b in bounds):
        raise ConfigError("band boundaries must be below the season length")
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ConfigError("band boundaries must be strictly ascending")

    offsets = table.timestamps % season_length
    bands = np.searchsorted(np.asarray(bounds, dtype=np.int64), offsets, side="right") - 1
    return table.with_context(column, [str(int(b)) for b in bands])


def derive_sequentiality(table: TransactionTable, column: str = "prev_item") -> TransactionTable:
    """Add a context column holding each user's previously consumed item.

    Events of a user are ordered by (timestamp, original row index); the
    first event of a user gets the reserved sentinel entity.
    """
    n = len(table)
    order = np.argsort(table.timestamps, kind="stable")
    prev = [START_SENTINEL] * n
    last: dict[str, str] = {}
    for i in order:
        user = table.users[i]
        prev[i] = last.get(user, START_SENTINEL)
        last[user] = table.items[i]
    return table.with_context(column, prev)


def time_split(table: TransactionTable, split_timestamp: int):
    """Split into (train, test): train holds events before the timestamp."""
    mask = table.timestamps < split_timestamp
    return table.select(mask), table.select(~mask)


class Vocabulary:
    """Bijection between entity strings and dense indices.

    Indices are assigned in first-appearance order, which makes indexing
    deterministic for a fixed input table.
    """

    __slots__ = ("_entities", "_index")

    def __init__(self, entities: Sequence[str] = ()):
        self._entities: list[str] = []
        self._index: dict[str, int] = {}
        for e in entities:
            self.add(e)

    def add(self, entity: str) -> int:
        idx = self._index.get(entity)
        if idx is None:
            idx = len(self._entities)
            self._entities.append(entity)
            self._index[entity] = idx
        return idx

    def index(self, entity: str) -> int:
        return self._index[entity]

    def get(self, entity: str, default: int = -1) -> int:
        return self._index.get(entity, default)

    def entity(self, index: int) -> str:
        return self._entities[index]

    def entities(self) -> list[str]:
        return list(self._entities)

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, entity: str) -> bool:
        return entity in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._entities)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._entities == other._entities

    def __repr__(self) -> str:
        return f"Vocabulary({len(self)} entities)"


@dataclass(eq=False)
class Dataspace:
    """Indexed view of a transaction table.

    ``tuples`` holds the distinct observed index combinations (one row per
    combination, one column per dimension) with their occurrence counts;
    ``ratings`` holds per-combination mean ratings in explicit mode.
    """

    names: tuple[str, ...]
    vocabularies: tuple[Vocabulary, ...]
    tuples: np.ndarray
    counts: np.ndarray
    ratings: np.ndarray | None
    user_dim: str
    item_dim: str
    _groups: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_dims(self) -> int:
        return len(self.names)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.vocabularies)

    @property
    def n_events(self) -> int:
        return int(self.counts.sum())

    @property
    def n_cells(self) -> int:
        out = 1
        for s in self.sizes:
            out *= s
        return out

    def dim_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown dimension {name!r}") from None

    def vocabulary(self, name: str) -> Vocabulary:
        return self.vocabularies[self.dim_index(name)]

    def observed_counts(self) -> dict[tuple[int, ...], int]:
        """Observed index tuples mapped to their counts (small spaces)."""
        return {
            tuple(int(x) for x in row): int(c)
            for row, c in zip(self.tuples, self.counts)
        }

    def grouped(self, dim: int):
        """Rows of ``tuples`` grouped by the entity index of a dimension.

        Returns (order, starts): ``order`` permutes rows so that equal
        entities of the dimension are contiguous, ``starts`` has length
        S+1 with the slice bounds per entity.
        """
        cached = self._groups.get(dim)
        if cached is not None:
            return cached
        col = self.tuples[:, dim]
        order = np.argsort(col, kind="stable")
        counts = np.bincount(col, minlength=len(self.vocabularies[dim]))
        starts = np.concatenate([[0], np.cumsum(counts)])
        self._groups[dim] = (order, starts)
        return order, starts


def build_dataspace(table: TransactionTable, dimension_order: Sequence[str]) -> Dataspace:
    """Index a table into a dataspace over the named columns.

    Vocabularies assign dense indices in first-appearance order; duplicate
    index tuples are aggregated into counts (and mean ratings in explicit
    mode).
    """
    names = tuple(dimension_order)
    if len(set(names)) != len(names):
        raise ConfigError("dimension names must be unique")
    for name in names:
        table.column(name)  # raises ConfigError for unknown columns
    if table.user_col not in names or table.item_col not in names:
        raise ConfigError("dimension order must include the user and item columns")

    columns = [table.column(name) for name in names]
    vocabs = tuple(Vocabulary() for _ in names)
    n = len(table)

    index_cols = []
    for vals, vocab in zip(columns, vocabs):
        index_cols.append([vocab.add(v) for v in vals])

    agg: dict[tuple[int, ...], list] = {}
    explicit = table.ratings is not None
    for i in range(n):
        key = tuple(col[i] for col in index_cols)
        slot = agg.get(key)
        if slot is None:
            agg[key] = [1, table.ratings[i] if explicit else 0.0]
        else:
            slot[0] += 1
            if explicit:
                slot[1] += table.ratings[i]

    n_distinct = len(agg)
    tuples = np.empty((n_distinct, len(names)), dtype=np.int32)
    counts = np.empty(n_distinct, dtype=np.int64)
    ratings = np.empty(n_distinct, dtype=np.float64) if explicit else None
    for row, (key, (count, rating_sum)) in enumerate(agg.items()):
        tuples[row] = key
        counts[row] = count
        if explicit:
            ratings[row] = rating_sum / count

    return Dataspace(
        names=names,
        vocabularies=vocabs,
        tuples=tuples,
        counts=counts,
        ratings=ratings,
        user_dim=table.user_col,
        item_dim=table.item_col,
    )
