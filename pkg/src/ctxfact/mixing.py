"""Composed dimensions: entity features mixed from property features.

A dimension's entities can be described by sparse property assignments
(metadata tokens for items, session members for transactions). A mixing
matrix W holds one column per entity with property strengths; the entity
feature matrix is then the product of the property feature matrix with W.
Training either alternates an entity solve with a property least-squares
fit (two-phase) or updates property vectors one at a time as if they were
independent (direct).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

from .dataspace import Dataspace, TransactionTable, Vocabulary
from .errors import ConfigError, RowError, SchemaError, SolverError
from .preference import PreferenceModel, ensure_valid
from .solver import (
    LOSS_ENUMERATION_GUARD,
    FactorModel,
    TrainConfig,
    _check_trainable,
    _sum_of_product_sums,
    _sum_of_products,
    assemble_missing_part,
    compute_loss_naive,
    init_model,
    solve_column,
    split_model_terms,
    update_dimension,
)
from .weighting import IMPLICIT_FACTORIZED, WeightingScheme

EMPTY_SENTINEL = "<EMPTY>"

NORMALIZATIONS = ("none", "l2")
LEARNING_MODES = ("two-phase", "direct")


class MixingMatrix:
    """Sparse property-to-entity weights, properties on rows.

    Every entity must carry at least one property with positive strength;
    with ``l2`` normalization each column has unit Euclidean norm.
    """

    def __init__(
        self,
        matrix: scipy.sparse.csc_array,
        property_names: Vocabulary,
        entity_names: Vocabulary,
        normalization: str = "none",
    ):
        self.matrix = matrix.tocsc()
        self.property_names = property_names
        self.entity_names = entity_names
        self.normalization = normalization

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n_properties(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_entities(self) -> int:
        return self.matrix.shape[1]

    def column_norms(self) -> np.ndarray:
        squared = self.matrix.multiply(self.matrix).sum(axis=0)
        return np.sqrt(np.asarray(squared).ravel())

    def compose_column(self, assignments: Iterable[tuple[str, float]]) -> np.ndarray:
        """Dense strength column for a new entity, from (property, strength)
        pairs; unknown properties are skipped."""
        col = np.zeros(self.n_properties)
        for prop, strength in assignments:
            if strength < 0:
                raise ConfigError(f"negative strength for property {prop!r}")
            idx = self.property_names.get(prop)
            if idx >= 0:
                col[idx] += float(strength)
        if self.normalization == "l2":
            norm = np.linalg.norm(col)
            if norm > 0:
                col /= norm
        return col

    def __eq__(self, other) -> bool:
        if not isinstance(other, MixingMatrix):
            return NotImplemented
        if (
            self.normalization != other.normalization
            or self.property_names != other.property_names
            or self.entity_names != other.entity_names
            or self.shape != other.shape
        ):
            return False
        diff = (self.matrix - other.matrix)
        return diff.nnz == 0

    def __repr__(self) -> str:
        return (
            f"MixingMatrix({self.n_properties} properties x {self.n_entities} entities, "
            f"nnz={self.matrix.nnz}, normalization={self.normalization!r})"
        )


def build_mixing_matrix(
    assignments: Iterable[tuple[str, str, float]],
    entities: Vocabulary | Sequence[str],
    normalization: str = "none",
) -> MixingMatrix:
    """Assemble a mixing matrix from (property, entity, strength) rows.

    Strengths must be non-negative, duplicate pairs are summed, and every
    entity needs at least one property with positive strength.
    """
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization {normalization!r}")
    entity_vocab = entities if isinstance(entities, Vocabulary) else Vocabulary(entities)
    property_vocab = Vocabulary()

    cells: dict[tuple[int, int], float] = {}
    for prop, entity, strength in assignments:
        strength = float(strength)
        if strength < 0:
            raise ConfigError(f"negative strength for ({prop!r}, {entity!r})")
        col = entity_vocab.get(entity)
        if col < 0:
            raise ConfigError(f"assignment references unknown entity {entity!r}")
        row = property_vocab.add(prop)
        cells[(row, col)] = cells.get((row, col), 0.0) + strength

    n_props, n_entities = len(property_vocab), len(entity_vocab)
    if cells:
        rows, cols = zip(*cells)
        data = [cells[key] for key in cells]
    else:
        rows, cols, data = (), (), ()
    matrix = scipy.sparse.csc_array(
        (np.asarray(data, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
        shape=(n_props, n_entities),
    )

    norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=0)).ravel())
    empty = np.flatnonzero(norms == 0)
    if len(empty):
        names = ", ".join(entity_vocab.entity(int(i)) for i in empty[:10])
        more = "" if len(empty) <= 10 else f" (+{len(empty) - 10} more)"
        raise ConfigError(f"entities without properties: {names}{more}")
    if normalization == "l2":
        matrix = matrix @ scipy.sparse.diags_array(1.0 / norms)
        matrix = scipy.sparse.csc_array(matrix)

    return MixingMatrix(matrix, property_vocab, entity_vocab, normalization)


def load_assignments(path) -> list[tuple[str, str, float]]:
    """Read property assignments from a TSV file with a header row.

    Columns: property, entity, and optional strength (default 1.0).
    """
    out: list[tuple[str, str, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected a header row")
        positions = {name: i for i, name in enumerate(header)}
        for col in ("property", "entity"):
            if col not in positions:
                raise SchemaError(f"{path}: missing column {col}")
        p_pos, e_pos = positions["property"], positions["entity"]
        s_pos = positions.get("strength")
        for lineno, row in enumerate(reader, start=2):
            needed = max(p_pos, e_pos, s_pos if s_pos is not None else 0) + 1
            if len(row) < needed:
                raise RowError(f"expected at least {needed} fields", line=lineno)
            strength = 1.0
            if s_pos is not None:
                try:
                    strength = float(row[s_pos])
                except ValueError:
                    raise RowError(f"unparsable strength {row[s_pos]!r}", line=lineno) from None
            out.append((row[p_pos], row[e_pos], strength))
    return out


def session_assignments(
    table: TransactionTable, gap_seconds: int = 1200, weighted: bool = False
) -> tuple[list[str], list[tuple[str, str, float]]]:
    """Per-transaction session-context assignments.

    Each transaction becomes its own entity whose properties are the other
    items of the user's session (consecutive events less than
    ``gap_seconds`` apart). The transaction's own item is excluded;
    transactions alone in their session get the reserved empty-context
    property. Returns (entity ids in row order, assignment rows).
    """
    n = len(table)
    ids = [f"t{i}" for i in range(n)]
    order = np.argsort(table.timestamps, kind="stable")

    per_user: dict[str, list[int]] = {}
    for i in order:
        per_user.setdefault(table.users[i], []).append(int(i))

    sessions: list[list[int]] = []
    for rows in per_user.values():
        current = [rows[0]]
        for prev, cur in zip(rows, rows[1:]):
            if table.timestamps[cur] - table.timestamps[prev] < gap_seconds:
                current.append(cur)
            else:
                sessions.append(current)
                current = [cur]
        sessions.append(current)

    assignments: list[tuple[str, str, float]] = []
    for session in sessions:
        items = [table.items[i] for i in session]
        for i in session:
            own = table.items[i]
            others = [it for it in items if it != own]
            if not others:
                assignments.append((EMPTY_SENTINEL, ids[i], 1.0))
            elif weighted:
                counts: dict[str, int] = {}
                for it in others:
                    counts[it] = counts.get(it, 0) + 1
                for it, c in counts.items():
                    assignments.append((it, ids[i], float(c)))
            else:
                for it in dict.fromkeys(others):
                    assignments.append((it, ids[i], 1.0))
    return ids, assignments


def compose_entity_features(property_matrix: np.ndarray, mixing) -> np.ndarray:
    """Entity feature matrix as the product of property features with W."""
    W = mixing.matrix if isinstance(mixing, MixingMatrix) else mixing
    if property_matrix.shape[1] != W.shape[0]:
        raise ConfigError(
            f"shape mismatch: property matrix has {property_matrix.shape[1]} columns, "
            f"mixing matrix has {W.shape[0]} properties"
        )
    return np.ascontiguousarray((W.T @ property_matrix.T).T)


def fit_property_features(entity_matrix: np.ndarray, mixing, ridge: float) -> np.ndarray:
    """Ridge least-squares fit of property features to entity features.

    Minimizes ||M_E - M_P W||_F^2 + ridge ||M_P||_F^2; the caller
    recomposes the entity matrix from the result.
    """
    if ridge <= 0:
        raise ConfigError("ridge must be positive")
    W = mixing.matrix if isinstance(mixing, MixingMatrix) else mixing
    if entity_matrix.shape[1] != W.shape[1]:
        raise ConfigError(
            f"shape mismatch: entity matrix has {entity_matrix.shape[1]} columns, "
            f"mixing matrix has {W.shape[1]} entities"
        )
    n_props = W.shape[0]
    gram = (W @ W.T).toarray() + ridge * np.eye(n_props)
    rhs = W @ entity_matrix.T
    try:
        solution = scipy.linalg.solve(gram, rhs, assume_a="pos", check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as err:
        raise SolverError(f"property fit failed: {err}") from err
    return np.ascontiguousarray(solution.T)


def _initial_property_matrix(entity_matrix: np.ndarray, W: scipy.sparse.csc_array) -> np.ndarray:
    """Minimum-norm least-squares start so the composition invariant holds
    from the first epoch (exact for an identity mixing matrix)."""
    dense = W.toarray()
    solution, *_ = np.linalg.lstsq(dense.T, entity_matrix.T, rcond=None)
    return np.ascontiguousarray(solution.T)


@dataclass(frozen=True)
class ComposedDimension:
    """Configuration of one composed dimension."""

    mixing: MixingMatrix
    learning: str = "two-phase"
    ridge: float = 1e-6
    batch_size: int = 1

    def __post_init__(self):
        if self.learning not in LEARNING_MODES:
            raise ConfigError(f"unknown learning mode {self.learning!r}")
        if self.ridge <= 0:
            raise ConfigError("ridge must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class ComposedFactors:
    """Trained property features plus the mixing matrix they compose with."""

    mixing: MixingMatrix
    property_matrix: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, ComposedFactors):
            return NotImplemented
        return self.mixing == other.mixing and np.array_equal(
            self.property_matrix, other.property_matrix
        )


def _update_composed_two_phase(
    dataspace: Dataspace,
    fm: FactorModel,
    dim: str,
    scheme: WeightingScheme,
    config: TrainConfig,
    spec: ComposedDimension,
) -> None:
    d = fm.dim_index(dim)
    update_dimension(dataspace, fm, dim, scheme, config)
    prop = fit_property_features(fm.matrices[d], spec.mixing, spec.ridge)
    fm.composed[dim].property_matrix = prop
    fm.matrices[d][:, :] = compose_entity_features(prop, spec.mixing)
    fm.mark_matrix_dirty(d)
    fm.refresh_stats(d)


def _update_composed_direct(
    dataspace: Dataspace,
    fm: FactorModel,
    dim: str,
    scheme: WeightingScheme,
    config: TrainConfig,
    spec: ComposedDimension,
) -> None:
    """Update property vectors one at a time as if independent.

    Each property solves the least squares of the full objective with all
    other property vectors fixed; the composed entity columns it touches
    are recomposed after every batch so later solves stay consistent.
    """
    d = fm.dim_index(dim)
    k = fm.k
    lam = config.lambda_for(dim)
    W = spec.mixing.matrix
    csr = W.tocsr()
    prop = fm.composed[dim].property_matrix
    entity_matrix = fm.matrices[d]
    J, I_vec = assemble_missing_part(fm, dim, scheme)
    group_a, group_b = split_model_terms(fm.model, dim)
    order, starts = dataspace.grouped(d)
    tuples = dataspace.tuples
    omega = (
        scheme.dimension_factors(d, fm.sizes[d])
        if scheme.mode == IMPLICIT_FACTORIZED
        else np.ones(fm.sizes[d])
    )
    lam_eye = lam * np.eye(k)
    fm.mark_matrix_dirty(d)

    touched: set[int] = set()

    def recompose(columns: set[int]) -> None:
        if not columns:
            return
        cols = sorted(columns)
        entity_matrix[:, cols] = (W[:, cols].T @ prop.T).T

    n_props = W.shape[0]
    for p in range(n_props):
        lo, hi = csr.indptr[p], csr.indptr[p + 1]
        support = csr.indices[lo:hi]
        values = csr.data[lo:hi]
        m_old = prop[:, p].copy()

        wsup = omega[support] * values
        sq = float(values @ (omega[support] * values))
        s1 = float(wsup.sum())
        rest_sum = entity_matrix[:, support] @ wsup - sq * m_old
        b = -(J @ rest_sum + s1 * I_vec)
        A = sq * J + lam_eye

        rows_obs = np.concatenate(
            [order[starts[e] : starts[e + 1]] for e in support]
        ) if len(support) else np.empty(0, dtype=np.int64)
        if len(rows_obs):
            T = tuples[rows_obs]
            ents = T[:, d]
            dense_w = np.zeros(fm.sizes[d])
            dense_w[support] = values
            c = dense_w[ents]
            q1 = _sum_of_products(fm, T, group_a)
            q2 = _sum_of_product_sums(fm, T, group_b)
            w1 = scheme.observed_weights(dataspace.counts[rows_obs])
            w0 = scheme.missing_weights(T)
            dw = w1 - w0
            target = (
                dataspace.ratings[rows_obs]
                if scheme.uses_ratings
                else np.ones(len(rows_obs))
            )
            rest_cols = entity_matrix[:, ents] - np.outer(m_old, c)
            offset = np.einsum("nk,kn->n", q1, rest_cols) + q2
            A += (q1 * (dw * c * c)[:, None]).T @ q1
            b += q1.T @ (c * (w1 * target - dw * offset))

        try:
            new_col = solve_column(A, b, config, warm_start=m_old)
        except SolverError as err:
            raise SolverError(
                f"dimension {dim!r}, property {spec.mixing.property_names.entity(p)!r}: {err}"
            ) from err
        prop[:, p] = new_col
        touched.update(int(e) for e in support)
        if (p + 1) % spec.batch_size == 0:
            recompose(touched)
            touched.clear()

    recompose(touched)
    entity_matrix[:, :] = compose_entity_features(prop, spec.mixing)
    fm.refresh_stats(d)


def train_extended(
    dataspace: Dataspace,
    model: PreferenceModel,
    scheme: WeightingScheme,
    config: TrainConfig,
    composed_dims: Mapping[str, ComposedDimension],
    progress=None,
    track_loss: bool = False,
) -> FactorModel:
    """Train with some dimensions composed from property features.

    Plain dimensions update exactly as in standard training; composed
    dimensions use two-phase or direct learning per their configuration.
    The returned model carries the property matrices in ``composed``.
    """
    ensure_valid(model, dataspace)
    _check_trainable(model, scheme, dataspace)
    model_dims = model.dimension_set()
    for name, spec in composed_dims.items():
        if name not in dataspace.names:
            raise ConfigError(f"composed dimension {name!r} is not a dataspace dimension")
        if name not in model_dims:
            raise ConfigError(f"composed dimension {name!r} appears in no model term")
        size = dataspace.sizes[dataspace.dim_index(name)]
        if spec.mixing.n_entities != size:
            raise ConfigError(
                f"mixing matrix for {name!r} covers {spec.mixing.n_entities} entities, "
                f"the dimension has {size}"
            )
        if spec.mixing.entity_names != dataspace.vocabulary(name):
            raise ConfigError(
                f"mixing matrix for {name!r} was built against a different entity vocabulary"
            )

    fm = init_model(dataspace, model, config, scheme=scheme)
    for name, spec in composed_dims.items():
        d = fm.dim_index(name)
        prop = _initial_property_matrix(fm.matrices[d], spec.mixing.matrix)
        fm.composed[name] = ComposedFactors(mixing=spec.mixing, property_matrix=prop)
        fm.matrices[d][:, :] = compose_entity_features(prop, spec.mixing)
        fm.mark_matrix_dirty(d)
        fm.refresh_stats(d)

    loss_ok = track_loss and dataspace.n_cells <= LOSS_ENUMERATION_GUARD
    for epoch in range(1, config.epochs + 1):
        for name in fm.dim_names:
            started = time.perf_counter()
            spec = composed_dims.get(name)
            if spec is None:
                update_dimension(dataspace, fm, name, scheme, config)
            elif spec.learning == "two-phase":
                _update_composed_two_phase(dataspace, fm, name, scheme, config, spec)
            else:
                _update_composed_direct(dataspace, fm, name, scheme, config, spec)
            if progress is not None:
                line = f"epoch={epoch} dim={name} seconds={time.perf_counter() - started:.3f}"
                if loss_ok:
                    loss = compute_loss_naive(
                        dataspace, fm, scheme, regularization=config.regularization
                    )
                    line += f" loss={loss:.6g}"
                progress.write(line + "\n")
    return fm
