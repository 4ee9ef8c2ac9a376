"""Alternating least squares training of the factor matrices.

Each epoch recomputes every dimension's feature matrix once. For a
dimension, the normal equations of each feature-vector column split into
a shared missing-data part, assembled from per-dimension Gram statistics
without enumerating the dataspace, and a per-column correction over the
observed combinations only. Columns are solved either directly (Cholesky)
or by conjugate gradient; in CG mode the observed part is applied
matrix-free so one epoch stays linear in both the transaction count and
the feature count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.linalg

from .dataspace import Dataspace, Vocabulary
from .errors import ConfigError, ConsistencyError, SolverError
from .preference import PreferenceModel, Term, ensure_valid, render_model
from .validation import check_choice, check_nonnegative, check_positive_int
from .weighting import IMPLICIT_FACTORIZED, WeightingScheme

LOSS_ENUMERATION_GUARD = 10**7


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``regularization`` is a shared coefficient, or a mapping from
    dimension name to coefficient with an optional ``"*"`` fallback.
    """

    k: int = 80
    epochs: int = 10
    regularization: float | Mapping[str, float] = 0.1
    solver: str = "direct"
    cg_iters: int = 10
    cg_tol: float = 1e-10
    seed: int = 0
    init_scale: float = 0.5
    n_threads: int = 1

    def __post_init__(self):
        self.k = check_positive_int("k", self.k)
        self.epochs = check_positive_int("epochs", self.epochs)
        self.cg_iters = check_positive_int("cg_iters", self.cg_iters)
        self.n_threads = check_positive_int("n_threads", self.n_threads)
        check_choice("solver", self.solver, ("direct", "cg"))
        check_nonnegative("cg_tol", self.cg_tol)
        check_nonnegative("init_scale", self.init_scale)
        if isinstance(self.regularization, Mapping):
            for name, value in self.regularization.items():
                check_nonnegative(f"regularization[{name!r}]", value)
        else:
            self.regularization = check_nonnegative("regularization", self.regularization)

    def lambda_for(self, dim_name: str) -> float:
        return _lambda_for(self.regularization, dim_name)


class FactorModel:
    """Per-dimension feature matrices plus cached Gram statistics.

    For dimension i the model holds a K x S_i matrix. ``cov[i]`` caches
    the sum of column outer products and ``colsum[i]`` the sum of the
    columns; the missing-data part of the normal equations is assembled
    from these. Version counters detect use of stale statistics.
    """

    def __init__(
        self,
        model: PreferenceModel,
        k: int,
        dim_names,
        vocabularies,
        matrices,
        weighting: WeightingScheme | None = None,
        seed: int | None = None,
    ):
        self.model = model
        self.k = int(k)
        self.dim_names = tuple(dim_names)
        self.vocabularies = tuple(vocabularies)
        self.matrices = [np.asfortranarray(m, dtype=np.float64) for m in matrices]
        self.weighting = weighting
        self.seed = seed
        self.composed: dict = {}
        n = len(self.dim_names)
        if len(self.matrices) != n or len(self.vocabularies) != n:
            raise ConfigError("one matrix and one vocabulary are needed per dimension")
        for name, m, vocab in zip(self.dim_names, self.matrices, self.vocabularies):
            if m.shape != (self.k, len(vocab)):
                raise ConfigError(
                    f"dimension {name!r}: matrix shape {m.shape} does not match "
                    f"(k={self.k}, entities={len(vocab)})"
                )
        self._matrix_version = [0] * n
        self._stats_version = [-1] * n
        self.cov: list = [None] * n
        self.colsum: list = [None] * n
        for d in range(n):
            self.refresh_stats(d)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(m.shape[1] for m in self.matrices)

    def dim_index(self, name: str) -> int:
        try:
            return self.dim_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown dimension {name!r}") from None

    def matrix(self, name: str) -> np.ndarray:
        return self.matrices[self.dim_index(name)]

    def vocabulary(self, name: str) -> Vocabulary:
        return self.vocabularies[self.dim_index(name)]

    def refresh_stats(self, dim: int) -> None:
        M = self.matrices[dim]
        self.cov[dim] = M @ M.T
        self.colsum[dim] = M.sum(axis=1)
        self._stats_version[dim] = self._matrix_version[dim]

    def mark_matrix_dirty(self, dim: int) -> None:
        self._matrix_version[dim] += 1

    def set_column(self, dim: int, entity: int, values) -> None:
        self.matrices[dim][:, entity] = values
        self._matrix_version[dim] += 1

    def check_stats_current(self, exclude: int | None = None) -> None:
        for j, name in enumerate(self.dim_names):
            if j == exclude:
                continue
            if self._stats_version[j] != self._matrix_version[j]:
                raise ConsistencyError(f"statistics for dimension {name!r} are stale")

    def copy(self) -> "FactorModel":
        dup = FactorModel(
            self.model,
            self.k,
            self.dim_names,
            self.vocabularies,
            [m.copy(order="F") for m in self.matrices],
            weighting=self.weighting,
            seed=self.seed,
        )
        dup.composed = dict(self.composed)
        return dup

    def __eq__(self, other) -> bool:
        if not isinstance(other, FactorModel):
            return NotImplemented
        return (
            self.model == other.model
            and self.k == other.k
            and self.dim_names == other.dim_names
            and self.vocabularies == other.vocabularies
            and all(np.array_equal(a, b) for a, b in zip(self.matrices, other.matrices))
            and self.weighting == other.weighting
            and self.composed == other.composed
        )

    def __repr__(self) -> str:
        dims = ", ".join(f"{n}={s}" for n, s in zip(self.dim_names, self.sizes))
        return f"FactorModel(model={render_model(self.model)!r}, k={self.k}, {dims})"


def init_model(
    dataspace: Dataspace,
    model: PreferenceModel,
    config: TrainConfig,
    scheme: WeightingScheme | None = None,
) -> FactorModel:
    """Random factor matrices, uniform on (-init_scale/sqrt(K), +init_scale/sqrt(K)).

    Deterministic for a fixed seed: dimensions are drawn in declaration
    order from one seeded generator.
    """
    rng = np.random.default_rng(config.seed)
    half = config.init_scale / math.sqrt(config.k)
    matrices = [
        rng.uniform(-half, half, size=(config.k, size)) for size in dataspace.sizes
    ]
    return FactorModel(
        model,
        config.k,
        dataspace.names,
        dataspace.vocabularies,
        matrices,
        weighting=scheme,
        seed=config.seed,
    )


def split_model_terms(model: PreferenceModel, dim: str):
    """Split terms by whether they contain ``dim``.

    Returns (group_a, group_b): terms containing the dimension with the
    dimension removed, and the untouched remaining terms.
    """
    group_a = tuple(tuple(d for d in t if d != dim) for t in model.terms if dim in t)
    group_b = tuple(t for t in model.terms if dim not in t)
    if not group_a:
        raise ConfigError(f"dimension {dim!r} appears in no term of the model")
    return group_a, group_b


def _missing_stats(fm: FactorModel, d: int, scheme: WeightingScheme) -> dict:
    """(C, O, S) per dimension other than ``d``, weighted by the scheme's
    per-entity missing-weight factors (all ones in the simple mode)."""
    stats = {}
    for j, name in enumerate(fm.dim_names):
        if j == d:
            continue
        if scheme.mode == IMPLICIT_FACTORIZED:
            w = scheme.dimension_factors(j, fm.sizes[j])
            M = fm.matrices[j]
            Mw = M * w
            stats[name] = (Mw @ M.T, Mw.sum(axis=1), float(w.sum()))
        else:
            stats[name] = (fm.cov[j], fm.colsum[j], float(fm.sizes[j]))
    return stats


def _pair_contribution(stats: dict, term_a: Term, term_b: Term, other_names, k: int) -> np.ndarray:
    """Sum over all entity combinations of the outer product of two term
    vectors, factorized per dimension into C, O, and S contributions."""
    set_a, set_b = set(term_a), set(term_b)
    mat = None
    row = None
    col = None
    scal = 1.0
    for name in other_names:
        C, O, s = stats[name]
        if name in set_a and name in set_b:
            mat = C.copy() if mat is None else mat * C
        elif name in set_a:
            row = O.copy() if row is None else row * O
        elif name in set_b:
            col = O.copy() if col is None else col * O
        else:
            scal *= s
    out = np.full((k, k), scal) if mat is None else scal * mat
    if row is not None:
        out = out * row[:, None]
    if col is not None:
        out = out * col[None, :]
    return out


def assemble_missing_part(
    factor_model: FactorModel, dim: str, scheme: WeightingScheme
):
    """Shared missing-data part of a dimension's normal equations.

    Returns (J, I_vec): the coefficient matrix and offset vector summed
    over every entity combination of the other dimensions, weighted by
    the missing weight. With a factorized scheme the returned parts omit
    the updated dimension's own per-entity factor; the caller scales by
    it per column. Explicit mode returns zeros.
    """
    d = factor_model.dim_index(dim)
    k = factor_model.k
    if not scheme.has_missing_weight:
        return np.zeros((k, k)), np.zeros(k)
    factor_model.check_stats_current(exclude=d)

    group_a, group_b = split_model_terms(factor_model.model, dim)
    other_names = [n for n in factor_model.dim_names if n != dim]
    stats = _missing_stats(factor_model, d, scheme)

    J = np.zeros((k, k))
    I_vec = np.zeros(k)
    ones = np.ones(k)
    for term_a in group_a:
        for term_b in group_a:
            J += _pair_contribution(stats, term_a, term_b, other_names, k)
        for term_b in group_b:
            I_vec += _pair_contribution(stats, term_a, term_b, other_names, k) @ ones
    return J, I_vec


def _sum_of_products(fm: FactorModel, tuples: np.ndarray, terms) -> np.ndarray:
    """Sum over terms of the elementwise product of the referenced
    feature-vector columns; shape (n_rows, k)."""
    total = None
    for term in terms:
        prod = None
        for name in term:
            j = fm.dim_index(name)
            cols = fm.matrices[j][:, tuples[:, j]]
            if prod is None:
                prod = cols
            else:
                prod = prod * cols
        total = prod if total is None else total + prod
    if total is None:
        return np.zeros((len(tuples), fm.k))
    return total.T


def _sum_of_product_sums(fm: FactorModel, tuples: np.ndarray, terms) -> np.ndarray:
    """Per row, the summed entries of the terms' elementwise products."""
    if not terms:
        return np.zeros(len(tuples))
    return _sum_of_products(fm, tuples, terms).sum(axis=1)


def _observed_vectors(
    dataspace: Dataspace,
    fm: FactorModel,
    d: int,
    entity: int,
    scheme: WeightingScheme,
    group_a,
    group_b,
):
    """Per-observed-tuple quantities for one entity of dimension ``d``:
    (Q1 rows, Q2 column sums, w1, w0, targets); None when unobserved."""
    order, starts = dataspace.grouped(d)
    rows = order[starts[entity] : starts[entity + 1]]
    if len(rows) == 0:
        return None
    T = dataspace.tuples[rows]
    q1 = _sum_of_products(fm, T, group_a)
    q2 = _sum_of_product_sums(fm, T, group_b)
    w1 = scheme.observed_weights(dataspace.counts[rows])
    w0 = scheme.missing_weights(T)
    if scheme.uses_ratings:
        if dataspace.ratings is None:
            raise ConfigError("explicit weighting needs a dataspace with ratings")
        target = dataspace.ratings[rows]
    else:
        target = np.ones(len(rows))
    return q1, q2, w1, w0, target


def accumulate_observed_part(
    dataspace: Dataspace,
    factor_model: FactorModel,
    dim: str,
    entity: int,
    scheme: WeightingScheme,
):
    """Observed-data correction for one column's normal equations.

    Over the observed tuples whose ``dim`` index equals ``entity``:
    Jp = sum (w1-w0) Q1 Q1^T and rhs = sum (w1 r - (w1-w0) Q2^T 1) Q1.
    The caller subtracts the missing-part offset from ``rhs``.
    """
    d = factor_model.dim_index(dim)
    k = factor_model.k
    group_a, group_b = split_model_terms(factor_model.model, dim)
    vecs = _observed_vectors(dataspace, factor_model, d, entity, scheme, group_a, group_b)
    if vecs is None:
        return np.zeros((k, k)), np.zeros(k)
    q1, q2, w1, w0, target = vecs
    dw = w1 - w0
    jp = (q1 * dw[:, None]).T @ q1
    rhs = q1.T @ (w1 * target - dw * q2)
    return jp, rhs


def _cg(matvec, b: np.ndarray, x0: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    """Conjugate gradient for SPD systems; stops after ``max_iter``
    iterations or when the residual norm falls to tol * ||b||."""
    x = np.array(x0, dtype=np.float64)
    r = b - matvec(x)
    threshold = tol * np.linalg.norm(b)
    rs = float(r @ r)
    if math.sqrt(rs) <= threshold:
        return x
    p = r.copy()
    for _ in range(max_iter):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= threshold:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _solve_direct(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(A, check_finite=False)
    except scipy.linalg.LinAlgError as err:
        raise SolverError(f"coefficient matrix is not positive definite: {err}") from err
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def solve_column(
    A: np.ndarray, b: np.ndarray, config: TrainConfig, warm_start: np.ndarray | None = None
) -> np.ndarray:
    """Solve one column system A m = b; A must already be regularized."""
    if config.solver == "direct":
        return _solve_direct(A, b)
    x0 = np.zeros(len(b)) if warm_start is None else warm_start
    return _cg(lambda p: A @ p, b, x0, config.cg_iters, config.cg_tol)


def _check_trainable(model, scheme, dataspace):
    if any(w != 1.0 for w in model.term_weights):
        raise ConfigError("per-term importance weights are reserved; training needs unit weights")
    if scheme.uses_ratings and dataspace.ratings is None:
        raise ConfigError("explicit weighting needs rating data; the dataspace has none")
    if scheme.mode == IMPLICIT_FACTORIZED:
        if len(scheme.mu) != dataspace.n_dims:
            raise ConfigError("factorized weighting needs one mu/gamma per dimension")
        for j, size in enumerate(dataspace.sizes):
            scheme.dimension_factors(j, size)


def update_dimension(
    dataspace: Dataspace,
    fm: FactorModel,
    dim: str,
    scheme: WeightingScheme,
    config: TrainConfig,
) -> None:
    """Recompute every feature-vector column of one dimension in place.

    The shared missing part is assembled once; each column adds its
    observed correction plus the regularization and is solved with the
    configured solver (warm-started from its previous value in CG mode).
    Stats of the dimension are refreshed afterwards.
    """
    d = fm.dim_index(dim)
    k = fm.k
    lam = config.lambda_for(dim)
    J, I_vec = assemble_missing_part(fm, dim, scheme)
    group_a, group_b = split_model_terms(fm.model, dim)
    factors = None
    if scheme.mode == IMPLICIT_FACTORIZED:
        factors = scheme.dimension_factors(d, fm.sizes[d])
    lam_eye = lam * np.eye(k)
    matrix = fm.matrices[d]
    fm.mark_matrix_dirty(d)

    # Entities without observations share one system when the missing part
    # does not vary per entity; solve it once for the direct solver.
    shared_empty: np.ndarray | None = None

    def solve_entity(e: int) -> None:
        nonlocal shared_empty
        fac = 1.0 if factors is None else factors[e]
        vecs = _observed_vectors(dataspace, fm, d, e, scheme, group_a, group_b)
        try:
            if vecs is None:
                if config.solver == "direct" and factors is None:
                    if shared_empty is None:
                        shared_empty = _solve_direct(J + lam_eye, -I_vec)
                    matrix[:, e] = shared_empty
                    return
                if config.solver == "direct":
                    matrix[:, e] = _solve_direct(fac * J + lam_eye, -fac * I_vec)
                else:
                    matvec = lambda p: fac * (J @ p) + lam * p
                    matrix[:, e] = _cg(
                        matvec, -fac * I_vec, matrix[:, e], config.cg_iters, config.cg_tol
                    )
                return
            q1, q2, w1, w0, target = vecs
            dw = w1 - w0
            b = q1.T @ (w1 * target - dw * q2) - fac * I_vec
            if config.solver == "direct":
                A = fac * J + lam_eye + (q1 * dw[:, None]).T @ q1
                matrix[:, e] = _solve_direct(A, b)
            else:
                Js = fac * J

                def matvec(p):
                    return Js @ p + lam * p + q1.T @ (dw * (q1 @ p))

                matrix[:, e] = _cg(matvec, b, matrix[:, e], config.cg_iters, config.cg_tol)
        except SolverError as err:
            raise SolverError(f"dimension {dim!r}, entity {e}: {err}") from err

    size = fm.sizes[d]
    if config.n_threads > 1 and size > 1:
        chunks = np.array_split(np.arange(size), min(config.n_threads * 4, size))
        with ThreadPoolExecutor(max_workers=config.n_threads) as pool:
            def run_chunk(chunk):
                for e in chunk:
                    solve_entity(int(e))
            list(pool.map(run_chunk, chunks))
    else:
        for e in range(size):
            solve_entity(e)

    fm.refresh_stats(d)


def train(
    dataspace: Dataspace,
    model: PreferenceModel,
    scheme: WeightingScheme,
    config: TrainConfig,
    progress=None,
    track_loss: bool = False,
) -> FactorModel:
    """Train a factor model by alternating least squares.

    Runs ``config.epochs`` epochs; each epoch updates the dimensions in
    dataspace declaration order. ``progress`` is an optional text stream
    receiving one record per dimension update; with ``track_loss`` the
    exact regularized objective is appended on enumeration-guard-sized
    dataspaces.
    """
    ensure_valid(model, dataspace)
    _check_trainable(model, scheme, dataspace)
    fm = init_model(dataspace, model, config, scheme=scheme)
    loss_ok = track_loss and dataspace.n_cells <= LOSS_ENUMERATION_GUARD
    for epoch in range(1, config.epochs + 1):
        for name in fm.dim_names:
            started = time.perf_counter()
            update_dimension(dataspace, fm, name, scheme, config)
            if progress is not None:
                line = f"epoch={epoch} dim={name} seconds={time.perf_counter() - started:.3f}"
                if loss_ok:
                    loss = compute_loss_naive(
                        dataspace, fm, scheme, regularization=config.regularization
                    )
                    line += f" loss={loss:.6g}"
                progress.write(line + "\n")
    return fm


def compute_loss_naive(
    dataspace: Dataspace,
    factor_model: FactorModel,
    scheme: WeightingScheme,
    regularization: float | Mapping[str, float] = 0.0,
) -> float:
    """Exact regularized objective by enumerating every dataspace cell.

    Test oracle and diagnostic, not a production path; guarded to 1e7
    cells.
    """
    if dataspace.n_cells > LOSS_ENUMERATION_GUARD:
        raise ConfigError(
            f"dataspace has {dataspace.n_cells} cells; the enumeration guard is "
            f"{LOSS_ENUMERATION_GUARD}"
        )
    fm = factor_model
    sizes = dataspace.sizes
    n_dims = dataspace.n_dims
    letters = "abcdefghij"[:n_dims]

    r_hat = np.zeros(sizes)
    for term in fm.model.terms:
        idxs = sorted(fm.dim_index(name) for name in term)
        subscript = ",".join("z" + letters[j] for j in idxs)
        out = "".join(letters[j] for j in idxs)
        value = np.einsum(f"{subscript}->{out}", *[fm.matrices[j] for j in idxs])
        shape = tuple(sizes[j] if j in idxs else 1 for j in range(n_dims))
        r_hat += value.reshape(shape)

    if not scheme.has_missing_weight:
        weights = np.zeros(sizes)
    elif scheme.mode == IMPLICIT_FACTORIZED:
        weights = np.ones(sizes)
        for j in range(n_dims):
            fac = scheme.dimension_factors(j, sizes[j])
            weights = weights * fac.reshape(tuple(sizes[j] if i == j else 1 for i in range(n_dims)))
    else:
        weights = np.ones(sizes)

    obs = tuple(dataspace.tuples[:, j] for j in range(n_dims))
    weights[obs] = scheme.observed_weights(dataspace.counts)
    targets = np.zeros(sizes)
    targets[obs] = dataspace.ratings if scheme.uses_ratings else 1.0

    loss = float(np.sum(weights * (r_hat - targets) ** 2))
    for name, M in zip(fm.dim_names, fm.matrices):
        lam = _lambda_for(regularization, name)
        loss += lam * float(np.sum(M * M))
    return loss


def _lambda_for(regularization, dim_name: str) -> float:
    if isinstance(regularization, Mapping):
        if dim_name in regularization:
            return float(regularization[dim_name])
        if "*" in regularization:
            return float(regularization["*"])
        raise ConfigError(f"no regularization given for dimension {dim_name!r}")
    return float(regularization)
