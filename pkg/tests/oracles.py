"""Independent reference implementations used as test oracles.

Everything here enumerates the dataspace directly from the definitions
(loss, weights, predictions) and never uses the Gram-statistics
decomposition or the observed/missing split of the production code.
"""

from __future__ import annotations

import itertools

import numpy as np


def cell_weight(cell, observed, scheme):
    """Weight of one cell from the scheme's raw configuration."""
    if scheme.mode == "explicit":
        return 1.0 if cell in observed else 0.0
    if cell in observed:
        return scheme.alpha * observed[cell]
    if scheme.mode == "implicit-simple":
        return 1.0
    w = 1.0
    for j, idx in enumerate(cell):
        vec = scheme.v[j]
        vj = 0.0 if vec is None else float(vec[idx])
        w *= scheme.mu[j] * vj + scheme.gamma[j]
    return w


def cell_target(cell, observed, ratings, scheme):
    if cell not in observed:
        return 0.0
    if scheme.mode == "explicit":
        return ratings[cell]
    return 1.0


def predict_cell(matrices, terms, cell):
    """Model prediction for one index tuple; ``terms`` hold dimension
    indices into ``matrices``."""
    total = 0.0
    for term in terms:
        prod = np.ones(matrices[0].shape[0])
        for j in term:
            prod = prod * matrices[j][:, cell[j]]
        total += float(prod.sum())
    return total


def loss_double_loop(matrices, terms, sizes, observed, ratings, scheme, regularization):
    """Regularized weighted squared loss by cell-by-cell enumeration."""
    loss = 0.0
    for cell in itertools.product(*[range(s) for s in sizes]):
        w = cell_weight(cell, observed, scheme)
        r = cell_target(cell, observed, ratings, scheme)
        loss += w * (predict_cell(matrices, terms, cell) - r) ** 2
    if isinstance(regularization, dict):
        for j, M in enumerate(matrices):
            loss += regularization[j] * float(np.sum(M * M))
    else:
        for M in matrices:
            loss += regularization * float(np.sum(M * M))
    return loss


def _full_grid(sizes):
    """All index tuples of the dataspace, one row per cell."""
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _grid_weights_targets(grid, sizes, observed, ratings, scheme):
    n = len(grid)
    if scheme.mode == "explicit":
        w = np.zeros(n)
    elif scheme.mode == "implicit-simple":
        w = np.ones(n)
    else:
        w = np.ones(n)
        for j in range(grid.shape[1]):
            vec = scheme.v[j]
            vj = np.zeros(n) if vec is None else np.asarray(vec)[grid[:, j]]
            w *= scheme.mu[j] * vj + scheme.gamma[j]
    r = np.zeros(n)
    flat = np.ravel_multi_index(grid.T, sizes)
    lookup = {}
    for cell, count in observed.items():
        lookup[int(np.ravel_multi_index(cell, sizes))] = count
    for row, f in enumerate(flat):
        count = lookup.get(int(f))
        if count is not None:
            cell = tuple(int(x) for x in grid[row])
            w[row] = scheme.alpha * count if scheme.mode != "explicit" else 1.0
            r[row] = ratings[cell] if scheme.mode == "explicit" else 1.0
    return w, r


def normal_equations_bruteforce(
    matrices, terms, dim, entity, observed, ratings, scheme, lam
):
    """Weighted-least-squares system for one column, over ALL cells.

    Minimizes sum_cells W (Q1^T m + Q2^T 1 - r)^2 + lam ||m||^2 in the
    column ``m`` of ``dim`` at ``entity``; returns (A, b) with the
    regularization included in A.
    """
    sizes = tuple(m.shape[1] for m in matrices)
    k = matrices[0].shape[0]
    grid = _full_grid(sizes)
    grid = grid[grid[:, dim] == entity]
    w, r = _grid_weights_targets(grid, sizes, observed, ratings, scheme)

    q1 = np.zeros((len(grid), k))
    q2 = np.zeros(len(grid))
    for term in terms:
        if dim in term:
            prod = np.ones((k, len(grid)))
            for j in term:
                if j != dim:
                    prod = prod * matrices[j][:, grid[:, j]]
            q1 += prod.T
        else:
            prod = np.ones((k, len(grid)))
            for j in term:
                prod = prod * matrices[j][:, grid[:, j]]
            q2 += prod.sum(axis=0)

    A = (q1 * w[:, None]).T @ q1 + lam * np.eye(k)
    b = q1.T @ (w * (r - q2))
    return A, b


def column_gradient_bruteforce(matrices, terms, dim, entity, observed, ratings, scheme, lam):
    """Gradient of the regularized loss w.r.t. one column, by enumeration."""
    A, b = normal_equations_bruteforce(
        matrices, terms, dim, entity, observed, ratings, scheme, lam
    )
    m = matrices[dim][:, entity]
    return 2.0 * (A @ m - b)


def implicit_als_update_naive(counts, this, other, alpha, lam):
    """Classic implicit-feedback ALS half-step over ALL cells.

    ``counts`` is the dense user-item count matrix oriented so that rows
    index the side being solved; every cell weighs alpha*count when
    observed and 1 otherwise, with target 1 on observed cells. Returns
    the new ``this`` matrix (k x rows).
    """
    k, n_rows = this.shape
    out = np.empty_like(this)
    for i in range(n_rows):
        A = lam * np.eye(k)
        b = np.zeros(k)
        for j in range(other.shape[1]):
            q = other[:, j]
            c = counts[i, j]
            w = alpha * c if c > 0 else 1.0
            r = 1.0 if c > 0 else 0.0
            A += w * np.outer(q, q)
            b += w * r * q
        out[:, i] = np.linalg.solve(A, b)
    return out
