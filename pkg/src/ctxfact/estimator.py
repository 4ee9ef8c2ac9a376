"""Estimator facade with a scikit-learn style fit/predict API.

Wraps dataspace construction, model parsing, training, and scoring in a
single object with ``get_params``/``set_params`` so it composes with
tooling that expects that interface. Parameters are stored verbatim at
construction and validated in ``fit``.
"""

from __future__ import annotations

import inspect

import numpy as np

from .dataspace import Dataspace, TransactionTable, build_dataspace
from .errors import ConfigError
from .preference import PreferenceModel, default_aliases, parse_model
from .ranking import Query, recall_at_n, recommend_topn, score_items
from .ranking import predict as predict_tuple
from .solver import FactorModel, TrainConfig, train
from .validation import check_choice, check_index_tuples
from .weighting import WeightingScheme


class FactorizationRecommender:
    """Context-aware factorization recommender.

    Parameters
    ----------
    model : str
        Preference-model expression, e.g. ``"UI"`` or ``"UI+USI+UQI"``.
        Letters resolve through the fitted dataspace's alias table
        (U=user, I=item, then contexts in order); ``*``-separated
        dimension names are accepted for arbitrary dimensions.
    n_factors : int
        Feature-vector length K.
    n_epochs : int
        Full passes over the dimensions.
    regularization : float or mapping
        Ridge coefficient, shared or per dimension name.
    weighting : str
        ``"implicit"`` (weight alpha*count vs 1) or ``"explicit"``
        (ratings, weight 1 vs 0). A prebuilt WeightingScheme is accepted.
    alpha : float
        Observed-cell weight multiplier in implicit mode.
    solver : str
        ``"direct"`` (Cholesky) or ``"cg"`` (conjugate gradient).
    cg_iters, cg_tol : CG stopping rule.
    init_scale : float
        Initial entries are uniform on +-init_scale/sqrt(K).
    random_state : int
        Seed for the factor initialization.
    n_threads : int
        Column-update parallelism; results do not depend on it.
    sequential_column : str or None
        Dimension evaluated with the user's last training item fixed as
        context (the sequential convention of ``score``).
    exclude_seen : bool
        Drop items the user consumed in training from rankings in
        ``score``.
    """

    def __init__(
        self,
        model: str = "UI",
        n_factors: int = 80,
        n_epochs: int = 10,
        regularization=0.1,
        weighting="implicit",
        alpha: float = 40.0,
        solver: str = "direct",
        cg_iters: int = 10,
        cg_tol: float = 1e-10,
        init_scale: float = 0.5,
        random_state: int = 0,
        n_threads: int = 1,
        sequential_column: str | None = None,
        exclude_seen: bool = False,
    ):
        self.model = model
        self.n_factors = n_factors
        self.n_epochs = n_epochs
        self.regularization = regularization
        self.weighting = weighting
        self.alpha = alpha
        self.solver = solver
        self.cg_iters = cg_iters
        self.cg_tol = cg_tol
        self.init_scale = init_scale
        self.random_state = random_state
        self.n_threads = n_threads
        self.sequential_column = sequential_column
        self.exclude_seen = exclude_seen

    # -- parameter protocol -------------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [name for name in signature.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "FactorizationRecommender":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ConfigError(f"invalid parameter {name!r} for FactorizationRecommender")
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"FactorizationRecommender({args})"

    # -- fitting --------------------------------------------------------

    def _scheme(self) -> WeightingScheme:
        if isinstance(self.weighting, WeightingScheme):
            return self.weighting
        choice = check_choice("weighting", self.weighting, ("implicit", "explicit"))
        if choice == "implicit":
            return WeightingScheme.implicit(alpha=self.alpha)
        return WeightingScheme.explicit()

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            k=self.n_factors,
            epochs=self.n_epochs,
            regularization=self.regularization,
            solver=self.solver,
            cg_iters=self.cg_iters,
            cg_tol=self.cg_tol,
            seed=self.random_state,
            init_scale=self.init_scale,
            n_threads=self.n_threads,
        )

    def fit(self, X, y=None, progress=None) -> "FactorizationRecommender":
        """Fit the factor matrices.

        ``X`` is a Dataspace, or a TransactionTable indexed over user,
        item, and every context column in declaration order.
        """
        if isinstance(X, Dataspace):
            dataspace = X
            self.train_table_ = None
        elif isinstance(X, TransactionTable):
            order = [X.user_col, X.item_col, *X.context_columns]
            dataspace = build_dataspace(X, order)
            self.train_table_ = X
        else:
            raise ConfigError(
                f"fit expects a Dataspace or TransactionTable, got {type(X).__name__}"
            )

        if isinstance(self.model, PreferenceModel):
            model = self.model
        else:
            aliases = default_aliases(
                dataspace.names, user_dim=dataspace.user_dim, item_dim=dataspace.item_dim
            )
            model = parse_model(self.model, aliases)

        self.dataspace_ = dataspace
        self.model_ = model
        self.factors_ = train(
            dataspace, model, self._scheme(), self._train_config(), progress=progress
        )
        return self

    def _check_fitted(self) -> FactorModel:
        factors = getattr(self, "factors_", None)
        if factors is None:
            raise ConfigError("this estimator is not fitted; call fit first")
        return factors

    # -- inference ------------------------------------------------------

    def predict(self, X) -> np.ndarray:
        """Scores for an array of full index tuples, shape (n, n_dims)."""
        fm = self._check_fitted()
        arr = check_index_tuples(X, fm.sizes)
        return np.array([predict_tuple(fm, row) for row in arr])

    def score_items(self, fixed: dict) -> np.ndarray:
        """Scores over all items for entity names (or indices) fixed per
        dimension; unknown entities read as zero vectors."""
        fm = self._check_fitted()
        return score_items(fm, self._resolve_fixed(fm, fixed), fm.dim_names[self._item_dim(fm)])

    def recommend(self, fixed: dict, n: int = 20) -> list[tuple[str, float]]:
        """Top-N (item entity, score) for a fixed user/context."""
        fm = self._check_fitted()
        item_dim = fm.dim_names[self._item_dim(fm)]
        query = Query(self._resolve_fixed(fm, fixed), item_dim, n=n)
        vocab = fm.vocabulary(item_dim)
        return [(vocab.entity(i), s) for i, s in recommend_topn(fm, query)]

    def score(self, X, y=None, n: int = 20) -> float:
        """Recall@n over a test TransactionTable (higher is better)."""
        fm = self._check_fitted()
        if not isinstance(X, TransactionTable):
            raise ConfigError("score expects a TransactionTable of test events")
        return recall_at_n(
            fm,
            X,
            getattr(self, "train_table_", None),
            n=n,
            sequential_column=self.sequential_column,
            exclude_seen=self.exclude_seen,
        )

    # -- helpers --------------------------------------------------------

    def _item_dim(self, fm: FactorModel) -> int:
        return fm.dim_index(self.dataspace_.item_dim)

    def _resolve_fixed(self, fm: FactorModel, fixed: dict) -> dict:
        item_dim = self.dataspace_.item_dim
        resolved = {}
        for name in fm.dim_names:
            if name == item_dim:
                continue
            if name not in fixed:
                raise ConfigError(f"no entity fixed for dimension {name!r}")
            value = fixed[name]
            if isinstance(value, str):
                resolved[name] = fm.vocabulary(name).get(value, -1)
            else:
                resolved[name] = int(value)
        extra = set(fixed) - set(resolved)
        if extra:
            raise ConfigError(f"fixed entities for unknown dimensions: {sorted(extra)}")
        return resolved
