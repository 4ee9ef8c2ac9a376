"""ALS solver: initialization, system assembly, solving, training."""

import io
import re

import numpy as np
import pytest

from conftest import (
    COMPARISON_MODELS,
    assembled_system,
    observed_maps,
    synthetic_dataspace,
    terms_as_indices,
)
from ctxfact import (
    ConfigError,
    ConsistencyError,
    FactorModel,
    SolverError,
    TrainConfig,
    WeightingScheme,
    accumulate_observed_part,
    assemble_missing_part,
    compute_loss_naive,
    init_model,
    parse_model,
    solve_column,
    split_model_terms,
    train,
)
from ctxfact.solver import update_dimension
from oracles import (
    column_gradient_bruteforce,
    implicit_als_update_naive,
    loss_double_loop,
    normal_equations_bruteforce,
    predict_cell,
)


def small_config(**kwargs):
    defaults = dict(k=3, epochs=3, regularization=0.1, seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestInit:
    def test_deterministic(self):
        rng = np.random.default_rng(0)
        ds = synthetic_dataspace(rng, (4, 5), 8)
        model = parse_model("UI")
        cfg = small_config(seed=7)
        a = init_model(ds, model, cfg)
        b = init_model(ds, model, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a.matrices, b.matrices))

    def test_zero_scale(self):
        rng = np.random.default_rng(0)
        ds = synthetic_dataspace(rng, (4, 5), 8)
        fm = init_model(ds, parse_model("UI"), small_config(k=1, init_scale=0.0))
        assert all(np.all(m == 0) for m in fm.matrices)

    def test_range_scales_with_k(self):
        rng = np.random.default_rng(0)
        ds = synthetic_dataspace(rng, (50, 50), 10)
        fm = init_model(ds, parse_model("UI"), small_config(k=16, init_scale=0.5))
        bound = 0.5 / np.sqrt(16)
        for m in fm.matrices:
            assert np.all(np.abs(m) <= bound)

    def test_stats_match_bruteforce(self):
        rng = np.random.default_rng(3)
        ds = synthetic_dataspace(rng, (5, 6, 4), 20)
        fm = init_model(ds, parse_model("UI+US"), small_config(seed=7))
        for d in range(3):
            M = fm.matrices[d]
            C = sum(np.outer(M[:, i], M[:, i]) for i in range(M.shape[1]))
            O = sum(M[:, i] for i in range(M.shape[1]))
            assert np.allclose(fm.cov[d], C, atol=1e-12)
            assert np.allclose(fm.colsum[d], O, atol=1e-12)


class TestSplitTerms:
    def test_pairwise_three_dims(self):
        model = parse_model("UI+US+IS")
        group_a, group_b = split_model_terms(model, "U")
        assert group_a == (("I",), ("S",))
        assert group_b == ((("I", "S"))[0:0] + ("I", "S"),) or group_b == (("I", "S"),)

    def test_nway(self):
        group_a, group_b = split_model_terms(parse_model("USQI"), "I")
        assert group_a == (("U", "S", "Q"),)
        assert group_b == ()

    def test_interaction_model(self):
        group_a, group_b = split_model_terms(parse_model("UI+USI+UQI"), "S")
        assert group_a == (("U", "I"),)
        assert group_b == (("U", "I"), ("U", "Q", "I"))

    def test_missing_dimension_is_error(self):
        with pytest.raises(ConfigError):
            split_model_terms(parse_model("UI"), "S")


class TestAssembleMissingPart:
    def test_explicit_mode_zero(self):
        rng = np.random.default_rng(1)
        ds = synthetic_dataspace(rng, (4, 5), 8, explicit=True)
        fm = init_model(ds, parse_model("UI"), small_config(seed=1))
        J, I_vec = assemble_missing_part(fm, "U", WeightingScheme.explicit())
        assert np.all(J == 0) and np.all(I_vec == 0)

    def test_single_term_model(self):
        rng = np.random.default_rng(1)
        ds = synthetic_dataspace(rng, (4, 5), 8)
        fm = init_model(ds, parse_model("UI"), small_config(seed=2))
        J, I_vec = assemble_missing_part(fm, "U", WeightingScheme.implicit())
        assert np.allclose(J, fm.cov[1], atol=1e-12)
        assert np.all(I_vec == 0)

    def test_pairwise_matches_enumeration(self):
        rng = np.random.default_rng(5)
        ds = synthetic_dataspace(rng, (5, 6, 4), 10)
        fm = init_model(ds, parse_model("UI+US+IS"), small_config(seed=3))
        J, I_vec = assemble_missing_part(fm, "U", WeightingScheme.implicit())
        MI, MS = fm.matrices[1], fm.matrices[2]
        J_ref = np.zeros((3, 3))
        I_ref = np.zeros(3)
        for i in range(6):
            for s in range(4):
                q1 = MI[:, i] + MS[:, s]
                q2 = float((MI[:, i] * MS[:, s]).sum())
                J_ref += np.outer(q1, q1)
                I_ref += q1 * q2
        assert np.max(np.abs(J - J_ref)) <= 1e-10
        assert np.max(np.abs(I_vec - I_ref)) <= 1e-10

    def test_factorized_matches_enumeration(self):
        rng = np.random.default_rng(6)
        ds = synthetic_dataspace(rng, (4, 5, 3), 10)
        scheme = WeightingScheme.factorized(
            mu=(1.0, 0.5, 0.0),
            gamma=(0.1, 0.5, 2.0),
            v=(rng.uniform(0, 1, 4), rng.uniform(0, 1, 5), None),
            alpha=10,
        )
        fm = init_model(ds, parse_model("UI+US+IS"), small_config(seed=4))
        J, I_vec = assemble_missing_part(fm, "U", scheme)
        MI, MS = fm.matrices[1], fm.matrices[2]
        fac_i = scheme.dimension_factors(1, 5)
        fac_s = scheme.dimension_factors(2, 3)
        J_ref = np.zeros((3, 3))
        I_ref = np.zeros(3)
        for i in range(5):
            for s in range(3):
                w = fac_i[i] * fac_s[s]  # dim-U factor applied by the caller
                q1 = MI[:, i] + MS[:, s]
                q2 = float((MI[:, i] * MS[:, s]).sum())
                J_ref += w * np.outer(q1, q1)
                I_ref += w * q1 * q2
        assert np.max(np.abs(J - J_ref)) <= 1e-10
        assert np.max(np.abs(I_vec - I_ref)) <= 1e-10

    def test_stale_stats_detected(self):
        rng = np.random.default_rng(1)
        ds = synthetic_dataspace(rng, (4, 5), 8)
        fm = init_model(ds, parse_model("UI"), small_config())
        fm.set_column(1, 0, np.ones(3))
        with pytest.raises(ConsistencyError, match="'I'"):
            assemble_missing_part(fm, "U", WeightingScheme.implicit())
        fm.refresh_stats(1)
        assemble_missing_part(fm, "U", WeightingScheme.implicit())


class TestAccumulateObservedPart:
    def test_unobserved_entity_is_zero(self):
        rng = np.random.default_rng(2)
        ds = synthetic_dataspace(rng, (6, 4), 3)
        fm = init_model(ds, parse_model("UI"), small_config())
        observed_users = set(ds.tuples[:, 0])
        empty = next(u for u in range(6) if u not in observed_users)
        Jp, rhs = accumulate_observed_part(ds, fm, "U", empty, WeightingScheme.implicit())
        assert np.all(Jp == 0) and np.all(rhs == 0)

    def test_single_tuple_formula(self):
        rng = np.random.default_rng(4)
        ds = synthetic_dataspace(rng, (2, 3), 1, max_count=1)
        fm = init_model(ds, parse_model("UI"), small_config(seed=5))
        u, i = ds.tuples[0]
        q1 = fm.matrices[1][:, i]
        Jp, rhs = accumulate_observed_part(ds, fm, "U", int(u), WeightingScheme.implicit(alpha=40))
        assert np.allclose(Jp, 39 * np.outer(q1, q1), atol=1e-12)
        assert np.allclose(rhs, 40 * q1, atol=1e-12)

    def test_system_gradient_matches_bruteforce(self):
        # (A m - b) must equal half the loss gradient at any test point
        rng = np.random.default_rng(8)
        ds = synthetic_dataspace(rng, (5, 6, 4), 25)
        scheme = WeightingScheme.implicit(alpha=7)
        fm = init_model(ds, parse_model("UI+US+IS"), small_config(seed=6))
        observed, ratings = observed_maps(ds)
        lam = 0.3
        for dim, d in (("U", 0), ("I", 1), ("S", 2)):
            for entity in range(ds.sizes[d]):
                A, b = assembled_system(ds, fm, dim, entity, scheme, lam)
                grad = 2.0 * (A @ fm.matrices[d][:, entity] - b)
                ref = column_gradient_bruteforce(
                    fm.matrices, terms_as_indices(fm), d, entity, observed, ratings, scheme, lam
                )
                assert np.max(np.abs(grad - ref)) <= 1e-9

    def test_numeric_gradient_agrees(self):
        rng = np.random.default_rng(9)
        ds = synthetic_dataspace(rng, (4, 4, 3), 12)
        scheme = WeightingScheme.implicit(alpha=5)
        fm = init_model(ds, parse_model("UI+USI"), small_config(seed=9))
        observed, ratings = observed_maps(ds)
        terms = terms_as_indices(fm)
        lam = 0.2
        d, entity = 1, 2
        analytic = column_gradient_bruteforce(
            fm.matrices, terms, d, entity, observed, ratings, scheme, lam
        )
        step = 1e-5
        numeric = np.zeros_like(analytic)
        for row in range(fm.k):
            for sign in (+1, -1):
                fm.matrices[d][row, entity] += sign * step
                value = loss_double_loop(
                    fm.matrices, terms, ds.sizes, observed, ratings, scheme, lam
                )
                numeric[row] += sign * value / (2 * step)
                fm.matrices[d][row, entity] -= sign * step
        assert np.allclose(numeric, analytic, rtol=1e-4, atol=1e-7)


class TestSolveColumn:
    def test_identity_single_cg_iteration(self):
        cfg = small_config(solver="cg", cg_iters=1, cg_tol=0.0)
        b = np.array([1.0, -2.0, 0.5])
        x = solve_column(np.eye(3), b, cfg, warm_start=np.zeros(3))
        assert np.allclose(x, b, atol=1e-15)

    def test_cg_matches_direct_in_k_steps(self):
        rng = np.random.default_rng(10)
        G = rng.normal(size=(8, 8))
        A = G @ G.T + 0.5 * np.eye(8)
        b = rng.normal(size=8)
        direct = solve_column(A, b, small_config(solver="direct"))
        cg = solve_column(
            A, b, small_config(solver="cg", cg_iters=8, cg_tol=0.0), warm_start=np.zeros(8)
        )
        assert np.linalg.norm(cg - direct) / np.linalg.norm(direct) <= 1e-8

    def test_warm_start_at_solution_returns_immediately(self):
        rng = np.random.default_rng(11)
        G = rng.normal(size=(4, 4))
        A = G @ G.T + np.eye(4)
        x_true = rng.normal(size=4)
        b = A @ x_true
        out = solve_column(A, b, small_config(solver="cg", cg_iters=5, cg_tol=0.0), x_true)
        assert np.array_equal(out, x_true)

    def test_singular_direct_raises(self):
        with pytest.raises(SolverError):
            solve_column(np.zeros((3, 3)), np.ones(3), small_config(solver="direct"))


SCHEME_CASES = [
    WeightingScheme.implicit(alpha=40),
    WeightingScheme.implicit(alpha=2),
    WeightingScheme.explicit(),
]


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(3))
    def test_all_models_all_dimensions(self, seed):
        rng = np.random.default_rng(100 + seed)
        sizes = tuple(int(rng.integers(2, hi + 1)) for hi in (6, 6, 5, 4))
        k = int(rng.integers(1, 5))
        lam = float(rng.choice([0.0, 0.1, 1.0]))
        ds = synthetic_dataspace(
            rng, sizes, int(0.4 * np.prod(sizes)) + 1, explicit=True
        )
        observed, ratings = observed_maps(ds)
        for scheme in SCHEME_CASES:
            for text in COMPARISON_MODELS:
                model = parse_model(text)
                fm = init_model(ds, model, small_config(k=k, seed=seed))
                terms = terms_as_indices(fm)
                for d, dim in enumerate(ds.names):
                    entity = int(rng.integers(ds.sizes[d]))
                    A, b = assembled_system(ds, fm, dim, entity, scheme, lam)
                    A_ref, b_ref = normal_equations_bruteforce(
                        fm.matrices, terms, d, entity, observed, ratings, scheme, lam
                    )
                    assert np.max(np.abs(A - A_ref)) <= 1e-9
                    assert np.max(np.abs(b - b_ref)) <= 1e-9

    def test_factorized_scheme(self):
        rng = np.random.default_rng(42)
        sizes = (5, 4, 3)
        ds = synthetic_dataspace(rng, sizes, 18)
        scheme = WeightingScheme.factorized(
            mu=(1.0, 0.0, 0.7),
            gamma=(0.2, 1.5, 0.3),
            v=(rng.uniform(0, 1, 5), None, rng.uniform(0, 1, 3)),
            alpha=9,
        )
        observed, ratings = observed_maps(ds)
        fm = init_model(ds, parse_model("UI+US+IS"), small_config(k=3, seed=1))
        terms = terms_as_indices(fm)
        for d, dim in enumerate(ds.names):
            for entity in range(sizes[d]):
                A, b = assembled_system(ds, fm, dim, entity, scheme, 0.5)
                A_ref, b_ref = normal_equations_bruteforce(
                    fm.matrices, terms, d, entity, observed, ratings, scheme, 0.5
                )
                assert np.max(np.abs(A - A_ref)) <= 1e-9
                assert np.max(np.abs(b - b_ref)) <= 1e-9


class TestTraining:
    def test_monotone_descent_direct(self):
        rng = np.random.default_rng(21)
        ds = synthetic_dataspace(rng, (5, 5, 4), 30)
        scheme = WeightingScheme.implicit(alpha=10)
        cfg = small_config(k=3, epochs=1, regularization=0.2, seed=2)
        fm = init_model(ds, parse_model("UI+USI"), cfg, scheme=scheme)
        losses = [compute_loss_naive(ds, fm, scheme, 0.2)]
        for _ in range(4):
            for dim in ds.names:
                update_dimension(ds, fm, dim, scheme, cfg)
                losses.append(compute_loss_naive(ds, fm, scheme, 0.2))
        for before, after in zip(losses, losses[1:]):
            assert after <= before + 1e-9

    def test_ui_implicit_matches_naive_als_lockstep(self):
        rng = np.random.default_rng(22)
        ds = synthetic_dataspace(rng, (5, 6), 12)
        alpha, lam = 40.0, 0.1
        scheme = WeightingScheme.implicit(alpha=alpha)
        cfg = small_config(k=3, regularization=lam, seed=3)
        fm = init_model(ds, parse_model("UI"), cfg, scheme=scheme)
        counts = np.zeros((5, 6))
        for (u, i), c in ds.observed_counts().items():
            counts[u, i] = c
        mirror_u = fm.matrices[0].copy()
        mirror_i = fm.matrices[1].copy()
        for _ in range(3):
            update_dimension(ds, fm, "U", scheme, cfg)
            mirror_u = implicit_als_update_naive(counts, mirror_u, mirror_i, alpha, lam)
            assert np.max(np.abs(fm.matrices[0] - mirror_u)) <= 1e-8
            update_dimension(ds, fm, "I", scheme, cfg)
            mirror_i = implicit_als_update_naive(counts.T, mirror_i, mirror_u, alpha, lam)
            assert np.max(np.abs(fm.matrices[1] - mirror_i)) <= 1e-8

    def test_ui_explicit_reaches_classic_stationarity(self):
        rng = np.random.default_rng(23)
        ds = synthetic_dataspace(rng, (4, 5), 14, explicit=True)
        scheme = WeightingScheme.explicit()
        lam = 1.0
        cfg = small_config(k=2, epochs=1, regularization=lam, seed=4)
        fm = init_model(ds, parse_model("UI"), cfg, scheme=scheme)
        ratings = {tuple(t): r for t, r in zip(ds.tuples.tolist(), ds.ratings)}

        def classic_residual(d, other):
            worst = 0.0
            for e in range(ds.sizes[d]):
                A = lam * np.eye(2)
                b = np.zeros(2)
                for cell, r in ratings.items():
                    if cell[d] != e:
                        continue
                    q = fm.matrices[other][:, cell[other]]
                    A += np.outer(q, q)
                    b += r * q
                worst = max(worst, np.linalg.norm(A @ fm.matrices[d][:, e] - b))
            return worst

        prev = [m.copy() for m in fm.matrices]
        for _ in range(300):
            update_dimension(ds, fm, "U", scheme, cfg)
            # right after its update, a dimension satisfies the classic
            # normal equations exactly: the update IS the classic ALS step
            assert classic_residual(0, 1) <= 1e-10
            update_dimension(ds, fm, "I", scheme, cfg)
            assert classic_residual(1, 0) <= 1e-10
            change = max(np.max(np.abs(a - b)) for a, b in zip(fm.matrices, prev))
            prev = [m.copy() for m in fm.matrices]
            if change <= 1e-11:
                break
        # at the joint fixed point both sides are stationary simultaneously
        assert classic_residual(0, 1) <= 1e-8
        assert classic_residual(1, 0) <= 1e-8

    def test_stationarity_after_training(self):
        rng = np.random.default_rng(24)
        ds = synthetic_dataspace(rng, (4, 4, 3), 15)
        scheme = WeightingScheme.implicit(alpha=5)
        lam = 0.1
        fm = train(
            ds, parse_model("UI+USI"), scheme, small_config(k=2, epochs=30, regularization=lam, seed=5)
        )
        observed, ratings = observed_maps(ds)
        terms = terms_as_indices(fm)
        for d in range(3):
            for e in range(ds.sizes[d]):
                grad = column_gradient_bruteforce(
                    fm.matrices, terms, d, e, observed, ratings, scheme, lam
                )
                assert np.max(np.abs(grad)) <= 1e-6

    def test_cg_training_matches_direct(self):
        rng = np.random.default_rng(25)
        ds = synthetic_dataspace(rng, (5, 5, 3), 20)
        scheme = WeightingScheme.implicit(alpha=8)
        direct = train(
            ds, parse_model("UI+USI"), scheme, small_config(k=3, epochs=5, seed=6)
        )
        cg = train(
            ds,
            parse_model("UI+USI"),
            scheme,
            small_config(k=3, epochs=5, seed=6, solver="cg", cg_iters=3, cg_tol=0.0),
        )
        for a, b in zip(direct.matrices, cg.matrices):
            assert np.max(np.abs(a - b)) <= 1e-6

    def test_deterministic_and_thread_invariant(self):
        rng = np.random.default_rng(26)
        ds = synthetic_dataspace(rng, (6, 5, 3), 25)
        scheme = WeightingScheme.implicit(alpha=10)
        runs = [
            train(ds, parse_model("UI+USI"), scheme, small_config(seed=7, n_threads=t))
            for t in (1, 1, 3)
        ]
        for other in runs[1:]:
            for a, b in zip(runs[0].matrices, other.matrices):
                assert np.array_equal(a, b)

    def test_unobserved_entities_solved(self):
        rng = np.random.default_rng(27)
        ds = synthetic_dataspace(rng, (8, 4), 5)
        scheme = WeightingScheme.implicit(alpha=10)
        fm = train(ds, parse_model("UI"), scheme, small_config(seed=8))
        observed_users = set(ds.tuples[:, 0].tolist())
        empty = [u for u in range(8) if u not in observed_users]
        assert empty, "instance needs unobserved entities"
        # all unobserved columns satisfy the same missing-data system
        for u in empty:
            A, b = assembled_system(ds, fm, "U", u, scheme, 0.1)
            assert np.linalg.norm(A @ fm.matrices[0][:, u] - b) <= 1e-9

    def test_progress_records(self):
        rng = np.random.default_rng(28)
        ds = synthetic_dataspace(rng, (4, 4), 6)
        out = io.StringIO()
        train(
            ds,
            parse_model("UI"),
            WeightingScheme.implicit(),
            small_config(epochs=2, seed=9),
            progress=out,
            track_loss=True,
        )
        lines = out.getvalue().strip().split("\n")
        assert len(lines) == 4
        pattern = re.compile(r"^epoch=\d+ dim=[UI] seconds=\d+\.\d+ loss=[\d.eE+-]+$")
        assert all(pattern.match(line) for line in lines)

    def test_term_weights_must_be_unit(self):
        rng = np.random.default_rng(29)
        ds = synthetic_dataspace(rng, (4, 4), 6)
        from ctxfact import PreferenceModel

        model = PreferenceModel((("U", "I"),), term_weights=(2.0,))
        with pytest.raises(ConfigError, match="unit weights"):
            train(ds, model, WeightingScheme.implicit(), small_config())

    def test_explicit_needs_ratings(self):
        rng = np.random.default_rng(30)
        ds = synthetic_dataspace(rng, (4, 4), 6)
        with pytest.raises(ConfigError, match="rating"):
            train(ds, parse_model("UI"), WeightingScheme.explicit(), small_config())


class TestLossNaive:
    def test_zero_factors_loss_is_weighted_count(self):
        rng = np.random.default_rng(31)
        ds = synthetic_dataspace(rng, (4, 5), 9)
        fm = init_model(ds, parse_model("UI"), small_config(init_scale=0.0))
        scheme = WeightingScheme.implicit(alpha=40)
        expected = float((40 * ds.counts).sum())
        assert compute_loss_naive(ds, fm, scheme) == pytest.approx(expected)

    def test_perfect_fit_explicit(self):
        rng = np.random.default_rng(32)
        ds = synthetic_dataspace(rng, (3, 4), 7, explicit=True)
        u = np.array([[0.5, -1.0, 2.0]])
        v = np.array([[1.5, 0.2, -0.3, 1.0]])
        # make every observed rating exactly the rank-1 product
        ds.ratings = np.array([float(u[0, a] * v[0, b]) for a, b in ds.tuples])
        fm = FactorModel(parse_model("UI"), 1, ds.names, ds.vocabularies, [u, v])
        lam = 0.25
        loss = compute_loss_naive(ds, fm, WeightingScheme.explicit(), lam)
        expected = lam * (float(np.sum(u * u)) + float(np.sum(v * v)))
        assert loss == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("scheme_idx", range(3))
    def test_matches_double_loop(self, scheme_idx):
        rng = np.random.default_rng(33)
        ds = synthetic_dataspace(rng, (5, 6, 4), 22, explicit=True)
        schemes = SCHEME_CASES + [
            WeightingScheme.factorized(
                mu=(0.5, 1.0, 0.0),
                gamma=(0.5, 0.2, 1.3),
                v=(rng.uniform(0, 1, 5), rng.uniform(0, 1, 6), None),
                alpha=4,
            )
        ]
        scheme = schemes[scheme_idx]
        fm = init_model(ds, parse_model("UI+US+IS"), small_config(seed=11))
        observed, ratings = observed_maps(ds)
        expected = loss_double_loop(
            fm.matrices, terms_as_indices(fm), ds.sizes, observed, ratings, scheme, 0.15
        )
        got = compute_loss_naive(ds, fm, scheme, 0.15)
        assert got == pytest.approx(expected, rel=1e-10)

    def test_enumeration_guard(self):
        rng = np.random.default_rng(34)
        ds = synthetic_dataspace(rng, (500, 500, 50), 10)
        fm = init_model(ds, parse_model("UI+US"), small_config(k=1))
        with pytest.raises(ConfigError, match="guard"):
            compute_loss_naive(ds, fm, WeightingScheme.implicit())


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(k=0)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(regularization=-1.0)
        with pytest.raises(ConfigError):
            TrainConfig(solver="lbfgs")
        with pytest.raises(ConfigError):
            TrainConfig(cg_iters=0)

    def test_per_dimension_regularization(self):
        cfg = TrainConfig(regularization={"U": 0.5, "*": 0.1})
        assert cfg.lambda_for("U") == 0.5
        assert cfg.lambda_for("I") == 0.1
        with pytest.raises(ConfigError):
            TrainConfig(regularization={"U": 0.5}).lambda_for("I")


def test_prediction_invariant_to_term_and_dimension_order():
    rng = np.random.default_rng(35)
    ds = synthetic_dataspace(rng, (4, 4, 3), 10)
    cfg = small_config(seed=12)
    fm = init_model(ds, parse_model("UI+USI"), cfg)
    reordered = FactorModel(
        parse_model("USI+IU"), fm.k, fm.dim_names, fm.vocabularies, [m.copy() for m in fm.matrices]
    )
    from ctxfact import predict

    for cell in [(0, 1, 2), (3, 0, 0), (2, 3, 1)]:
        assert predict(fm, cell) == pytest.approx(predict(reordered, cell), rel=1e-12)
