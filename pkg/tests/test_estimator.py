import math

import numpy as np
import pytest

from nondecomp.estimator import (
    DenseModel,
    FactoredModel,
    ObservationSet,
    SolverConfig,
    default_lambda,
    fit_alt_min,
    fit_plugin_baseline,
    fit_prox_grad,
    grad_empirical,
    nuclear_norm,
    objective,
    predict_scores,
    prox_nuclear,
    recovery_error,
)
from nondecomp.losses import get_loss, sigmoid


def random_instance(rng, n, d, L, frac=0.7, loss="logistic"):
    X = rng.normal(size=(n, d))
    W = rng.normal(size=(d, L))
    m = max(1, int(frac * n * L))
    codes = rng.choice(n * L, size=m, replace=False)
    rows, cols = codes // L, codes % L
    if loss == "gaussian":
        values = (X @ W)[rows, cols] + rng.normal(size=m)
    else:
        values = rng.integers(0, 2, size=m).astype(float)
    return X, ObservationSet(n, L, rows, cols, values)


class TestObservationSet:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            ObservationSet(2, 2, [0, 0], [1, 1], [1.0, 0.0])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            ObservationSet(2, 2, [0, 2], [0, 0], [1.0, 0.0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            ObservationSet(2, 2, [], [], [])

    def test_from_entries(self):
        obs = ObservationSet.from_entries(3, 2, [(0, 0, 1.0), (2, 1, 0.0)])
        assert obs.size == 2
        assert obs.rows.tolist() == [0, 2]


class TestObjective:
    def test_zero_matrix_logistic(self):
        rng = np.random.default_rng(0)
        X, obs = random_instance(rng, 6, 3, 4)
        cfg = SolverConfig(loss=get_loss("logistic"), lambda_reg=3.7)
        W = np.zeros((3, 4))
        assert objective(X, obs, W, cfg) == pytest.approx(math.log(2))

    def test_lambda_zero_is_pure_risk(self):
        rng = np.random.default_rng(1)
        X, obs = random_instance(rng, 5, 3, 3)
        W = rng.normal(size=(3, 3))
        cfg = SolverConfig(loss=get_loss("logistic"), lambda_reg=0.0)
        t = (X @ W)[obs.rows, obs.cols]
        expect = float(np.mean(np.logaddexp(0.0, -(2 * obs.values - 1) * t)))
        assert objective(X, obs, W, cfg) == pytest.approx(expect, rel=1e-12)

    def test_matches_entrywise_reference(self):
        # 2x2 instance checked scalar by scalar
        X = np.array([[1.0, 0.5], [-0.3, 2.0]])
        W = np.array([[0.2, -1.0], [0.7, 0.1]])
        obs = ObservationSet(2, 2, [0, 0, 1], [0, 1, 1], [1.0, 0.0, 1.0])
        lam = 0.05
        cfg = SolverConfig(loss=get_loss("logistic"), lambda_reg=lam)
        total = 0.0
        for i, j, y in [(0, 0, 1.0), (0, 1, 0.0), (1, 1, 1.0)]:
            t = X[i] @ W[:, j]
            total += math.log(1 + math.exp(-(2 * y - 1) * t))
        expect = total / 3 + lam * nuclear_norm(W)
        assert objective(X, obs, W, cfg) == pytest.approx(expect, rel=1e-12)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(2)
        X, obs = random_instance(rng, 4, 3, 3)
        cfg = SolverConfig()
        with pytest.raises(ValueError):
            objective(X, obs, np.zeros((2, 3)), cfg)


class TestGradEmpirical:
    def test_single_observation_identity_features(self):
        X = np.eye(3)
        W = np.array([[0.5, 0.0], [0.0, -1.0], [0.3, 0.2]])
        obs = ObservationSet(3, 2, [1], [1], [0.0])
        G = grad_empirical(X, obs, W, get_loss("logistic"))
        expect = np.zeros((3, 2))
        expect[1, 1] = float(sigmoid(W[1, 1])) - 0.0
        np.testing.assert_allclose(G, expect, atol=1e-15)

    @pytest.mark.parametrize("loss_name", ["logistic", "squared"])
    def test_matches_finite_differences(self, loss_name):
        rng = np.random.default_rng(3)
        loss = get_loss(loss_name)
        for _ in range(10):
            n, d, L = rng.integers(3, 8), rng.integers(2, 6), rng.integers(2, 5)
            X, obs = random_instance(rng, int(n), int(d), int(L))
            W = rng.normal(size=(int(d), int(L)))
            G = grad_empirical(X, obs, W, loss)
            h = 1e-6
            for _ in range(5):
                a, b = rng.integers(0, d), rng.integers(0, L)
                Wp, Wm = W.copy(), W.copy()
                Wp[a, b] += h
                Wm[a, b] -= h
                def risk(Wm_):
                    t = (X @ Wm_)[obs.rows, obs.cols]
                    return float(np.mean(loss.value(t, obs.values)))
                fd = (risk(Wp) - risk(Wm)) / (2 * h)
                assert abs(G[a, b] - fd) / (1 + abs(fd)) < 1e-5

    def test_zero_at_interpolation_gaussian(self):
        # real-valued labels realized exactly by the true parameters
        rng = np.random.default_rng(4)
        X = rng.normal(size=(8, 3))
        W = rng.normal(size=(3, 4))
        rows = np.repeat(np.arange(8), 4)
        cols = np.tile(np.arange(4), 8)
        obs = ObservationSet(8, 4, rows, cols, (X @ W)[rows, cols])
        G = grad_empirical(X, obs, W, get_loss("gaussian"))
        np.testing.assert_allclose(G, 0.0, atol=1e-12)


class TestProxNuclear:
    def test_tau_zero_identity(self):
        A = np.random.default_rng(5).normal(size=(4, 3))
        np.testing.assert_allclose(prox_nuclear(A, 0.0), A, atol=1e-12)

    def test_tau_above_spectral_norm_zeroes(self):
        A = np.random.default_rng(6).normal(size=(4, 3))
        tau = float(np.linalg.svd(A, compute_uv=False)[0]) + 0.1
        np.testing.assert_allclose(prox_nuclear(A, tau), 0.0, atol=1e-12)

    def test_diagonal_closed_form(self):
        A = np.diag([3.0, 1.0])
        np.testing.assert_allclose(prox_nuclear(A, 1.0), np.diag([2.0, 0.0]), atol=1e-12)

    def test_optimality_against_perturbations(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            A = rng.normal(size=(rng.integers(2, 7), rng.integers(2, 7)))
            tau = float(rng.uniform(0.01, 2.0))
            B = prox_nuclear(A, tau)
            val = 0.5 * np.sum((B - A) ** 2) + tau * nuclear_norm(B)
            for _ in range(20):
                Bp = B + rng.normal(size=B.shape) * rng.uniform(1e-4, 0.5)
                val_p = 0.5 * np.sum((Bp - A) ** 2) + tau * nuclear_norm(Bp)
                assert val <= val_p + 1e-10


class TestFitProxGrad:
    def test_huge_lambda_gives_zero(self):
        rng = np.random.default_rng(8)
        X, obs = random_instance(rng, 10, 4, 5)
        cfg = SolverConfig(loss=get_loss("logistic"), lambda_reg=50.0, max_iters=50)
        model, report = fit_prox_grad(X, obs, cfg)
        np.testing.assert_allclose(model.W, 0.0, atol=1e-12)
        assert report.final_rank == 0

    def test_trace_nonincreasing(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            X, obs = random_instance(rng, 8, 3, 4)
            cfg = SolverConfig(loss=get_loss("logistic"), max_iters=40)
            _, report = fit_prox_grad(X, obs, cfg)
            trace = np.asarray(report.objective_trace)
            assert np.all(np.diff(trace) <= 1e-10)

    def test_nuclear_norm_monotone_in_lambda(self):
        rng = np.random.default_rng(10)
        X, obs = random_instance(rng, 12, 4, 6)
        norms = []
        for lam in (0.001, 0.01, 0.05, 0.2, 1.0):
            cfg = SolverConfig(loss=get_loss("logistic"), lambda_reg=lam, max_iters=300, rel_tol=1e-9)
            model, _ = fit_prox_grad(X, obs, cfg)
            norms.append(nuclear_norm(model.W))
        diffs = np.diff(norms)
        assert np.all(diffs <= 1e-8)

    def test_recovery_beats_shrink_to_zero_noise_free(self):
        # sign-thresholded labels carry no scale information, so exact
        # parameter recovery is capped; the fit must still be several times
        # closer to the truth than the huge-lambda (all-zeros) solution
        from nondecomp.sampler import OmegaDistribution, SyntheticSpec, generate_problem
        from nondecomp.dataset_io import mask_observations

        spec = SyntheticSpec(n=1000, L=100, d=10, rank=5, seed=0,
                             noise_model="noise_free_sign")
        X, W_star, Y = generate_problem(spec)
        obs = mask_observations(Y, 0.5, OmegaDistribution.uniform(), seed=0)
        cfg = SolverConfig(loss=get_loss("logistic"), seed=0, max_iters=400,
                           rel_tol=1e-8, lambda_c=0.05)
        model, _ = fit_prox_grad(X, obs, cfg)
        err = recovery_error(model.W, W_star)
        baseline = recovery_error(np.zeros_like(W_star), W_star)
        assert err * 3.0 < baseline

    def test_recovery_beats_shrink_to_zero_bernoulli_tenfold(self):
        # with probabilistic labels the likelihood pins the scale too, and
        # the fit lands an order of magnitude below the all-zeros baseline
        from nondecomp.sampler import OmegaDistribution, SyntheticSpec, generate_problem
        from nondecomp.dataset_io import mask_observations

        spec = SyntheticSpec(n=300, L=60, d=12, rank=3, seed=0,
                             noise_model="bernoulli_logistic", wstar_scale=0.33)
        X, W_star, Y = generate_problem(spec)
        obs = mask_observations(Y, 0.5, OmegaDistribution.uniform(), seed=0)
        cfg = SolverConfig(loss=get_loss("logistic"), seed=0, max_iters=600,
                           rel_tol=1e-8, lambda_c=0.05)
        model, _ = fit_prox_grad(X, obs, cfg)
        err = recovery_error(model.W, W_star)
        baseline = recovery_error(np.zeros_like(W_star), W_star)
        assert err * 10.0 < baseline

    def test_deterministic_trace(self):
        rng = np.random.default_rng(11)
        X, obs = random_instance(rng, 9, 3, 4)
        cfg = SolverConfig(loss=get_loss("logistic"), max_iters=30)
        _, r1 = fit_prox_grad(X, obs, cfg)
        _, r2 = fit_prox_grad(X, obs, cfg)
        assert r1.objective_trace == r2.objective_trace

    def test_score_norm_mode_runs_and_descends(self):
        rng = np.random.default_rng(12)
        X, obs = random_instance(rng, 10, 3, 4)
        cfg = SolverConfig(
            loss=get_loss("logistic"), lambda_reg=0.05,
            regularizer_mode="score_norm", max_iters=40,
        )
        model, report = fit_prox_grad(X, obs, cfg)
        trace = np.asarray(report.objective_trace)
        assert np.all(np.diff(trace) <= 1e-10)
        assert np.all(np.isfinite(model.W))


class TestFitAltMin:
    def test_matches_least_squares_at_full_rank(self):
        # squared loss, fully observed real-valued labels, no penalty:
        # alternating minimization must match the per-column normal equations
        rng = np.random.default_rng(13)
        n, d, L = 10, 8, 5
        X = rng.normal(size=(n, d))
        W_true = rng.normal(size=(d, L))
        rows = np.repeat(np.arange(n), L)
        cols = np.tile(np.arange(L), n)
        y = (X @ W_true)[rows, cols] + 0.1 * rng.normal(size=n * L)
        obs = ObservationSet(n, L, rows, cols, y)
        loss = get_loss("squared")
        cfg = SolverConfig(loss=loss, lambda_reg=0.0, max_iters=400, rel_tol=1e-12, seed=0)
        model, report = fit_alt_min(X, obs, cfg, k=min(d, L))

        # oracle: column-wise normal equations of the margin-form objective
        W_opt = np.zeros((d, L))
        ymar = 2 * y.reshape(n, L) - 1
        for j in range(L):
            Aj = ymar[:, j][:, None] * X
            W_opt[:, j] = np.linalg.solve(Aj.T @ Aj, Aj.T @ np.ones(n))
        t_opt = (X @ W_opt)[rows, cols]
        obj_opt = float(np.mean(loss.value(t_opt, y)))
        assert report.objective_trace[-1] == pytest.approx(obj_opt, abs=1e-6)

    def test_half_step_trace_nonincreasing(self):
        rng = np.random.default_rng(14)
        for _ in range(4):
            X, obs = random_instance(rng, 9, 4, 5)
            cfg = SolverConfig(loss=get_loss("logistic"), max_iters=25, seed=3)
            _, report = fit_alt_min(X, obs, cfg, k=2)
            trace = np.asarray(report.objective_trace)
            assert np.all(np.diff(trace) <= 1e-10)

    def test_rank_bounds_enforced(self):
        rng = np.random.default_rng(15)
        X, obs = random_instance(rng, 6, 3, 4)
        cfg = SolverConfig()
        with pytest.raises(ValueError, match="rank k"):
            fit_alt_min(X, obs, cfg, k=0)
        with pytest.raises(ValueError, match="rank k"):
            fit_alt_min(X, obs, cfg, k=4)

    def test_seed_reproducible(self):
        rng = np.random.default_rng(16)
        X, obs = random_instance(rng, 8, 3, 4)
        cfg = SolverConfig(loss=get_loss("logistic"), max_iters=15, seed=11)
        m1, r1 = fit_alt_min(X, obs, cfg, k=2)
        m2, r2 = fit_alt_min(X, obs, cfg, k=2)
        np.testing.assert_array_equal(m1.W1, m2.W1)
        assert r1.objective_trace == r2.objective_trace


class TestPluginBaseline:
    def test_separable_label_finite_and_correct_sign(self):
        rng = np.random.default_rng(17)
        X = rng.normal(size=(40, 3))
        w = np.array([1.0, -2.0, 0.5])
        y = (X @ w >= 0).astype(float)
        obs = ObservationSet(40, 1, np.arange(40), np.zeros(40, dtype=int), y)
        model = fit_plugin_baseline(X, obs, ridge=1e-3)
        assert np.all(np.isfinite(model.W))
        scores = X @ model.W[:, 0]
        assert np.mean((scores >= 0) == (y == 1)) > 0.9

    def test_all_positive_labels_push_probability_up(self):
        # 1-d fit on positive feature values: all-positive labels drive the
        # weight up, so every training score maps above one half
        rng = np.random.default_rng(18)
        X = rng.uniform(0.5, 2.0, size=(25, 1))
        obs = ObservationSet(25, 1, np.arange(25), np.zeros(25, dtype=int), np.ones(25))
        model = fit_plugin_baseline(X, obs, ridge=0.01)
        probs = sigmoid(X @ model.W[:, 0])
        assert np.all(probs > 0.5)

    def test_unobserved_label_gets_zero_column(self):
        rng = np.random.default_rng(19)
        X = rng.normal(size=(10, 3))
        obs = ObservationSet(10, 3, np.arange(10), np.zeros(10, dtype=int),
                             rng.integers(0, 2, size=10).astype(float))
        model = fit_plugin_baseline(X, obs, ridge=0.1)
        np.testing.assert_array_equal(model.W[:, 1], 0.0)
        np.testing.assert_array_equal(model.W[:, 2], 0.0)

    def test_negative_ridge_rejected(self):
        rng = np.random.default_rng(20)
        X, obs = random_instance(rng, 5, 2, 2)
        with pytest.raises(ValueError):
            fit_plugin_baseline(X, obs, ridge=-1.0)


class TestPredictAndRecovery:
    def test_identity_features(self):
        W = np.arange(6.0).reshape(3, 2)
        model = DenseModel(W=W)
        np.testing.assert_allclose(predict_scores(np.eye(3), model), W)

    def test_rank_one_outer_product(self):
        X = np.array([[2.0, -1.0]])
        model = FactoredModel(W1=np.array([[3.0], [1.0]]), W2=np.array([[0.5], [-2.0]]))
        expect = np.array([[(2 * 3 - 1 * 1) * 0.5, (2 * 3 - 1 * 1) * -2.0]])
        np.testing.assert_allclose(predict_scores(X, model), expect)

    def test_dense_factored_agree(self):
        rng = np.random.default_rng(21)
        W1 = rng.normal(size=(4, 2))
        W2 = rng.normal(size=(5, 2))
        X = rng.normal(size=(7, 4))
        dense = DenseModel(W=W1 @ W2.T)
        factored = FactoredModel(W1=W1, W2=W2)
        np.testing.assert_allclose(
            predict_scores(X, dense), predict_scores(X, factored), atol=1e-10
        )

    def test_gamma_clip(self):
        model = DenseModel(W=np.array([[10.0]]))
        Z = predict_scores(np.array([[5.0]]), model, gamma_clip=3.0)
        assert Z[0, 0] == 3.0

    def test_recovery_error_zero_and_ones(self):
        W = np.random.default_rng(22).normal(size=(3, 4))
        assert recovery_error(W, W) == 0.0
        assert recovery_error(W + 1.0, W) == pytest.approx(1.0)

    def test_recovery_error_entrywise(self):
        rng = np.random.default_rng(23)
        A = rng.normal(size=(3, 4))
        B = rng.normal(size=(3, 4))
        expect = sum((A[i, j] - B[i, j]) ** 2 for i in range(3) for j in range(4)) / 12
        assert recovery_error(A, B) == pytest.approx(expect, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            recovery_error(np.zeros((2, 2)), np.zeros((2, 3)))


class TestPUCorrectionEndToEnd:
    def test_corrected_fit_recovers_better_than_naive(self):
        # observed positives are a thinned subset; the unbiased loss undoes
        # the thinning bias that the naive fit absorbs into its parameters
        from nondecomp.losses import PULossWrapper
        from nondecomp.sampler import PUSpec, SyntheticSpec, generate_problem, pu_flip

        for seed in (0, 1, 2):
            spec = SyntheticSpec(
                n=120, L=30, d=6, rank=2, seed=seed,
                noise_model="bernoulli_logistic", wstar_scale=0.5,
            )
            X, W_star, Y = generate_problem(spec)
            flipped = pu_flip(Y, PUSpec(0.4), seed=seed)
            n, L = flipped.shape
            rows = np.repeat(np.arange(n), L)
            cols = np.tile(np.arange(L), n)
            obs = ObservationSet(n, L, rows, cols, flipped.ravel().astype(float))
            base = get_loss("logistic")
            errs = {}
            for label, loss in (("naive", base), ("corrected", PULossWrapper(base, 0.4))):
                cfg = SolverConfig(loss=loss, seed=seed, max_iters=400,
                                   rel_tol=1e-8, lambda_c=0.5)
                model, _ = fit_prox_grad(X, obs, cfg)
                errs[label] = recovery_error(model.W, W_star)
            assert errs["corrected"] < errs["naive"]


class TestDefaults:
    def test_default_lambda(self):
        assert default_lambda(10000) == pytest.approx(0.02)
        assert default_lambda(100, c=2.0) == pytest.approx(0.4)

    def test_solver_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(lambda_reg=-1.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iters=0)
        with pytest.raises(ValueError):
            SolverConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(regularizer_mode="both")
