"""Coordinate-ascent updates against dense references, plus loop behavior."""

import copy

import numpy as np
import pytest

from ordnmf.data import OrdinalMatrix
from ordnmf.errors import ConfigError, DataError, DegenerateThresholdError
from ordnmf.inference import (FitConfig, GammaVariationalMatrix, compute_elbo,
                              fit, init_state, load_state, local_update,
                              predict_scores, save_state,
                              update_item_factors, update_rate_hyperparams,
                              update_thresholds, update_user_factors,
                              ztp_mean)
from ordnmf.model import ThresholdSequence
from ordnmf.synthetic import default_thresholds, generate_dataset

from oracles import (dense_iteration, random_matrix, random_state_like,
                     threshold_objective, ztp_mean_series)


def run_iteration(state, data, **kw):
    """Apply one library iteration in the canonical phase order."""
    stats = local_update(state, data, kw.get("pf_approximation", False))
    update_user_factors(state, data, stats)
    update_item_factors(state, data, stats)
    if kw.get("learn_thresholds", True):
        state.thresholds, _ = update_thresholds(state, data, stats)
    if kw.get("update_rates", True):
        update_rate_hyperparams(state)
    return stats


class TestZtpMean:
    def test_small_argument_limit(self):
        assert ztp_mean(1e-14) == pytest.approx(1.0, abs=1e-10)

    def test_truncated_sum_oracle(self):
        for x in (0.1, 0.5, 1.0, 2.0, 5.0):
            np.testing.assert_allclose(ztp_mean(x), ztp_mean_series(x),
                                       rtol=1e-10)
        assert abs(ztp_mean(1.0) - 1.581977) < 1e-6

    def test_large_argument_asymptote(self):
        assert ztp_mean(50.0) == pytest.approx(50.0, rel=1e-12)

    def test_always_at_least_one(self):
        x = np.random.default_rng(0).uniform(1e-8, 30, size=1000)
        assert np.all(ztp_mean(x) >= 1.0)

    def test_domain(self):
        with pytest.raises(ValueError):
            ztp_mean(0.0)


class TestInitState:
    def test_deterministic(self):
        rng = np.random.default_rng(1)
        data = random_matrix(6, 5, 3, rng)
        cfg = FitConfig(n_components=3, seed=11)
        a = init_state(cfg, data)
        b = init_state(cfg, data)
        np.testing.assert_array_equal(a.W.shape, b.W.shape)
        np.testing.assert_array_equal(a.H.rate, b.H.rate)
        np.testing.assert_array_equal(a.thresholds.theta, b.thresholds.theta)

    def test_initial_thresholds_decreasing(self):
        rng = np.random.default_rng(2)
        data = random_matrix(8, 7, 5, rng)
        state = init_state(FitConfig(n_components=2), data)
        assert np.all(np.diff(state.thresholds.theta) < 0)
        assert state.thresholds.n_classes == 5

    def test_binary_mode_pins_threshold(self):
        rng = np.random.default_rng(3)
        data = random_matrix(5, 4, 1, rng)
        state = init_state(FitConfig(n_components=2, bepof_mode=True), data)
        assert state.thresholds.theta.tolist() == [1.0]

    def test_errors(self):
        rng = np.random.default_rng(4)
        data = random_matrix(5, 4, 3, rng)
        with pytest.raises(ConfigError):
            FitConfig(n_components=0)
        with pytest.raises(ConfigError):
            init_state(FitConfig(n_components=2, bepof_mode=True), data)
        empty = OrdinalMatrix(3, 3, 2, [], [], [])
        with pytest.raises(DataError):
            init_state(FitConfig(n_components=2), empty)


class TestLocalUpdate:
    def test_single_component_allocates_everything(self):
        rng = np.random.default_rng(5)
        data = random_matrix(5, 4, 3, rng)
        state = random_state_like(data, 1, rng)
        stats = local_update(state, data)
        np.testing.assert_allclose(stats.cw.sum(),
                                   stats.e_n.sum(), rtol=1e-12)

    def test_multinomial_totals(self):
        rng = np.random.default_rng(6)
        data = random_matrix(6, 5, 4, rng)
        state = random_state_like(data, 3, rng)
        stats = local_update(state, data)
        # per-entry totals hold, so do the (u, k) and (i, k) aggregates
        np.testing.assert_allclose(stats.cw.sum(), stats.e_n.sum(),
                                   rtol=1e-12)
        np.testing.assert_allclose(stats.ch.sum(), stats.e_n.sum(),
                                   rtol=1e-12)

    def test_truncated_count_mean_at_least_one(self):
        rng = np.random.default_rng(7)
        data = random_matrix(6, 5, 4, rng)
        state = random_state_like(data, 3, rng)
        assert np.all(local_update(state, data).e_n >= 1.0)
        np.testing.assert_array_equal(
            local_update(state, data, pf_approximation=True).e_n, 1.0)

    def test_aggregates_match_dense_reference(self):
        rng = np.random.default_rng(8)
        data = random_matrix(2, 2, 2, rng, density=0.9)
        state = random_state_like(data, 2, rng)
        stats = local_update(state, data)
        y = data.to_dense()
        GW, GH = state.W.geo_mean, state.H.geo_mean
        cw_ref = np.zeros_like(stats.cw)
        for u in range(2):
            for i in range(2):
                if y[u, i] == 0:
                    continue
                lam_k = GW[u] * GH[i]
                lam = lam_k.sum()
                x = lam * state.thresholds.delta[y[u, i] - 1]
                e_n = x / (1 - np.exp(-x))
                cw_ref[u] += e_n * lam_k / lam
        np.testing.assert_allclose(stats.cw, cw_ref, rtol=1e-12)


class TestFactorUpdates:
    def test_all_zero_row_keeps_prior(self):
        dense = np.array([[1, 2], [0, 0]])
        data = OrdinalMatrix(2, 2, 2, *_triplets(dense))
        rng = np.random.default_rng(9)
        state = random_state_like(data, 2, rng)
        theta0 = state.thresholds.theta[0]
        expect_rate = state.beta_w[1] + theta0 * state.H.mean.sum(axis=0)
        stats = local_update(state, data)
        update_user_factors(state, data, stats)
        np.testing.assert_allclose(state.W.shape[1], state.alpha_w, rtol=1e-12)
        np.testing.assert_allclose(state.W.rate[1], expect_rate, rtol=1e-12)

    def test_binary_rate_independent_of_classes(self):
        # with V = 1 the exposure is theta_0 for every cell
        rng = np.random.default_rng(10)
        data = random_matrix(5, 4, 1, rng)
        state = random_state_like(data, 2, rng)
        state.thresholds = ThresholdSequence([1.0])
        expected = state.beta_w[:, None] + state.H.mean.sum(axis=0)[None, :]
        stats = local_update(state, data)
        update_user_factors(state, data, stats)
        np.testing.assert_allclose(state.W.rate, expected, rtol=1e-12)

    def test_sparse_matches_dense_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            data = random_matrix(6, 5, int(rng.integers(1, 5)), rng,
                                 density=0.5)
            state = random_state_like(data, int(rng.integers(1, 4)), rng)
            ref = dense_iteration(copy.deepcopy(state), data)
            run_iteration(state, data)
            np.testing.assert_allclose(state.W.shape, ref[0], rtol=1e-10)
            np.testing.assert_allclose(state.W.rate, ref[1], rtol=1e-10)
            np.testing.assert_allclose(state.H.shape, ref[2], rtol=1e-10)
            np.testing.assert_allclose(state.H.rate, ref[3], rtol=1e-10)
            np.testing.assert_allclose(state.thresholds.theta, ref[4],
                                       rtol=1e-10)

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(11)
        dense = rng.integers(0, 3, size=(5, 5))
        data = OrdinalMatrix(5, 5, 2, *_triplets(dense))
        data_t = OrdinalMatrix(5, 5, 2, *_triplets(dense.T))
        state = random_state_like(data, 2, np.random.default_rng(42))
        state_t = copy.deepcopy(state)
        state_t.W, state_t.H = state_t.H, state_t.W
        state_t.beta_w, state_t.beta_h = state_t.beta_h, state_t.beta_w
        state_t.alpha_w, state_t.alpha_h = state_t.alpha_h, state_t.alpha_w
        stats = local_update(state, data)
        update_user_factors(state, data, stats)
        update_item_factors(state, data, stats)
        stats_t = local_update(state_t, data_t)
        update_item_factors(state_t, data_t, stats_t)
        update_user_factors(state_t, data_t, stats_t)
        np.testing.assert_allclose(state.W.shape, state_t.H.shape, rtol=1e-12)
        np.testing.assert_allclose(state.H.rate, state_t.W.rate, rtol=1e-12)


class TestThresholdUpdate:
    def test_single_cell_closed_form(self):
        data = OrdinalMatrix(1, 1, 1, [0], [0], [1])
        rng = np.random.default_rng(12)
        state = random_state_like(data, 2, rng)
        stats = local_update(state, data)
        thr, floored = update_thresholds(state, data, stats)
        e_lam = float(state.W.mean[0] @ state.H.mean[0])
        assert thr.theta[0] == pytest.approx(stats.e_n[0] / e_lam, rel=1e-12)
        assert not floored

    def test_numerator_restricted_to_exact_class(self):
        rng = np.random.default_rng(13)
        data = random_matrix(6, 5, 3, rng)
        state = random_state_like(data, 2, rng)
        stats = local_update(state, data)
        thr, _ = update_thresholds(state, data, stats)
        for l in range(1, 4):
            num = stats.e_n[data.vals == l].sum()
            assert thr.delta[l - 1] * _denominator(state, data, l) == \
                pytest.approx(num, rel=1e-10)

    def test_update_is_local_maximum(self):
        rng = np.random.default_rng(14)
        data = random_matrix(6, 5, 3, rng)
        state = random_state_like(data, 2, rng)
        stats = local_update(state, data)
        thr, _ = update_thresholds(state, data, stats)
        y = data.to_dense()
        e_n = np.zeros(y.shape)
        e_n[data.rows, data.cols] = stats.e_n
        e_lam = state.W.mean @ state.H.mean.T
        best = threshold_objective(thr.delta, y, e_n, e_lam)
        for l in range(3):
            for factor in (0.99, 1.01):
                delta = thr.delta.copy()
                delta[l] *= factor
                assert threshold_objective(delta, y, e_n, e_lam) < best

    def test_empty_class_floor_and_error(self):
        dense = np.array([[1, 0], [0, 3]])  # class 2 absent
        data = OrdinalMatrix(2, 2, 3, *_triplets(dense))
        rng = np.random.default_rng(15)
        state = random_state_like(data, 2, rng)
        stats = local_update(state, data)
        thr, floored = update_thresholds(state, data, stats, delta_floor=1e-10)
        assert floored == [2]
        assert thr.delta[1] == pytest.approx(1e-10)
        with pytest.raises(DegenerateThresholdError):
            update_thresholds(state, data, stats, delta_floor=None)


class TestRateUpdate:
    def test_fixed_point_at_prior(self):
        rng = np.random.default_rng(16)
        data = random_matrix(4, 3, 2, rng)
        state = random_state_like(data, 2, rng)
        # posterior mean equal to the prior mean for every component
        state.W.set(np.full((4, 2), 2.0),
                    np.full((4, 2), 2.0) * state.beta_w[:, None]
                    / state.alpha_w)
        before = state.beta_w.copy()
        update_rate_hyperparams(state)
        np.testing.assert_allclose(state.beta_w, before, rtol=1e-12)

    def test_scale_property(self):
        rng = np.random.default_rng(17)
        data = random_matrix(4, 3, 2, rng)
        state = random_state_like(data, 2, rng)
        update_rate_hyperparams(state)
        first = state.beta_w.copy()
        state.W.set(state.W.shape * 2.0, state.W.rate)
        update_rate_hyperparams(state)
        np.testing.assert_allclose(state.beta_w, first / 2.0, rtol=1e-12)

    def test_grid_search_confirms_maximizer(self):
        # 1 user, K = 2: closed form should beat a fine grid on
        # sum_k E[log Gamma(w_k; alpha, beta)]
        from scipy import special

        rng = np.random.default_rng(18)
        alpha = 0.7
        shape = rng.uniform(0.5, 2.0, size=2)
        rate = rng.uniform(0.5, 2.0, size=2)
        e_w = shape / rate
        e_log_w = special.digamma(shape) - np.log(rate)

        def objective(beta):
            beta = np.asarray(beta)[..., None]
            return np.sum(alpha * np.log(beta) - special.gammaln(alpha)
                          + (alpha - 1) * e_log_w - beta * e_w, axis=-1)

        closed = 2 * alpha / e_w.sum()
        grid = np.linspace(0.01, 10.0, 20000)
        assert objective(closed) >= objective(grid).max() - 1e-6
        assert abs(grid[np.argmax(objective(grid))] - closed) < 1e-2


class TestFitLoop:
    def test_infinite_tolerance_single_iteration(self):
        rng = np.random.default_rng(19)
        data = random_matrix(6, 5, 3, rng)
        res = fit(data, FitConfig(n_components=2, tol=np.inf, max_iter=50))
        assert res.iterations == 1 and res.converged

    def test_deterministic(self):
        rng = np.random.default_rng(20)
        data = random_matrix(8, 6, 3, rng)
        cfg = FitConfig(n_components=3, max_iter=20, tol=1e-12, seed=5)
        a = fit(data, cfg)
        b = fit(data, cfg)
        np.testing.assert_array_equal(a.elbo_trace, b.elbo_trace)
        np.testing.assert_array_equal(a.state.W.shape, b.state.W.shape)

    def test_synthetic_convergence(self):
        rng = np.random.default_rng(21)
        thr = default_thresholds(5)
        data, _ = generate_dataset(200, 150, 5, thr, rng, scale=0.3)
        res = fit(data, FitConfig(n_components=5, max_iter=500, seed=0))
        assert res.converged and res.iterations <= 500
        diffs = np.diff(res.elbo_trace)
        slack = 1e-8 * np.abs(res.elbo_trace[:-1])
        assert np.all(diffs >= -slack)

    def test_elbo_monotone_on_random_data(self):
        for seed in range(5):
            rng = np.random.default_rng(300 + seed)
            data = random_matrix(10, 8, 3, rng, density=0.4)
            res = fit(data, FitConfig(n_components=3, max_iter=60, tol=1e-14,
                                      seed=seed))
            diffs = np.diff(res.elbo_trace)
            assert np.all(diffs >= -1e-8 * np.abs(res.elbo_trace[:-1]))


class TestPredictAndSerialize:
    def test_rank_one_ordering(self):
        rng = np.random.default_rng(22)
        data = random_matrix(4, 6, 2, rng)
        state = random_state_like(data, 1, rng)
        scores = predict_scores(state)
        for u in range(4):
            assert np.argsort(scores[u]).tolist() == \
                np.argsort(state.H.mean[:, 0]).tolist()

    def test_expected_class_link_preserves_ordering(self):
        rng = np.random.default_rng(23)
        data = random_matrix(3, 8, 3, rng)
        state = random_state_like(data, 2, rng)
        scores = predict_scores(state, [0])[0]
        expected = state.thresholds.expected_class(scores)
        assert np.argsort(scores).tolist() == np.argsort(expected).tolist()

    def test_exact_product(self):
        data = OrdinalMatrix(2, 2, 1, [0], [0], [1])
        state = random_state_like(data, 2, np.random.default_rng(24))
        state.W.set(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones((2, 2)))
        state.H.set(np.array([[1.0, 1.0], [2.0, 0.5]]), np.ones((2, 2)))
        np.testing.assert_allclose(predict_scores(state),
                                   [[3.0, 3.0], [7.0, 8.0]])

    def test_unknown_user_rejected(self):
        data = OrdinalMatrix(2, 2, 1, [0], [0], [1])
        state = random_state_like(data, 2, np.random.default_rng(25))
        with pytest.raises(ConfigError):
            predict_scores(state, [5])

    def test_roundtrip_reproduces_scores_bit_exactly(self, tmp_path):
        rng = np.random.default_rng(26)
        data = random_matrix(6, 5, 3, rng)
        res = fit(data, FitConfig(n_components=3, max_iter=10, tol=1e-12))
        path = tmp_path / "model.npz"
        save_state(path, res.state, metadata={"note": "test"})
        loaded, meta = load_state(path)
        assert meta["note"] == "test"
        np.testing.assert_array_equal(predict_scores(loaded),
                                      predict_scores(res.state))


def test_per_iteration_cost_scales_with_nnz():
    # doubling the number of zero cells (same non-zeros) must not blow up
    # the per-iteration cost
    import time

    rng = np.random.default_rng(27)
    base = random_matrix(60, 50, 3, rng, density=0.3)
    wide = OrdinalMatrix(60, 100, 3, base.rows, base.cols, base.vals)

    def time_iteration(data):
        state = random_state_like(data, 5, np.random.default_rng(0))
        best = np.inf
        for _ in range(7):
            s = copy.deepcopy(state)
            t0 = time.perf_counter()
            run_iteration(s, data)
            best = min(best, time.perf_counter() - t0)
        return best

    t_base = time_iteration(base)
    t_wide = time_iteration(wide)
    assert t_wide < 1.3 * t_base + 2e-3


def _triplets(dense):
    dense = np.asarray(dense)
    rows, cols = np.nonzero(dense)
    return rows, cols, dense[rows, cols]


def _denominator(state, data, l):
    e_lam = state.W.mean @ state.H.mean.T
    y = data.to_dense()
    return e_lam[y <= l].sum()
