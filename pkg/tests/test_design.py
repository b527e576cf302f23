import numpy as np
import pytest

import safegrid as sg
from safegrid.design import (SparsityOptions, count_nonzeros, h2_cost_or_inf,
                             soft_threshold)
from safegrid.errors import ConfigError, StabilityLossError, UnstableSystemError


class ScalarModel:
    n = 1
    A = np.array([[0.0]])
    B1 = np.array([[1.0]])
    B2 = np.array([[1.0]])


SCALAR_W = sg.DesignWeights(Q=np.eye(1), R=np.eye(1))


def scalar_j(k):
    # closed loop -k; p = (1 + k^2) / (2k); j = p
    return (1.0 + k ** 2) / (2.0 * k)


class TestH2Cost:
    def test_scalar_hand_value(self):
        assert sg.h2_cost(ScalarModel(), SCALAR_W, np.array([[1.0]])) == \
            pytest.approx(1.0, rel=1e-12)

    def test_scalar_formula(self):
        for k in (0.5, 1.5, 3.0):
            assert sg.h2_cost(ScalarModel(), SCALAR_W, np.array([[k]])) == \
                pytest.approx(scalar_j(k), rel=1e-12)

    def test_zero_gain_fourbus_rejected(self, fourbus_model, fourbus_weights):
        with pytest.raises(UnstableSystemError, match="unstable gain"):
            sg.h2_cost(fourbus_model, fourbus_weights,
                       np.zeros((4, 8)))
        assert h2_cost_or_inf(fourbus_model, fourbus_weights,
                              np.zeros((4, 8))) == np.inf


class TestH2Gradient:
    def test_scalar_symbolic_derivative(self):
        # dJ/dk = (k^2 - 1) / (2 k^2)
        for k in (0.5, 1.0, 2.0):
            g = sg.h2_gradient(ScalarModel(), SCALAR_W, np.array([[k]]))
            assert g[0, 0] == pytest.approx((k ** 2 - 1.0) / (2.0 * k ** 2),
                                            abs=1e-12)

    def test_stationary_at_centralized(self, fourbus_model, fourbus_weights,
                                       fourbus_centralized):
        _, k_star = fourbus_centralized
        g = sg.h2_gradient(fourbus_model, fourbus_weights, k_star)
        assert np.linalg.norm(g) <= 1e-6

    def test_finite_difference_agreement(self, fourbus_model, fourbus_weights,
                                         fourbus_centralized):
        _, k_star = fourbus_centralized
        rng = np.random.default_rng(23)
        step = 1e-6
        for _ in range(5):
            k = k_star + 0.1 * rng.standard_normal(k_star.shape)
            if not sg.check_stability(
                    fourbus_model.A - fourbus_model.B2 @ k).is_hurwitz:
                continue
            g = sg.h2_gradient(fourbus_model, fourbus_weights, k)
            g_fd = np.zeros_like(g)
            for i in range(k.shape[0]):
                for j in range(k.shape[1]):
                    kp, km = k.copy(), k.copy()
                    kp[i, j] += step
                    km[i, j] -= step
                    g_fd[i, j] = (sg.h2_cost(fourbus_model, fourbus_weights, kp)
                                  - sg.h2_cost(fourbus_model, fourbus_weights, km)
                                  ) / (2 * step)
            floor = 1e-2 * np.abs(g_fd).max()
            rel = np.abs(g - g_fd) / np.maximum(np.abs(g_fd), floor)
            assert rel.max() <= 1e-5


class TestReweight:
    def test_zero_entry(self):
        w = sg.reweight(np.array([[0.0]]), 1e-3)
        assert w[0, 0] == pytest.approx(1000.0)

    def test_unit_denominator(self):
        w = sg.reweight(np.array([[0.999]]), 1e-3)
        assert w[0, 0] == pytest.approx(1.0)

    def test_all_zero_matrix(self):
        w = sg.reweight(np.zeros((3, 4)), 1e-2)
        assert np.all(w == 100.0)

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ConfigError):
            sg.reweight(np.zeros((2, 2)), 0.0)


class TestSoftThreshold:
    def test_matches_scalar_prox_oracle(self):
        rng = np.random.default_rng(5)
        v = rng.uniform(-3, 3, (50,))
        tau = rng.uniform(0, 2, (50,))
        got = soft_threshold(v, tau)
        for i in range(50):
            # scalar prox of tau |g|: argmin tau|g| + (g - v)^2 / 2
            grid = np.linspace(-4, 4, 160001)
            obj = tau[i] * np.abs(grid) + 0.5 * (grid - v[i]) ** 2
            best = grid[np.argmin(obj)]
            assert got[i] == pytest.approx(best, abs=1e-4)

    def test_exact_zeros(self):
        out = soft_threshold(np.array([0.5, -0.5, 2.0]), np.array([1.0, 1.0, 1.0]))
        assert np.array_equal(out, np.array([0.0, 0.0, 1.0]))


class TestCardCounting:
    def test_permutation_equivariance(self, fourbus_centralized):
        _, k = fourbus_centralized
        zt = 1e-6
        base = count_nonzeros(k, zt)
        assert count_nonzeros(k.T.T, zt) == base
        rng = np.random.default_rng(2)
        rows = rng.permutation(4)
        cols = np.concatenate([rng.permutation(4), 4 + rng.permutation(4)])
        permuted = k[np.ix_(rows, cols)]
        assert count_nonzeros(permuted, zt) == base
        undone = permuted[np.ix_(np.argsort(rows), np.argsort(cols))]
        assert np.array_equal(undone, k)


@pytest.fixture(scope="module")
def quick_opts():
    return SparsityOptions(max_admm_iters=400)


class TestAdmm:
    def test_gamma_zero_equals_centralized(self, fourbus_model, fourbus_weights,
                                           fourbus_centralized, quick_opts):
        _, k_star = fourbus_centralized
        res = sg.admm_sparse_gain(fourbus_model, fourbus_weights, quick_opts)
        assert np.abs(res.K - k_star).max() <= 1e-6
        assert res.card == 32
        assert res.stability.is_hurwitz

    def test_small_gamma_dense(self, fourbus_model, fourbus_weights, quick_opts):
        from dataclasses import replace
        res = sg.admm_sparse_gain(fourbus_model, fourbus_weights,
                                  replace(quick_opts, gamma=1e-4))
        assert res.card == 32
        assert res.stability.is_hurwitz

    def test_large_gamma_sparse(self, fourbus_model, fourbus_weights, quick_opts):
        from dataclasses import replace
        res = sg.admm_sparse_gain(fourbus_model, fourbus_weights,
                                  replace(quick_opts, gamma=1e-1))
        assert 7 <= res.card <= 15
        assert res.stability.is_hurwitz
        # consistency between pattern, card and the zero tolerance
        assert res.card == int(res.pattern.sum())
        assert res.card == count_nonzeros(res.K, quick_opts.zero_tol)

    def test_rejects_unstable_start(self, fourbus_model, fourbus_weights,
                                    quick_opts):
        with pytest.raises(UnstableSystemError):
            sg.admm_sparse_gain(fourbus_model, fourbus_weights, quick_opts,
                                k_init=np.zeros((4, 8)))

    def test_options_validation(self):
        with pytest.raises(ConfigError):
            SparsityOptions(gamma=-1.0)
        with pytest.raises(ConfigError):
            SparsityOptions(zero_tol=0.5, epsilon=0.1)


class TestPolish:
    def test_full_pattern_returns_centralized(self, fourbus_model,
                                              fourbus_weights,
                                              fourbus_centralized):
        _, k_star = fourbus_centralized
        k = sg.polish(fourbus_model, fourbus_weights,
                      np.ones((4, 8), dtype=bool))
        assert np.abs(k - k_star).max() <= 1e-12

    def test_empty_pattern_errors(self, fourbus_model, fourbus_weights):
        with pytest.raises(StabilityLossError, match="polish stability loss"):
            sg.polish(fourbus_model, fourbus_weights,
                      np.zeros((4, 8), dtype=bool))

    def test_polish_descends(self, fourbus_model, fourbus_weights,
                             fourbus_centralized):
        _, k_star = fourbus_centralized
        pattern = np.abs(k_star) > 0.05
        start = np.where(pattern, k_star, 0.0)
        assert sg.check_stability(
            fourbus_model.A - fourbus_model.B2 @ start).is_hurwitz
        j_start = sg.h2_cost(fourbus_model, fourbus_weights, start)
        k_pol = sg.polish(fourbus_model, fourbus_weights, pattern, start)
        j_pol = sg.h2_cost(fourbus_model, fourbus_weights, k_pol)
        assert j_pol <= j_start + 1e-9
        assert np.all(k_pol[~pattern] == 0.0)


class TestGammaSweep:
    def test_short_sweep_contracts(self, fourbus_model, fourbus_weights,
                                   quick_opts):
        gammas = [1e-4, 1e-3, 1e-2, 1e-1]
        entries = sg.gamma_sweep(fourbus_model, fourbus_weights, gammas,
                                 quick_opts)
        assert [e.gamma for e in entries] == gammas
        assert all(not e.failed for e in entries)
        cards = [e.result.card for e in entries]
        costs = [e.result.cost for e in entries]
        assert cards[0] == 32
        assert all(e.result.stability.is_hurwitz for e in entries)
        assert all(b <= a + 0 for a, b in zip(cards, cards[1:]))
        assert all(b >= a - 1e-8 for a, b in zip(costs, costs[1:]))

    def test_single_zero_gamma(self, fourbus_model, fourbus_weights,
                               fourbus_centralized, quick_opts):
        _, k_star = fourbus_centralized
        entries = sg.gamma_sweep(fourbus_model, fourbus_weights, [0.0],
                                 quick_opts)
        assert len(entries) == 1
        assert entries[0].result.card == 32
        assert np.abs(entries[0].result.K - k_star).max() <= 1e-6

    def test_rejects_descending(self, fourbus_model, fourbus_weights,
                                quick_opts):
        with pytest.raises(ConfigError, match="ascending"):
            sg.gamma_sweep(fourbus_model, fourbus_weights, [1e-1, 1e-4],
                           quick_opts)


class TestSerialization:
    def test_round_trip(self, tmp_path, fourbus_model, fourbus_weights,
                        quick_opts):
        res = sg.admm_sparse_gain(fourbus_model, fourbus_weights, quick_opts)
        path = tmp_path / "gain.json"
        sg.save_gain(res, path)
        back = sg.load_gain(path)
        assert np.array_equal(back.K, res.K)
        assert np.array_equal(back.pattern, res.pattern)
        assert back.card == res.card
        assert back.cost == res.cost
        assert back.pattern.shape == (4, 8)
        assert set(np.unique(back.pattern.astype(int))) <= {0, 1}
