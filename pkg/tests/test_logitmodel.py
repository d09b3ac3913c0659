"""Random logit model: closed forms checked against Monte-Carlo estimates
and dense eigensolves built from the model's own sampling assumptions."""

import numpy as np
import pytest

from goldizone import logitmodel, numlin
from goldizone.errors import DegenerateDistribution, InvalidInput
from goldizone.spectra import curvature_report


def dirichlet_batch(n, K, seed):
    rng = numlin.Rng(seed)
    return np.stack([rng.split(i).dirichlet(np.ones(K)) for i in range(n)])


class TestPMatrix:
    def test_single_distribution(self):
        p = np.array([0.5, 0.3, 0.2])
        m = logitmodel.pmatrix(p)
        assert np.allclose(m, np.diag(p) - np.outer(p, p))

    def test_psd_with_ones_kernel(self):
        p = dirichlet_batch(8, 5, seed=0)
        m = logitmodel.pmatrix(p)
        w = np.linalg.eigvalsh(m)
        assert w.min() >= -1e-12
        assert np.allclose(m @ np.ones(5), 0.0, atol=1e-12)


class TestGamma:
    def test_uniform_hits_upper_bound(self):
        for K in (3, 5, 10):
            stats = logitmodel.gamma_p(np.full(K, 1.0 / K))
            assert stats.gamma_p == pytest.approx(np.sqrt(K - 1), rel=1e-9)

    def test_closed_form_matches_spectral(self):
        for seed in range(5):
            p = dirichlet_batch(1, 6, seed=seed)[0]
            spectral = logitmodel.gamma_p(p).gamma_p ** 2
            assert logitmodel.gamma_sq_closed_form(p) == pytest.approx(
                spectral, rel=1e-8)

    def test_range(self):
        K = 7
        for seed in range(20):
            p = dirichlet_batch(1, K, seed=seed)[0]
            g = logitmodel.gamma_p(p).gamma_p
            assert 1.0 - 1e-9 <= g <= np.sqrt(K - 1) + 1e-9

    def test_near_collapse_limit(self):
        # the eps -> 0 limit of the S-support family: Gamma^2 -> 4(S-1)/(S+2)
        K = 10
        for S in (2, 4, 7, 10):
            p = logitmodel.p_family(S, 1e-9, K)
            g2 = logitmodel.gamma_sq_closed_form(p)
            assert g2 == pytest.approx(4.0 * (S - 1) / (S + 2), rel=1e-6)

    def test_family_validation(self):
        with pytest.raises(InvalidInput):
            logitmodel.p_family(1, 0.1, 5)
        with pytest.raises(InvalidInput):
            logitmodel.p_family(6, 0.1, 5)

    def test_one_hot_degenerate(self):
        with pytest.raises(DegenerateDistribution):
            logitmodel.gamma_p(np.array([1.0, 0.0, 0.0]))
        with pytest.raises(DegenerateDistribution):
            logitmodel.gamma_sq_closed_form(np.array([0.0, 1.0]))


class TestSigmaEstimation:
    def test_recovers_planted_variances(self):
        rng = numlin.Rng(42)
        K, d, B = 4, 60, 400
        sc, se = 0.7, 0.25
        c = np.sqrt(sc) * rng.normal((K, d))
        jac = [c + np.sqrt(se) * rng.split(i).normal((K, d))
               for i in range(B)]
        params = logitmodel.estimate_sigmas(jac)
        assert params.sigma_c2 == pytest.approx(sc, rel=0.1)
        assert params.sigma_e2 == pytest.approx(se, rel=0.05)
        assert (params.d, params.K) == (d, K)

    def test_needs_two_samples(self):
        with pytest.raises(InvalidInput):
            logitmodel.estimate_sigmas([np.zeros((3, 5))])


class TestExpectedGTerm:
    def params(self, sc=0.5, se=0.2, d=30, K=4):
        return logitmodel.LogitModelParams(sc, se, d, K)

    def test_matches_monte_carlo(self):
        # sample J = c + e with orthogonal class means of squared length
        # d*sigma_c^2 (the model's assumption) and average J^T (diag(p)-pp^T) J
        params = self.params(sc=0.4, se=0.3, d=20, K=3)
        p = np.array([0.6, 0.3, 0.1])
        c = np.zeros((params.K, params.d))
        for k in range(params.K):
            c[k, k] = np.sqrt(params.d * params.sigma_c2)
        rng = numlin.Rng(7)
        a = np.diag(p) - np.outer(p, p)
        acc = np.zeros((params.d, params.d))
        n_mc = 4000
        for i in range(n_mc):
            j = c + np.sqrt(params.sigma_e2) * rng.split(i).normal(
                (params.K, params.d))
            acc += j.T @ a @ j
        mc = acc / n_mc
        expect = logitmodel.expected_gterm(params, p)
        assert np.linalg.norm(mc - expect) <= 0.05 * np.linalg.norm(expect)

    def test_block_structure(self):
        params = self.params()
        p = np.array([0.4, 0.3, 0.2, 0.1])
        g = logitmodel.expected_gterm(params, p)
        bulk = (1.0 - p @ p) * params.sigma_e2
        assert np.allclose(np.diag(g)[params.K:], bulk)
        assert np.allclose(g[params.K:, params.K:] - bulk * np.eye(
            params.d - params.K), 0.0)

    def test_needs_wide_d(self):
        with pytest.raises(InvalidInput):
            logitmodel.expected_gterm(self.params(d=3, K=4),
                                      np.full(4, 0.25))

    def test_appendix_spectrum_matches_dense(self):
        params = self.params(sc=0.6, se=0.15, d=25, K=5)
        p = dirichlet_batch(1, 5, seed=3)[0]
        bulk, outliers = logitmodel.appendix_eigs(params, p)
        w, _ = numlin.eigh(logitmodel.expected_gterm(params, p))
        assert np.allclose(w[:params.K - 1], outliers, rtol=1e-9)
        assert np.allclose(w[params.K - 1:], bulk, rtol=1e-9)

    def test_curvature_closed_form_matches_matrix(self):
        params = self.params(sc=0.35, se=0.2, d=40, K=4)
        p = dirichlet_batch(1, 4, seed=9)[0]
        closed = logitmodel.expected_gterm_curvature(params, p)
        rep = curvature_report(logitmodel.expected_gterm(params, p))
        assert closed == pytest.approx(rep.positive_curvature, rel=1e-8)

    def test_curvature_zero_mean_limit(self):
        params = self.params(sc=0.0, se=0.2, d=36)
        assert logitmodel.expected_gterm_curvature(
            params, np.full(4, 0.25)) == pytest.approx(6.0)


class TestExpectedGradLaw:
    def test_derived_matches_model_construction(self):
        # under the same assumption (orthogonal class means of squared
        # length d*sigma_c^2), the expected batch gradient is
        # sum_k (qhat_k - q_k) c_k, whose norm the derived variant predicts
        params = logitmodel.LogitModelParams(0.3, 0.1, d=50, K=4)
        c = np.zeros((4, 50))
        for k in range(4):
            c[k, k] = np.sqrt(50 * 0.3)
        qhat = np.array([0.4, 0.3, 0.2, 0.1])
        q = np.full(4, 0.25)
        g = (qhat - q) @ c
        stated, derived = logitmodel.expected_grad_law(params, qhat, q)
        assert derived == pytest.approx(np.linalg.norm(g), rel=1e-12)
        assert stated == pytest.approx(
            50 * 0.3 * np.linalg.norm(qhat - q), rel=1e-12)

    def test_zero_gap(self):
        params = logitmodel.LogitModelParams(0.3, 0.1, d=10, K=3)
        q = np.full(3, 1.0 / 3.0)
        assert logitmodel.expected_grad_law(params, q, q) == (0.0, 0.0)
