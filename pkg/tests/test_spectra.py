"""Curvature metrics, power iteration, the zone verdict, and the
pre-collapse probe, checked against dense eigendecompositions."""

import numpy as np
import pytest

from goldizone import datasets, diffengine, numlin, spectra
from goldizone.errors import (ConvergenceFailure, InvalidInput,
                              UnsupportedArchitecture)
from goldizone.netzoo import make_mlp, scale_params


def random_sym(n, seed=0):
    rng = numlin.Rng(seed)
    return numlin.sym(rng.normal((n, n)))


class TestCurvatureReport:
    def test_matches_dense_eigensolve(self):
        a = random_sym(12, seed=3)
        rep = spectra.curvature_report(a)
        w = np.linalg.eigvalsh(a)
        assert rep.trace == pytest.approx(np.sum(w), rel=1e-10)
        assert rep.frobenius == pytest.approx(np.sqrt(np.sum(w * w)),
                                              rel=1e-10)
        assert rep.spec_norm == pytest.approx(np.max(np.abs(w)), rel=1e-10)
        assert rep.positive_curvature == pytest.approx(
            np.sum(w) / np.sqrt(np.sum(w * w)), rel=1e-10)
        assert not rep.degenerate

    def test_known_diagonal(self):
        a = np.diag([3.0, 1.0, -2.0, 0.0])
        rep = spectra.curvature_report(a)
        assert rep.trace == pytest.approx(2.0)
        assert rep.local_convexity == pytest.approx(0.5)   # 2 of 4 positive
        assert rep.spec_norm == pytest.approx(3.0)
        assert np.allclose(np.sort(rep.top_eigs), [-2.0, 0.0, 1.0, 3.0])

    def test_scale_invariant_ratios(self):
        a = random_sym(9, seed=7)
        r1 = spectra.curvature_report(a)
        r2 = spectra.curvature_report(1e6 * a)
        assert r2.positive_curvature == pytest.approx(r1.positive_curvature,
                                                      rel=1e-10)
        assert r2.local_convexity == r1.local_convexity

    def test_identity_is_maximally_convex(self):
        rep = spectra.curvature_report(np.eye(16))
        assert rep.positive_curvature == pytest.approx(4.0)  # sqrt(n)
        assert rep.local_convexity == 1.0

    def test_zero_matrix_degenerate(self):
        rep = spectra.curvature_report(np.zeros((5, 5)))
        assert rep.degenerate
        assert rep.positive_curvature == 0.0

    def test_nonfinite_rejected(self):
        a = np.eye(3)
        a[0, 1] = np.nan
        with pytest.raises(InvalidInput):
            spectra.curvature_report(a)


class TestPowerIteration:
    def test_top_eigenpairs_match_dense(self):
        a = random_sym(20, seed=11) + np.diag(np.arange(20, dtype=float))
        w = np.linalg.eigvalsh(a)
        top = sorted(np.abs(w))[::-1][:3]
        pairs = spectra.power_iteration_deflated(lambda v: a @ v, 20, m=3)
        for (lam, vec), expect in zip(pairs, top):
            assert abs(lam) == pytest.approx(expect, rel=1e-7)
            assert np.linalg.norm(a @ vec - lam * vec) <= 1e-6 * abs(lam)

    def test_deflated_vectors_orthogonal(self):
        a = random_sym(15, seed=5) + np.diag(np.arange(15, dtype=float))
        pairs = spectra.power_iteration_deflated(lambda v: a @ v, 15, m=4)
        vecs = np.array([v for _, v in pairs])
        assert np.allclose(vecs @ vecs.T, np.eye(4), atol=1e-6)

    def test_failure_carries_best_iterate(self):
        a = random_sym(30, seed=2)
        with pytest.raises(ConvergenceFailure) as e:
            spectra.power_iteration_deflated(lambda v: a @ v, 30, m=1,
                                             max_iter=2, tol=1e-15)
        assert e.value.best is not None
        assert e.value.residual is not None

    def test_m_cap(self):
        with pytest.raises(InvalidInput):
            spectra.power_iteration_deflated(lambda v: v, 5, m=21)


class TestGoldilocksVerdict:
    def make_dec(self, g, hstar):
        return diffengine.ProjectedDecomposition(
            H_d=g + hstar, G_d=g, Hstar_d=hstar, alpha=1.0, T=1.0)

    def test_in_zone(self):
        v = spectra.goldilocks_verdict(self.make_dec(2 * np.eye(4),
                                                     np.eye(4)))
        assert v.in_zone and v.ratio == pytest.approx(2.0)

    def test_out_of_zone(self):
        v = spectra.goldilocks_verdict(self.make_dec(0.5 * np.eye(4),
                                                     np.eye(4)))
        assert not v.in_zone and v.ratio == pytest.approx(0.5)

    def test_zero_hstar_gives_infinite_ratio(self):
        v = spectra.goldilocks_verdict(self.make_dec(np.eye(4),
                                                     np.zeros((4, 4))))
        assert v.in_zone and np.isinf(v.ratio)

    def test_threshold_respected(self):
        dec = self.make_dec(2 * np.eye(4), np.eye(4))
        assert not spectra.goldilocks_verdict(dec, zone_threshold=3.0).in_zone


class TestPrecollapse:
    @pytest.fixture
    def setup(self):
        ds = datasets.make_blobs(K=3, dim=4, n_per_class=20, spread=0.4,
                                 seed=0)
        net = make_mlp([4, 12, 8, 3], init_seed=1)
        return net, ds.train_batch()

    def test_find_alpha_brackets_target(self, setup):
        net, batch = setup
        target = 1e-6
        a = spectra.find_precollapse_alpha(net, batch, target=target)

        def max_entropy(alpha):
            from goldizone.netzoo import forward
            p = numlin.stable_softmax(forward(scale_params(net, alpha),
                                              batch.X))
            with np.errstate(divide="ignore", invalid="ignore"):
                h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
            return float(h.max())

        assert max_entropy(a) > target
        assert max_entropy(a * 1.01) < target

    def test_bad_bracket_rejected(self, setup):
        net, batch = setup
        with pytest.raises(InvalidInput):
            spectra.find_precollapse_alpha(net, batch, hi=1.0 + 1e-12)

    def test_probe_reports_collapse_trend(self, setup):
        net, batch = setup
        a_star = spectra.find_precollapse_alpha(net, batch)
        reports = spectra.precollapse_probe(net, batch,
                                            [1.0, 0.9 * a_star], d=20, seed=0)
        assert len(reports) == 2
        for rep in reports:
            assert 0.0 <= rep["alignment_cos"] <= 1.0 + 1e-12
            assert np.all(np.isfinite(rep["entropies"]))
            assert 0 <= rep["mu0"] < len(batch.X)
        # confidence rises (entropy falls) as the scale grows
        assert reports[1]["entropies"].mean() < reports[0]["entropies"].mean()

    def test_probe_needs_linear_first_layer(self):
        from goldizone.netzoo import Batch, build_net
        ds = datasets.gaussian_images((1, 8, 8), 12, seed=0, K=3)
        net = build_net("cnn-small", (1, 8, 8), 3, init_seed=0)
        batch = Batch(ds.X[:6], ds.y[:6] % 3, 3)
        with pytest.raises(UnsupportedArchitecture):
            spectra.precollapse_probe(net, batch, [1.0])
