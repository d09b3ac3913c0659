"""Dataset synthesis, the IDX reader/writer round trip, prior resampling,
and balanced batching."""

import numpy as np
import pytest

from goldizone import datasets
from goldizone.errors import FormatError, InvalidInput


class TestBlobs:
    def test_deterministic_in_seed(self):
        a = datasets.make_blobs(3, 5, 20, 0.5, seed=7)
        b = datasets.make_blobs(3, 5, 20, 0.5, seed=7)
        c = datasets.make_blobs(3, 5, 20, 0.5, seed=8)
        assert a.checksum() == b.checksum()
        assert a.checksum() != c.checksum()

    def test_split_partitions_indices(self):
        ds = datasets.make_blobs(4, 6, 25, 0.3, seed=0)
        n = len(ds.y)
        assert len(ds.test_idx) == round(0.2 * n)
        assert len(ds.train_idx) + len(ds.test_idx) == n
        assert len(np.intersect1d(ds.train_idx, ds.test_idx)) == 0

    def test_class_means_near_simplex(self):
        sep = 3.0
        ds = datasets.make_blobs(3, 4, 400, 0.1, seed=1, sep=sep)
        means = sep * (np.eye(3) - 1.0 / 3.0)
        for k in range(3):
            got = ds.X[ds.y == k].mean(axis=0)
            assert np.allclose(got[:3], means[k], atol=0.05)
            assert np.allclose(got[3:], 0.0, atol=0.05)

    def test_input_scale(self):
        a = datasets.make_blobs(3, 4, 10, 0.5, seed=2)
        b = datasets.make_blobs(3, 4, 10, 0.5, seed=2, input_scale=1e-6)
        assert np.allclose(b.X, 1e-6 * a.X)
        assert np.array_equal(a.y, b.y)

    def test_validation(self):
        with pytest.raises(InvalidInput):
            datasets.make_blobs(1, 4, 10, 0.5, seed=0)
        with pytest.raises(InvalidInput):
            datasets.make_blobs(5, 3, 10, 0.5, seed=0)

    def test_spread_zero_separable(self):
        ds = datasets.make_blobs(3, 4, 5, 0.0, seed=0)
        for k in range(3):
            cls = ds.X[ds.y == k]
            assert np.allclose(cls, cls[0])


class TestGaussianImages:
    def test_shapes_and_stats(self):
        ds = datasets.gaussian_images((1, 8, 8), 500, seed=3, K=10)
        assert ds.X.shape == (500, 1, 8, 8)
        assert ds.y.min() >= 0 and ds.y.max() < 10
        assert abs(ds.X.mean()) < 0.05
        assert abs(ds.X.std() - 1.0) < 0.05

    def test_needs_samples(self):
        with pytest.raises(InvalidInput):
            datasets.gaussian_images((1, 4, 4), 0, seed=0)


class TestIdx:
    def make_pair(self, tmp_path, n=9, h=5, w=4):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(n, h, w), dtype=np.uint8)
        labels = rng.integers(0, 3, size=n, dtype=np.uint8)
        ip, lp = tmp_path / "imgs.idx", tmp_path / "labels.idx"
        datasets.write_idx(ip, lp, imgs, labels)
        return ip, lp, imgs, labels

    def test_round_trip(self, tmp_path):
        ip, lp, imgs, labels = self.make_pair(tmp_path)
        ds = datasets.load_idx(ip, lp)
        assert ds.X.shape == (9, 1, 5, 4)
        assert np.allclose(ds.X[:, 0] * 255.0, imgs)
        assert np.array_equal(ds.y, labels)
        assert ds.K == int(labels.max()) + 1

    def test_standardize(self, tmp_path):
        ip, lp, _, _ = self.make_pair(tmp_path, n=40)
        ds = datasets.load_idx(ip, lp, standardize=True)
        assert abs(ds.X.mean()) < 1e-10
        assert ds.X.std() == pytest.approx(1.0, rel=1e-10)

    def test_bad_magic(self, tmp_path):
        ip, lp, _, _ = self.make_pair(tmp_path)
        raw = bytearray(ip.read_bytes())
        raw[3] = 0x99
        ip.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            datasets.load_idx(ip, lp)

    def test_truncated_payload_reports_offset(self, tmp_path):
        ip, lp, _, _ = self.make_pair(tmp_path)
        raw = ip.read_bytes()
        ip.write_bytes(raw[:-7])
        with pytest.raises(FormatError, match="byte"):
            datasets.load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp, imgs, labels = self.make_pair(tmp_path)
        lp2 = tmp_path / "short.idx"
        datasets.write_idx(tmp_path / "unused.idx", lp2, imgs,
                           labels[:-1])
        with pytest.raises(FormatError, match="labels"):
            datasets.load_idx(ip, lp2)


class TestPriorResampling:
    def test_realized_prior_tracks_request(self):
        ds = datasets.make_blobs(4, 5, 100, 0.5, seed=0)
        prior = np.array([0.5, 0.3, 0.15, 0.05])
        batch, realized = datasets.resample_by_prior(ds, prior, 4000, seed=1)
        assert realized.sum() == pytest.approx(1.0)
        assert np.allclose(realized, prior, atol=0.03)
        counts = np.bincount(batch.y, minlength=4) / len(batch.y)
        assert np.allclose(counts, realized)

    def test_zero_weight_class_absent(self):
        ds = datasets.make_blobs(3, 4, 20, 0.5, seed=0)
        batch, realized = datasets.resample_by_prior(
            ds, [0.5, 0.5, 0.0], 200, seed=2)
        assert realized[2] == 0.0
        assert not np.any(batch.y == 2)

    def test_invalid_prior(self):
        ds = datasets.make_blobs(3, 4, 20, 0.5, seed=0)
        with pytest.raises(InvalidInput):
            datasets.resample_by_prior(ds, [0.5, 0.6, -0.1], 10, seed=0)
        with pytest.raises(InvalidInput):
            datasets.resample_by_prior(ds, [0.7, 0.2, 0.2], 10, seed=0)
        with pytest.raises(InvalidInput):
            datasets.resample_by_prior(ds, [0.5, 0.3, 0.2], 0, seed=0)

    def test_empty_pool_rejected(self):
        base = datasets.make_blobs(3, 4, 20, 0.5, seed=0)
        ds = datasets.Dataset(base.X, np.where(base.y == 2, 0, base.y), 3,
                              base.train_idx, base.test_idx)
        with pytest.raises(InvalidInput, match="pool"):
            datasets.resample_by_prior(ds, [0.4, 0.3, 0.3], 10, seed=0)

    def test_deterministic(self):
        ds = datasets.make_blobs(3, 4, 30, 0.5, seed=0)
        b1, r1 = datasets.resample_by_prior(ds, [0.2, 0.3, 0.5], 50, seed=4)
        b2, r2 = datasets.resample_by_prior(ds, [0.2, 0.3, 0.5], 50, seed=4)
        assert np.array_equal(b1.X, b2.X) and np.array_equal(r1, r2)


class TestBalancedBatch:
    def test_counts_within_one(self):
        ds = datasets.make_blobs(4, 5, 30, 0.5, seed=0)
        for B in (7, 12, 17):
            batch = datasets.balanced_batch(ds, B, seed=1)
            counts = np.bincount(batch.y, minlength=4)
            assert counts.sum() == B
            assert counts.max() - counts.min() <= 1

    def test_restricted_to_indices(self):
        ds = datasets.make_blobs(3, 4, 30, 0.5, seed=0)
        batch = datasets.balanced_batch(ds, 9, seed=2, indices=ds.train_idx)
        train_rows = {tuple(r) for r in ds.X[ds.train_idx]}
        assert all(tuple(r) in train_rows for r in batch.X)
