"""Dataset synthesis and ingestion: Gaussian blobs, IDX image files,
Gaussian-noise images, balanced batching, and class-prior resampling."""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInput
from .netzoo import Batch
from .numlin import Rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    K: int
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def class_pools(self):
        return [np.flatnonzero(self.y == k) for k in range(self.K)]

    def train_batch(self):
        return Batch(self.X[self.train_idx], self.y[self.train_idx], self.K)

    def test_batch(self):
        return Batch(self.X[self.test_idx], self.y[self.test_idx], self.K)

    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y.astype(np.int64)).tobytes())
        return h.hexdigest()


def _split(n, rng, test_frac=0.2):
    perm = rng.permutation(n)
    n_test = int(round(n * test_frac))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def make_blobs(K, dim, n_per_class, spread, seed, sep=2.0, input_scale=1.0):
    """Isotropic Gaussian clouds with class means on a scaled simplex.

    Deterministic in seed; 80/20 train/test split. spread -> 0 gives a
    perfectly separable dataset.
    """
    if K < 2:
        raise InvalidInput("need at least two classes")
    if dim < K:
        raise InvalidInput(f"need dim >= K to place {K} simplex means")
    rng = Rng(seed)
    means = np.zeros((K, dim))
    means[:, :K] = sep * (np.eye(K) - 1.0 / K)
    X = np.zeros((K * n_per_class, dim))
    y = np.zeros(K * n_per_class, dtype=np.int64)
    for k in range(K):
        sl = slice(k * n_per_class, (k + 1) * n_per_class)
        X[sl] = means[k] + spread * rng.split(k).normal((n_per_class, dim))
        y[sl] = k
    X *= input_scale
    train, test = _split(len(y), rng.split(K + 1))
    return Dataset(X, y, K, train, test)


def gaussian_images(shape, n, seed, K=10):
    """i.i.d. standard-normal inputs with uniform random labels."""
    if n < 1:
        raise InvalidInput("need n >= 1")
    rng = Rng(seed)
    X = rng.normal((n,) + tuple(shape))
    y = rng.split(1).integers(0, K, size=n).astype(np.int64)
    train, test = _split(n, rng.split(2))
    return Dataset(X, y, K, train, test)


def _read_idx(path, expect_magic, expect_dims):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 * (1 + expect_dims):
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    magic, = struct.unpack(">i", raw[:4])
    if magic != expect_magic:
        raise FormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    dims = struct.unpack(f">{expect_dims}i", raw[4:4 * (1 + expect_dims)])
    payload = raw[4 * (1 + expect_dims):]
    need = int(np.prod(dims))
    if len(payload) != need:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {need} "
            f"(truncation at byte {4 * (1 + expect_dims) + len(payload)})")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, seed=0, standardize=False):
    """Load an IDX image/label pair (big-endian, magic-prefixed).

    Pixels are scaled to [0, 1]; per-channel standardization is optional.
    """
    imgs = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if imgs.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{imgs.shape[0]} images but {labels.shape[0]} labels")
    X = imgs.astype(np.float64)[:, None, :, :] / 255.0
    if standardize:
        mu, sd = X.mean(), X.std()
        X = (X - mu) / (sd if sd > 0 else 1.0)
    y = labels.astype(np.int64)
    K = int(y.max()) + 1
    train, test = _split(len(y), Rng(seed))
    return Dataset(X, y, K, train, test)


def write_idx(images_path, labels_path, images, labels):
    """Write an IDX pair (uint8 payloads); inverse of load_idx's parser."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def resample_by_prior(ds, prior, size, seed):
    """Subset with class identities drawn from the prior (with replacement).

    Returns (Batch, realized_prior).
    """
    prior = np.asarray(prior, dtype=np.float64)
    if size < 1:
        raise InvalidInput("size must be >= 1")
    if abs(prior.sum() - 1.0) > 1e-12 or np.any(prior < 0):
        raise InvalidInput("prior is not on the simplex")
    pools = ds.class_pools
    for k in range(ds.K):
        if prior[k] > 0 and len(pools[k]) == 0:
            raise InvalidInput(f"class {k} has empty pool but prior > 0")
    rng = Rng(seed)
    classes = rng.choice(ds.K, size=size, p=prior)
    idx = np.empty(size, dtype=np.int64)
    for i, k in enumerate(classes):
        pool = pools[k]
        idx[i] = pool[rng.integers(0, len(pool))]
    realized = np.bincount(classes, minlength=ds.K) / size
    return Batch(ds.X[idx], ds.y[idx], ds.K), realized


def balanced_batch(ds, B, seed, indices=None):
    """Draw a batch with per-class counts differing by at most one."""
    rng = Rng(seed)
    pools = ds.class_pools if indices is None else [
        np.intersect1d(p, indices) for p in ds.class_pools]
    base, rem = divmod(B, ds.K)
    counts = np.full(ds.K, base)
    extra = rng.permutation(ds.K)[:rem]
    counts[extra] += 1
    picks = []
    for k in range(ds.K):
        pool = pools[k]
        if len(pool) == 0:
            raise InvalidInput(f"class {k} pool is empty")
        sel = rng.split(k).choice(len(pool), size=counts[k],
                                  replace=counts[k] > len(pool))
        picks.append(pool[sel])
    idx = np.concatenate(picks)
    return Batch(ds.X[idx], ds.y[idx], ds.K)
