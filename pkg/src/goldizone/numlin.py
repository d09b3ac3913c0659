"""Numeric substrate: deterministic RNG, stable softmax / log-sum-exp,
a cyclic Jacobi eigensolver, and bias-free conv/pool kernels.

Everything is float64. All functions are pure; Rng instances carry the only
mutable state and must not be shared between threads (split seeds instead).
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConvergenceFailure, InvalidInput, ShapeMismatch

_MASK64 = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Rng:
    """Counter-based deterministic RNG (Philox), reproducible across platforms.

    Child streams are derived by hashing (seed, index) so parallel workers
    never share a stream.
    """

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, index):
        return Rng(_splitmix64(self.seed ^ _splitmix64(index & _MASK64)))

    def normal(self, size=None):
        return self._gen.standard_normal(size=size, dtype=np.float64)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, p=None, replace=True):
        return self._gen.choice(n, size=size, p=p, replace=replace)

    def dirichlet(self, alpha):
        return self._gen.dirichlet(alpha)


def sym(a):
    """Symmetrize a square matrix: (A + A^T)/2, as float64."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"expected square matrix, got shape {a.shape}")
    return (a + a.T) / 2.0


def stable_softmax(z, T=1.0):
    """Row-wise softmax with temperature, computed via max subtraction."""
    if T <= 0:
        raise InvalidInput(f"temperature must be positive, got {T}")
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInput("non-finite logits")
    zT = z / T
    zT = zT - zT.max(axis=-1, keepdims=True)
    e = np.exp(zT)
    return e / e.sum(axis=-1, keepdims=True)


def log_sum_exp(z, T=1.0):
    """T * log(sum_k exp(z_k / T)) along the last axis, overflow-safe."""
    if T <= 0:
        raise InvalidInput(f"temperature must be positive, got {T}")
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    out = m.squeeze(-1) + T * np.log(np.exp((z - m) / T).sum(axis=-1))
    return out


def _offdiag_norm(a):
    mask = ~np.eye(a.shape[0], dtype=bool)
    return float(np.sqrt(np.sum(a[mask] ** 2)))


def eigh(a, max_sweeps=60):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues sorted descending, eigenvectors as columns).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"expected square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("non-finite matrix entries")
    n = a.shape[0]
    if n > 2048:
        raise InvalidInput(f"matrix dimension {n} exceeds supported 2048")
    a = sym(a).copy()
    v = np.eye(n)
    if n == 1:
        return a[0].copy(), v
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    converged = False
    for _ in range(max_sweeps):
        off = _offdiag_norm(a)
        if off <= 1e-13 * norm:
            converged = True
            break
        tiny = 1e-18 * norm
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tiny:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # rotate columns p, q then rows p, q
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _offdiag_norm(a)
        raise ConvergenceFailure(
            f"Jacobi did not converge in {max_sweeps} sweeps "
            f"(off-diagonal mass {off:.3e})",
            residual=off,
        )
    if not converged:  # pragma: no cover - loop either breaks or raises
        raise ConvergenceFailure("unreachable")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _pad2d(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _patches(xp, kh, kw, stride):
    b, c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch(f"kernel ({kh},{kw}) larger than input ({h},{w})")
    sb, sc, sh, sw = xp.strides
    shape = (b, c, oh, ow, kh, kw)
    strides = (sb, sc, sh * stride, sw * stride, sh, sw)
    return as_strided(xp, shape=shape, strides=strides)


def conv2d_forward(x, w, stride=1, pad=0):
    """Bias-free cross-correlation. x: NCHW, w: OIHW."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"expected 4-d input/weights, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(
            f"input channels {x.shape[1]} != kernel channels {w.shape[1]}")
    xp = _pad2d(x, pad)
    pt = _patches(xp, w.shape[2], w.shape[3], stride)
    return np.einsum("bcijuv,ocuv->boij", pt, w, optimize=True)


def conv2d_input_grad(gy, w, x_shape, stride=1, pad=0):
    """Gradient of conv2d_forward w.r.t. its input."""
    b, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    _, _, oh, ow = gy.shape
    gxp = np.zeros((b, c, h + 2 * pad, wd + 2 * pad))
    gpatch = np.einsum("boij,ocuv->bcijuv", gy, w, optimize=True)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + oh * stride:stride, v:v + ow * stride:stride] += \
                gpatch[:, :, :, :, u, v]
    if pad:
        return gxp[:, :, pad:-pad, pad:-pad]
    return gxp


def conv2d_weight_grad(x, gy, kh, kw, stride=1, pad=0):
    """Gradient of conv2d_forward w.r.t. the kernel."""
    xp = _pad2d(np.asarray(x, dtype=np.float64), pad)
    pt = _patches(xp, kh, kw, stride)
    return np.einsum("bcijuv,boij->ocuv", pt, gy, optimize=True)


def maxpool2d_forward(x, k):
    """k x k max pooling with stride k; trailing rows/cols are cropped.

    Returns (output, argmax indices into the flattened k*k window). Ties pick
    the first window element, so the selection is deterministic.
    """
    b, c, h, w = x.shape
    oh, ow = h // k, w // k
    xc = x[:, :, :oh * k, :ow * k]
    win = xc.reshape(b, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, oh, ow, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d_select(x, k, idx):
    """Gather the same window elements chosen by a previous forward pass."""
    b, c, h, w = x.shape
    oh, ow = idx.shape[2], idx.shape[3]
    xc = x[:, :, :oh * k, :ow * k]
    win = xc.reshape(b, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, oh, ow, k * k)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]


def maxpool2d_backward(gy, k, idx, x_shape):
    """Scatter upstream gradients back to the argmax positions."""
    b, c, h, w = x_shape
    oh, ow = idx.shape[2], idx.shape[3]
    gwin = np.zeros((b, c, oh, ow, k * k))
    np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=-1)
    gx = np.zeros(x_shape)
    gx_view = gwin.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
    gx[:, :, :oh * k, :ow * k] = gx_view.reshape(b, c, oh * k, ow * k)
    return gx
