"""Exact first- and second-order differentiation for homogeneous nets.

Gradients come from one reverse pass (per-sample softmax coefficients times
logit gradients); Hessian-vector products from forward-over-reverse tangent
propagation, which is exact rather than a finite-difference estimate. ReLU
uses the subgradient convention ReLU'(0) = 0, so every derivative quantity
here is deterministic.
"""

from dataclasses import dataclass

import numpy as np

from . import numlin
from .errors import InvalidInput, ShapeMismatch
from .netzoo import Conv2d, Flatten, Linear, MaxPool, ReLU
from .numlin import Rng, stable_softmax, sym


# ---------------------------------------------------------------------------
# sparse orthonormal projector

@dataclass(frozen=True)
class Projector:
    """Sparse P x d basis with disjoint-support signed columns.

    Column j has entries +-1/sqrt(|bucket_j|) on its bucket of flat indices,
    so R^T R = I_d holds exactly by construction.
    """

    P: int
    d: int
    rows: np.ndarray    # flat parameter index of each nonzero
    cols: np.ndarray    # column owning that nonzero
    vals: np.ndarray

    def apply(self, v_d):
        """R v: lift a d-vector into the full parameter space."""
        out = np.zeros(self.P)
        out[self.rows] = self.vals * np.asarray(v_d)[self.cols]
        return out

    def apply_t(self, u_p):
        """R^T u: project a full-space vector onto the subspace."""
        u_p = np.asarray(u_p)
        return np.bincount(self.cols, weights=self.vals * u_p[self.rows],
                           minlength=self.d)

    def to_dense(self):
        r = np.zeros((self.P, self.d))
        r[self.rows, self.cols] = self.vals
        return r


def make_projector(P, d, seed, index_range=None):
    """Random disjoint-bucket projector over flat indices [0, P).

    index_range optionally restricts the support to [lo, hi) (used for
    per-layer probes); columns still have exactly orthonormal supports.
    """
    if d < 1 or d > P:
        raise InvalidInput(f"need 1 <= d <= P, got d={d}, P={P}")
    lo, hi = (0, P) if index_range is None else index_range
    n = hi - lo
    if d > n:
        raise InvalidInput(f"d={d} exceeds index range size {n}")
    rng = Rng(seed)
    perm = lo + rng.permutation(n)
    base, rem = divmod(n, d)
    sizes = np.full(d, base)
    sizes[:rem] += 1
    cols = np.repeat(np.arange(d), sizes)
    signs = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    vals = signs / np.sqrt(sizes[cols])
    return Projector(P, d, perm, cols, vals)


# ---------------------------------------------------------------------------
# layer-wise passes

def _theta_slices(net, flat):
    out = {}
    for i, ent in enumerate(net.layout):
        if ent is not None:
            off, shape = ent
            out[i] = flat[off:off + int(np.prod(shape))].reshape(shape)
    return out


def forward_with_tangent(net, X, theta_dot):
    """Primal and directional-derivative activations along theta_dot."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != net.input_shape:
        raise ShapeMismatch(
            f"input shape {X.shape[1:]} != expected {net.input_shape}")
    dots = _theta_slices(net, np.asarray(theta_dot, dtype=np.float64))
    a = X
    ad = np.zeros_like(X)
    acts, acts_dot, pool_idx = [a], [ad], {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Linear):
            w = net.param(i)
            a, ad = a @ w.T, ad @ w.T + a @ dots[i].T
        elif isinstance(layer, Conv2d):
            w = net.param(i)
            s, p = layer.stride, layer.pad
            new = numlin.conv2d_forward(a, w, s, p)
            ad = numlin.conv2d_forward(ad, w, s, p) + \
                numlin.conv2d_forward(a, dots[i], s, p)
            a = new
        elif isinstance(layer, ReLU):
            m = a > 0.0
            a, ad = a * m, ad * m
        elif isinstance(layer, MaxPool):
            a, idx = numlin.maxpool2d_forward(a, layer.k)
            ad = numlin.maxpool2d_select(ad, layer.k, idx)
            pool_idx[i] = idx
        elif isinstance(layer, Flatten):
            a = a.reshape(a.shape[0], -1)
            ad = ad.reshape(ad.shape[0], -1)
        acts.append(a)
        acts_dot.append(ad)
    return acts, acts_dot, pool_idx


def backward(net, acts, pool_idx, dZ):
    """One reverse pass: flat d(sum dZ*z)/d(theta)."""
    g = np.zeros(net.P)
    da = np.asarray(dZ, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x = acts[i]
        if isinstance(layer, Linear):
            off, shape = net.layout[i]
            g[off:off + da.shape[1] * x.shape[1]] = (da.T @ x).ravel()
            da = da @ net.param(i)
        elif isinstance(layer, Conv2d):
            off, shape = net.layout[i]
            gw = numlin.conv2d_weight_grad(x, da, layer.kernel, layer.kernel,
                                           layer.stride, layer.pad)
            g[off:off + gw.size] = gw.ravel()
            da = numlin.conv2d_input_grad(da, net.param(i), x.shape,
                                          layer.stride, layer.pad)
        elif isinstance(layer, ReLU):
            da = da * (x > 0.0)
        elif isinstance(layer, MaxPool):
            da = numlin.maxpool2d_backward(da, layer.k, pool_idx[i], x.shape)
        elif isinstance(layer, Flatten):
            da = da.reshape(x.shape)
    return g


def backward_with_tangent(net, acts, acts_dot, pool_idx, dZ, dZ_dot,
                          theta_dot):
    """Reverse pass plus its directional derivative along theta_dot."""
    dots = _theta_slices(net, np.asarray(theta_dot, dtype=np.float64))
    g = np.zeros(net.P)
    gd = np.zeros(net.P)
    da = np.asarray(dZ, dtype=np.float64)
    dad = np.asarray(dZ_dot, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x, xd = acts[i], acts_dot[i]
        if isinstance(layer, Linear):
            off, _ = net.layout[i]
            n = da.shape[1] * x.shape[1]
            g[off:off + n] = (da.T @ x).ravel()
            gd[off:off + n] = (dad.T @ x + da.T @ xd).ravel()
            w = net.param(i)
            da, dad = da @ w, dad @ w + da @ dots[i]
        elif isinstance(layer, Conv2d):
            off, _ = net.layout[i]
            k, s, p = layer.kernel, layer.stride, layer.pad
            gw = numlin.conv2d_weight_grad(x, da, k, k, s, p)
            gwd = numlin.conv2d_weight_grad(xd, da, k, k, s, p) + \
                numlin.conv2d_weight_grad(x, dad, k, k, s, p)
            g[off:off + gw.size] = gw.ravel()
            gd[off:off + gw.size] = gwd.ravel()
            w = net.param(i)
            new = numlin.conv2d_input_grad(da, w, x.shape, s, p)
            dad = numlin.conv2d_input_grad(dad, w, x.shape, s, p) + \
                numlin.conv2d_input_grad(da, dots[i], x.shape, s, p)
            da = new
        elif isinstance(layer, ReLU):
            m = x > 0.0
            da, dad = da * m, dad * m
        elif isinstance(layer, MaxPool):
            da = numlin.maxpool2d_backward(da, layer.k, pool_idx[i], x.shape)
            dad = numlin.maxpool2d_backward(dad, layer.k, pool_idx[i], x.shape)
        elif isinstance(layer, Flatten):
            da = da.reshape(x.shape)
            dad = dad.reshape(x.shape)
    return g, gd


# ---------------------------------------------------------------------------
# gradients, Jacobians, HVP

def _onehot(y, K):
    out = np.zeros((len(y), K))
    out[np.arange(len(y)), y] = 1.0
    return out


def loss_grad(net, batch, T=1.0, coeff_override=None):
    """Mean cross-entropy gradient w.r.t. theta at temperature T.

    The per-sample coefficient row is softmax(z, T) - onehot(y); passing
    coeff_override replaces it (the uniform-output reference model uses
    rows 1/K - onehot(y)).
    """
    if T <= 0:
        raise InvalidInput(f"temperature must be positive, got {T}")
    from .netzoo import forward
    z, acts, pool_idx = forward(net, batch.X, want_acts=True)
    if coeff_override is not None:
        coeff = np.asarray(coeff_override, dtype=np.float64)
        if coeff.shape != z.shape:
            raise ShapeMismatch(
                f"coeff_override shape {coeff.shape} != logits {z.shape}")
    else:
        coeff = stable_softmax(z, T) - _onehot(batch.y, batch.K)
    b = z.shape[0]
    return backward(net, acts, pool_idx, coeff / (b * T))


def logit_jacobian(net, x_single, projector=None):
    """K x P logit Jacobian of one sample (K reverse passes).

    With a projector, returns the K x d matrix J R instead.
    """
    from .netzoo import forward
    X = np.asarray(x_single, dtype=np.float64)[None]
    z, acts, pool_idx = forward(net, X, want_acts=True)
    K = z.shape[1]
    rows = []
    for k in range(K):
        dz = np.zeros((1, K))
        dz[0, k] = 1.0
        rows.append(backward(net, acts, pool_idx, dz))
    jac = np.stack(rows)
    if projector is not None:
        jac = np.stack([projector.apply_t(r) for r in jac])
    return jac


def jvp_logits(net, X, theta_dot):
    """Directional derivative of all logits along theta_dot (one forward)."""
    acts, acts_dot, _ = forward_with_tangent(net, X, theta_dot)
    return acts[-1], acts_dot[-1]


def hvp(net, batch, T, v, coeff_override=None):
    """Exact Hessian-vector product of the mean loss at temperature T.

    With coeff_override the per-sample coefficient rows are frozen (their
    theta-dependence is dropped), so the result is a pure H-term product
    sum_k coeff_k * d^2 z_k / d theta^2 @ v.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidInput("non-finite direction vector")
    if T <= 0:
        raise InvalidInput(f"temperature must be positive, got {T}")
    acts, acts_dot, pool_idx = forward_with_tangent(net, batch.X, v)
    z, zd = acts[-1], acts_dot[-1]
    b = z.shape[0]
    if coeff_override is not None:
        coeff = np.asarray(coeff_override, dtype=np.float64) / (b * T)
        coeff_dot = np.zeros_like(coeff)
    else:
        p = stable_softmax(z, T)
        # tangent of softmax: dp = [diag(p) - pp^T] dz / T
        pd = p * (zd - (p * zd).sum(axis=1, keepdims=True)) / T
        coeff = (p - _onehot(batch.y, batch.K)) / (b * T)
        coeff_dot = pd / (b * T)
    _, gd = backward_with_tangent(net, acts, acts_dot, pool_idx,
                                  coeff, coeff_dot, v)
    return gd


# ---------------------------------------------------------------------------
# projected Gauss-Newton decomposition

@dataclass(frozen=True)
class ProjectedDecomposition:
    """Symmetric d x d triple H_d = G_d + Hstar_d on the projector subspace."""

    H_d: np.ndarray
    G_d: np.ndarray
    Hstar_d: np.ndarray
    alpha: float
    T: float

    @property
    def d(self):
        return self.H_d.shape[0]


def projected_gterm(net, batch, T, R, p_override=None):
    """Batch-mean G-term on the subspace: mean_mu (J R)^T M_mu (J R) / T^2.

    The K x d projected Jacobians come from d forward tangent passes.
    p_override fixes the softmax matrix instead of evaluating it.
    """
    d = R.d
    cols = []
    z = None
    for j in range(d):
        ej = np.zeros(d)
        ej[j] = 1.0
        z, zd = jvp_logits(net, batch.X, R.apply(ej))
        cols.append(zd)
    jr = np.stack(cols, axis=-1)            # B x K x d
    p = stable_softmax(z, T) if p_override is None else \
        np.asarray(p_override, dtype=np.float64)
    mjr = p[:, :, None] * jr - p[:, :, None] * \
        np.einsum("bk,bkd->bd", p, jr)[:, None, :]
    g = np.einsum("bkj,bkl->jl", jr, mjr, optimize=True)
    return sym(g / (z.shape[0] * T * T))


def projected_decomposition(net, batch, T, R, alpha=1.0):
    """H_d column-by-column from d HVPs; G_d from projected Jacobians;
    Hstar_d = H_d - G_d. All three symmetrized on output."""
    d = R.d
    h = np.zeros((d, d))
    for j in range(d):
        ej = np.zeros(d)
        ej[j] = 1.0
        h[:, j] = R.apply_t(hvp(net, batch, T, R.apply(ej)))
    h = sym(h)
    g = projected_gterm(net, batch, T, R)
    return ProjectedDecomposition(h, g, sym(h - g), float(alpha), float(T))
