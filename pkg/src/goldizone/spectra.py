"""Curvature metrics, power iteration with deflation, the zone condition
on the Gauss-Newton split, and the pre-collapse probe."""

import math
from dataclasses import dataclass

import numpy as np

from . import diffengine, numlin
from .errors import ConvergenceFailure, InvalidInput, UnsupportedArchitecture
from .netzoo import Linear, forward, stable_softmax


@dataclass(frozen=True)
class CurvatureReport:
    trace: float
    frobenius: float
    positive_curvature: float   # trace / frobenius
    local_convexity: float      # fraction of eigenvalues above noise tol
    spec_norm: float            # largest |eigenvalue|
    top_eigs: np.ndarray
    degenerate: bool = False


def curvature_report(a, tol=None, m_top=5):
    """Eigenvalue-ratio curvature metrics of a symmetric matrix.

    positive_curvature = sum(lam) / sqrt(sum(lam^2)); an eigenvalue counts
    as positive for local convexity when it exceeds tol (default
    1e-10 * ||A||_F, below which it is treated as numerical noise).
    A (numerically) zero matrix is flagged degenerate with zero metrics.
    """
    a = numlin.sym(a)
    if not np.all(np.isfinite(a)):
        raise InvalidInput("non-finite matrix")
    w, _ = numlin.eigh(a)
    fro = float(np.sqrt(np.sum(w * w)))
    if fro < 1e-300:
        return CurvatureReport(0.0, 0.0, 0.0, 0.0, 0.0,
                               np.zeros(min(m_top, len(w))), degenerate=True)
    tol = 1e-10 * fro if tol is None else tol
    trace = float(np.sum(w))
    return CurvatureReport(
        trace=trace,
        frobenius=fro,
        positive_curvature=trace / fro,
        local_convexity=float(np.mean(w > tol)),
        spec_norm=float(np.max(np.abs(w))),
        top_eigs=w[:m_top].copy(),
    )


def power_iteration_deflated(matvec, dim, m=1, tol=1e-9, max_iter=5000,
                             seed=0):
    """Top-m eigenpairs (by |lambda|) of a symmetric linear operator.

    Plain power iteration; converged eigenvectors are deflated by projecting
    them out of every iterate. Raises ConvergenceFailure (carrying the best
    iterate) if the residual test ||Av - lam v|| <= tol * |lam| fails within
    max_iter.
    """
    if m > 20:
        raise InvalidInput("m must be <= 20")
    rng = numlin.Rng(seed)
    basis = []          # converged eigenvectors
    pairs = []
    for j in range(m):
        v = rng.normal(size=dim)
        for u in basis:
            v -= u * (u @ v)
        nv = np.linalg.norm(v)
        if nv == 0:
            raise ConvergenceFailure("degenerate start vector")
        v /= nv
        lam = 0.0
        ok = False
        for _ in range(max_iter):
            w = matvec(v)
            for u in basis:
                w -= u * (u @ w)
            lam = float(v @ w)
            res = np.linalg.norm(w - lam * v)
            if res <= tol * max(abs(lam), 1e-300):
                ok = True
                break
            nw = np.linalg.norm(w)
            if nw == 0:
                # operator annihilates the deflated subspace: eigenvalue 0
                lam, ok = 0.0, True
                break
            v = w / nw
        if not ok:
            raise ConvergenceFailure(
                f"power iteration failed for eigenpair {j} "
                f"(last residual {res:.3e})", best=(lam, v), residual=res)
        basis.append(v.copy())
        pairs.append((lam, v.copy()))
    pairs.sort(key=lambda t: -abs(t[0]))
    return pairs


@dataclass(frozen=True)
class GoldilocksVerdict:
    gnorm: float
    hstarnorm: float
    ratio: float
    in_zone: bool


def goldilocks_verdict(dec, zone_threshold=1.0):
    """Zone membership from the spectral-norm race ||G||_2 vs ||H*||_2.

    in_zone <=> gnorm >= zone_threshold * hstarnorm. The raw ratio is
    always carried so downstream analysis stays threshold-free.
    """
    gnorm = curvature_report(dec.G_d).spec_norm
    hstarnorm = curvature_report(dec.Hstar_d).spec_norm
    if hstarnorm == 0.0:
        ratio = math.inf if gnorm > 0 else 0.0
    else:
        ratio = gnorm / hstarnorm
    return GoldilocksVerdict(gnorm, hstarnorm, ratio,
                             bool(ratio >= zone_threshold))


def find_precollapse_alpha(net, batch, lo=1.0, hi=1e4, target=1e-6,
                           iters=60):
    """Bisect for the scale where max per-sample softmax entropy crosses
    `target` nats (the knife edge just before full collapse)."""
    from .netzoo import scale_params

    def max_entropy(alpha):
        z = forward(scale_params(net, alpha), batch.X)
        p = stable_softmax(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
        return float(h.max())

    if max_entropy(hi) > target:
        raise InvalidInput("upper bracket does not collapse the softmax")
    a, b = lo, hi
    for _ in range(iters):
        mid = math.sqrt(a * b)
        if max_entropy(mid) > target:
            a = mid
        else:
            b = mid
    return a


def precollapse_probe(net, batch, alpha_grid, d=50, seed=0):
    """Per-alpha confidence and first-layer top-eigenvector alignment report.

    For each scale: per-sample entropies, the least confident sample mu0,
    G-term curvature on a d-dim subspace, and the |cosine| between mu0's
    input and the top Hessian eigenvector restricted to the first layer
    (reshaped to the weight matrix and averaged over the hidden dimension).
    """
    from .netzoo import scale_params

    first = net.layers[0]
    if not isinstance(first, Linear):
        raise UnsupportedArchitecture(
            "pre-collapse alignment needs a fully-connected first layer")
    n1 = first.in_features * first.out_features
    d1 = min(d, n1)
    r_first = diffengine.make_projector(net.P, d1, seed, index_range=(0, n1))
    r_full = diffengine.make_projector(net.P, min(d, net.P), seed + 1)
    reports = []
    for alpha in alpha_grid:
        snet = scale_params(net, alpha)
        z = forward(snet, batch.X)
        p = stable_softmax(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
        mu0 = int(np.argmax(ent))
        gd = diffengine.projected_gterm(snet, batch, 1.0, r_full)
        g_curv = curvature_report(gd).positive_curvature

        def matvec(x):
            return r_first.apply_t(
                diffengine.hvp(snet, batch, 1.0, r_first.apply(x)))

        (lam, vec), = power_iteration_deflated(matvec, d1, m=1, tol=1e-6,
                                               max_iter=20000, seed=seed)
        w_block = r_first.apply(vec)[:n1].reshape(first.out_features,
                                                  first.in_features)
        direction = w_block.mean(axis=0)
        x0 = np.asarray(batch.X[mu0], dtype=np.float64).ravel()
        denom = np.linalg.norm(direction) * np.linalg.norm(x0)
        cosine = float(abs(direction @ x0) / denom) if denom > 0 else 0.0
        reports.append({
            "alpha": float(alpha),
            "entropies": ent,
            "mu0": mu0,
            "g_curvature": float(g_curv),
            "top_eig": float(lam),
            "alignment_cos": cosine,
        })
    return reports
