"""Random logit model analytics.

Logit gradients are modeled as a shared class mean plus an isotropic
residual, J_k^mu = c_k + e_k^mu with c_k ~ N(0, sigma_c^2 I_d) and
e_k^mu ~ N(0, sigma_e^2 I_d); the class means are assumed pairwise
orthogonal with squared length d * sigma_c^2. Everything downstream
(expected G-term, its bi-level spectrum, the closed-form curvature, the
expected-gradient law) follows from those assumptions.
"""

from dataclasses import dataclass

import numpy as np

from . import numlin
from .errors import DegenerateDistribution, InvalidInput
from .spectra import curvature_report


@dataclass(frozen=True)
class LogitModelParams:
    sigma_c2: float
    sigma_e2: float
    d: int
    K: int


@dataclass(frozen=True)
class PMatrixStats:
    M: np.ndarray       # K x K batch mean of diag(p) - p p^T
    gamma_p: float
    entropy: float


def pmatrix(p_batch):
    """Batch mean of diag(p) - p p^T (PSD, kernel contains the ones vector)."""
    p = np.atleast_2d(np.asarray(p_batch, dtype=np.float64))
    m = np.zeros((p.shape[1], p.shape[1]))
    for row in p:
        m += np.diag(row) - np.outer(row, row)
    return numlin.sym(m / p.shape[0])


def p_family(S, eps, K):
    """The near-collapse family: S-1 entries eps, one entry 1-(S-1)*eps."""
    if S < 2 or S > K:
        raise InvalidInput("need 2 <= S <= K")
    p = np.zeros(K)
    p[:S - 1] = eps
    p[S - 1] = 1.0 - (S - 1) * eps
    return p


def gamma_p(p_batch):
    """Curvature stats of the batch-averaged diag(p) - pp^T matrix."""
    p = np.atleast_2d(np.asarray(p_batch, dtype=np.float64))
    m = pmatrix(p)
    if np.linalg.norm(m) < 1e-300:
        raise DegenerateDistribution(
            "curvature of diag(p) - pp^T is undefined for one-hot batches")
    rep = curvature_report(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = float(np.mean(-np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)))
    return PMatrixStats(m, float(rep.positive_curvature), ent)


def gamma_sq_closed_form(p):
    """Single-distribution Gamma^2 directly from matrix elements."""
    p = np.asarray(p, dtype=np.float64)
    tr = np.sum(p) - np.sum(p * p)
    fro2 = np.sum((p - p * p) ** 2)
    op = np.outer(p * p, p * p)
    np.fill_diagonal(op, 0.0)    # subtracting sum(p^4) after summing cancels
    outer2 = np.sum(op)
    if tr == 0.0:
        raise DegenerateDistribution("one-hot distribution")
    return float(tr * tr / (fro2 + outer2))


def estimate_sigmas(jacobians):
    """Pooled (sigma_c^2, sigma_e^2) from per-sample K x d logit Jacobians.

    c_k is the sample mean of row k; sigma_c^2 pools c_k^2 over classes and
    components; sigma_e^2 pools the residual variance with Bessel correction.
    """
    j = np.stack([np.asarray(a, dtype=np.float64) for a in jacobians])
    b, K, d = j.shape
    if b < 2:
        raise InvalidInput("need at least 2 samples to estimate variances")
    c = j.mean(axis=0)
    sigma_c2 = float(np.mean(c * c))
    resid = j - c[None]
    sigma_e2 = float(np.sum(resid * resid) / ((b - 1) * K * d))
    return LogitModelParams(sigma_c2, sigma_e2, d, K)


def expected_gterm(params, p):
    """The d x d expected G-term in the class-mean basis.

    Top-left K x K block d*sigma_c^2*(diag(p) - pp^T), plus
    (1 - ||p||^2) * sigma_e^2 * I_d everywhere.
    """
    p = np.asarray(p, dtype=np.float64)
    K, d = params.K, params.d
    if d < K:
        raise InvalidInput(f"block form needs d >= K, got d={d}, K={K}")
    if p.shape != (K,):
        raise InvalidInput(f"expected a {K}-vector, got shape {p.shape}")
    out = (1.0 - float(p @ p)) * params.sigma_e2 * np.eye(d)
    out[:K, :K] += d * params.sigma_c2 * (np.diag(p) - np.outer(p, p))
    return numlin.sym(out)


def expected_gterm_curvature(params, p_batch):
    """Closed-form curvature of the expected G-term:

    sqrt(d)(sc2 + se2) / sqrt(se2^2 + 2 se2 sc2 + d sc2^2 / Gamma^2)

    with Gamma taken from the batch-averaged diag(p) - pp^T matrix.
    """
    sc2, se2, d = params.sigma_c2, params.sigma_e2, params.d
    if sc2 == 0.0:
        return float(np.sqrt(d))
    gamma = gamma_p(p_batch).gamma_p
    denom = np.sqrt(se2 * se2 + 2.0 * se2 * sc2 + d * sc2 * sc2 / gamma ** 2)
    return float(np.sqrt(d) * (sc2 + se2) / denom)


def appendix_eigs(params, p):
    """Bi-level spectrum of the expected G-term.

    bulk = (1 - ||p||^2) * sigma_e^2; the K-1 outliers add d * sigma_c^2
    times the nonzero eigenvalues of diag(p) - pp^T, which interlace the
    sorted entries of p. Returns (bulk, outliers descending).
    """
    p = np.asarray(p, dtype=np.float64)
    m = np.diag(p) - np.outer(p, p)
    if np.linalg.norm(m) < 1e-300:
        raise DegenerateDistribution("one-hot distribution")
    bulk = (1.0 - float(p @ p)) * params.sigma_e2
    lam, _ = numlin.eigh(m)
    lam_tilde = lam[:params.K - 1]          # drop the forced zero eigenvalue
    ps = np.sort(p)[::-1]
    for i, lt in enumerate(lam_tilde):
        if not (ps[i] + 1e-12 >= lt >= ps[i + 1] - 1e-12):
            raise InvalidInput(
                f"interlacing violated at index {i}: "
                f"{ps[i]} >= {lt} >= {ps[i + 1]} fails")
    outliers = bulk + params.d * params.sigma_c2 * lam_tilde
    return bulk, outliers


def expected_grad_law(params, qhat, q):
    """Predicted norm of the expected batch gradient from the prior mismatch.

    Returns (stated, derived): the published value d*sigma_c^2*||Qhat-Q||
    and the value the orthogonality assumptions actually give,
    sqrt(d*sigma_c^2)*||Qhat-Q||. Consumers pick one explicitly; the CSV
    schema carries both.
    """
    qhat = np.asarray(qhat, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    gap = float(np.linalg.norm(qhat - q))
    stated = params.d * params.sigma_c2 * gap
    derived = float(np.sqrt(params.d * params.sigma_c2)) * gap
    return stated, derived
