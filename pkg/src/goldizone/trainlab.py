"""Full-batch gradient descent on scaled nets, the uniform-softmax-output
reference model, regime classification, and the confidence/gradient
experiment protocols."""

from dataclasses import dataclass, field

import numpy as np

from . import diffengine, spectra
from .datasets import resample_by_prior
from .errors import DegenerateGradient, InvalidInput
from .netzoo import (Batch, build_net, confidence_stats, cross_entropy,
                     forward, scale_params)
from .numlin import Rng, stable_softmax

REGIMES = ("Normal", "Diverged", "ZeroLogit", "Lazy", "Stalled")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float
    eta0: float
    arch: str = "mlp-small"
    T: float = 1.0
    epochs: int = 2000
    seed: int = 0
    uso_mode: bool = False
    label_mode: str = "true"      # true | shuffled-fixed | shuffled-every-step
    log_every_after: int = 10     # cadence after the first 100 steps
    zero_logit_tol_scale: float = 1e-9

    def __post_init__(self):
        if self.alpha <= 0 or self.eta0 <= 0 or self.epochs < 1:
            raise InvalidInput("need alpha > 0, eta0 > 0, epochs >= 1")
        if self.label_mode not in ("true", "shuffled-fixed",
                                   "shuffled-every-step"):
            raise InvalidInput(f"unknown label_mode {self.label_mode!r}")


@dataclass
class TrajectoryRecord:
    steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    theta_norm: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    cos_theta_neg_g: list = field(default_factory=list)
    zero_logit_fraction: list = field(default_factory=list)
    mean_entropy: list = field(default_factory=list)
    thetas: list = field(default_factory=list)   # filled only when asked
    eta_effective: float = 0.0
    diverged: bool = False
    init_theta_norm: float = 0.0
    max_theta_norm: float = 0.0


def zero_logit_fraction(logits, tol):
    """Fraction of samples whose logits are all within tol of zero."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInput("non-finite logits")
    return float(np.mean(np.max(np.abs(z), axis=1) <= tol))


def _accuracy(logits, y):
    return float(np.mean(np.argmax(logits, axis=1) == y))


def _uso_coeff(y, K):
    out = np.full((len(y), K), 1.0 / K)
    out[np.arange(len(y)), y] -= 1.0
    return out


def train(config, ds, keep_thetas=False):
    """Vanilla full-batch GD with the scale-corrected step eta0*alpha^(2-L).

    Non-finite loss or parameters terminate the run with the diverged flag
    set (recorded, never raised). Returns a TrajectoryRecord; pair it with
    classify_regime for the label.
    """
    tb, teb = ds.train_batch(), ds.test_batch()
    input_shape = tb.X.shape[1:]
    net = build_net(config.arch, input_shape, ds.K, config.seed)
    net = scale_params(net, config.alpha)
    eta = config.eta0 * config.alpha ** (2 - net.L)
    rng = Rng(config.seed ^ 0x5AB0)
    y_train = tb.y.copy()
    if config.label_mode == "shuffled-fixed":
        y_train = y_train[rng.permutation(len(y_train))]

    traj = TrajectoryRecord()
    traj.eta_effective = eta
    traj.init_theta_norm = float(np.linalg.norm(net.theta))
    traj.max_theta_norm = traj.init_theta_norm

    # divergence is recorded, not raised, so overflow is expected here
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.epochs):
          if config.label_mode == "shuffled-every-step":
              y_step = tb.y[rng.split(step).permutation(len(tb.y))]
          else:
              y_step = y_train
          batch = Batch(tb.X, y_step, ds.K)
          z = forward(net, tb.X)
          if not np.all(np.isfinite(z)):
              traj.diverged = True
              break
          loss, sb = cross_entropy(z, y_step, config.T)
          if not np.isfinite(loss):
              traj.diverged = True
              break
          coeff = _uso_coeff(y_step, ds.K) if config.uso_mode else None
          g = diffengine.loss_grad(net, batch, config.T, coeff_override=coeff)
          log_now = step < 100 or step % config.log_every_after == 0 or \
              step == config.epochs - 1
          if log_now:
              ent, _ = confidence_stats(sb)
              tol = config.zero_logit_tol_scale * (1.0 + np.mean(np.abs(z)))
              tn = float(np.linalg.norm(net.theta))
              gn = float(np.linalg.norm(g))
              cos = float(-(net.theta @ g) / (tn * gn)) if tn * gn > 0 else 0.0
              traj.steps.append(step)
              traj.loss.append(loss)
              traj.train_acc.append(_accuracy(z, y_step))
              traj.test_acc.append(_accuracy(forward(net, teb.X), teb.y))
              traj.theta_norm.append(tn)
              traj.grad_norm.append(gn)
              traj.cos_theta_neg_g.append(cos)
              traj.zero_logit_fraction.append(zero_logit_fraction(z, tol))
              traj.mean_entropy.append(ent)
              if keep_thetas:
                  traj.thetas.append(net.theta.copy())
          theta_new = net.theta - eta * g
          if not np.all(np.isfinite(theta_new)):
              traj.diverged = True
              break
          net = net.with_theta(theta_new)
          traj.max_theta_norm = max(traj.max_theta_norm,
                                    float(np.linalg.norm(theta_new)))
    return traj


def uso_train(config, ds, keep_thetas=False):
    """Training whose update always uses uniform-softmax coefficients."""
    if not config.uso_mode:
        raise InvalidInput("uso_train requires config.uso_mode = True")
    return train(config, ds, keep_thetas=keep_thetas)


def classify_regime(traj, baseline, norm_growth=1e3, zl_high=0.75,
                    zl_low=0.5, lazy_gap=0.05, normal_gap=0.02):
    """One label per completed trajectory.

    Diverged: non-finite loss, or norm blow-up past norm_growth x initial
    with no accuracy gain. ZeroLogit: terminal zero-logit fraction >= zl_high
    with no recovery below zl_low after first crossing. Lazy: train accuracy
    >= 0.99 but test accuracy at least lazy_gap below baseline. Normal: test
    accuracy within normal_gap of baseline. Otherwise Stalled.
    """
    zl = traj.zero_logit_fraction
    if traj.diverged:
        return "Diverged"
    if not traj.steps:
        return "Stalled"
    final_test = traj.test_acc[-1]
    best_test = max(traj.test_acc)
    if traj.max_theta_norm > norm_growth * max(traj.init_theta_norm, 1e-300) \
            and best_test < baseline - lazy_gap:
        return "Diverged"
    crossed = False
    recovered = False
    for f in zl:
        if f >= zl_high:
            crossed = True
        elif crossed and f < zl_low:
            recovered = True
    if crossed and not recovered and zl[-1] >= zl_high:
        return "ZeroLogit"
    if traj.train_acc[-1] >= 0.99 and final_test <= baseline - lazy_gap:
        return "Lazy"
    if final_test >= baseline - normal_gap:
        return "Normal"
    return "Stalled"


def baseline_accuracy(arch, ds, eta0, epochs=400, seeds=(0, 1, 2), T=1.0):
    """Median test accuracy of unscaled (alpha=1) runs, the regime anchor."""
    accs = []
    for s in seeds:
        cfg = TrainConfig(alpha=1.0, eta0=eta0, arch=arch, T=T,
                          epochs=epochs, seed=s)
        traj = train(cfg, ds)
        accs.append(traj.test_acc[-1] if traj.test_acc else 0.0)
    return float(np.median(accs))


def linear_probe(features, labels, heldout_features, heldout_labels,
                 steps=3000, lr=None):
    """Multinomial logistic regression by full-batch GD; held-out accuracy."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if not np.all(np.isfinite(X)):
        raise InvalidInput("non-finite features")
    classes = np.unique(y)
    if len(classes) < 2:
        raise InvalidInput("labels contain a single class")
    K = int(y.max()) + 1
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xs = np.hstack([(X - mu) / sd, np.ones((len(X), 1))])
    Xh = np.hstack([(np.asarray(heldout_features) - mu) / sd,
                    np.ones((len(heldout_features), 1))])
    W = np.zeros((K, Xs.shape[1]))
    onehot = np.zeros((len(y), K))
    onehot[np.arange(len(y)), y] = 1.0
    if lr is None:
        lr = len(X) / (np.sum(Xs * Xs) / Xs.shape[1])
    for _ in range(steps):
        p = stable_softmax(Xs @ W.T)
        gw = (p - onehot).T @ Xs / len(y)
        W -= lr * gw
    pred = np.argmax(Xh @ W.T, axis=1)
    return float(np.mean(pred == np.asarray(heldout_labels)))


def penultimate_features(net, X):
    """Activations feeding the final weight layer."""
    _, acts, _ = forward(net, X, want_acts=True)
    return acts[-2].reshape(len(X), -1)


def grad_similarity(net, batch_a, batch_b, T=1.0):
    """Cosine of full-parameter loss gradients on two batches."""
    g1 = diffengine.loss_grad(net, batch_a, T)
    g2 = diffengine.loss_grad(net, batch_b, T)
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        raise DegenerateGradient("zero gradient on one of the batches")
    return float(g1 @ g2 / (n1 * n2))


def prior_sweep(net, ds, n_priors, subset_size, seed, concentration=1.0):
    """Gradient norm vs prior mismatch ||Qhat - Q|| over Dirichlet priors.

    ``concentration`` sets the symmetric Dirichlet parameter; values below
    one sample spikier priors, widening the mismatch range covered.
    Returns rows of (gap, grad_norm, realized prior) plus the least-squares
    fit (slope, intercept, r2) of grad_norm against gap.
    """
    if concentration <= 0:
        raise InvalidInput("concentration must be positive")
    rng = Rng(seed)
    rows = []
    for i in range(n_priors):
        prior = rng.split(i).dirichlet(np.full(ds.K, concentration))
        batch, realized = resample_by_prior(ds, prior, subset_size,
                                            seed=(seed << 8) + i)
        z = forward(net, batch.X)
        _, sb = cross_entropy(z, batch.y, 1.0)
        _, qhat = confidence_stats(sb)
        q = np.bincount(batch.y, minlength=ds.K) / len(batch.y)
        gap = float(np.linalg.norm(qhat - q))
        g = diffengine.loss_grad(net, batch, 1.0)
        rows.append((gap, float(np.linalg.norm(g)), realized))
    gaps = np.array([r[0] for r in rows])
    norms = np.array([r[1] for r in rows])
    A = np.vstack([gaps, np.ones_like(gaps)]).T
    (slope, intercept), res, _, _ = np.linalg.lstsq(A, norms, rcond=None)
    ss_tot = float(np.sum((norms - norms.mean()) ** 2))
    ss_res = float(res[0]) if len(res) else float(
        np.sum((norms - A @ np.array([slope, intercept])) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return rows, float(slope), float(intercept), float(r2)


def confidence_scatter(n_inits, arch, input_shape, K, batch, d=50, seed=0,
                       projector_seed=1234):
    """Per-random-init rows: (mean entropy, grad norm, curvature, loss)."""
    if n_inits < 2:
        raise InvalidInput("need at least 2 initializations")
    rows = []
    for i in range(n_inits):
        net = build_net(arch, input_shape, K, Rng(seed).split(i).seed)
        z = forward(net, batch.X)
        loss, sb = cross_entropy(z, batch.y, 1.0)
        ent, _ = confidence_stats(sb)
        g = diffengine.loss_grad(net, batch, 1.0)
        R = diffengine.make_projector(net.P, min(d, net.P), projector_seed)
        dec = diffengine.projected_decomposition(net, batch, 1.0, R)
        curv = spectra.curvature_report(dec.H_d).positive_curvature
        rows.append((ent, float(np.linalg.norm(g)), float(curv), loss))
    return rows


def rank_correlation(x, y):
    """Spearman rank correlation (average ranks on ties)."""
    def ranks(a):
        a = np.asarray(a, dtype=np.float64)
        order = np.argsort(a, kind="stable")
        r = np.empty(len(a))
        r[order] = np.arange(len(a), dtype=np.float64)
        # average tied ranks
        for val in np.unique(a):
            mask = a == val
            r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if denom == 0:
        return 0.0
    return float(np.sum(rx * ry) / denom)
