"""Experiment driver: JSON config in, CSV tables + a JSON run manifest out.

Every command is deterministic from (config, seed): grid cells run on a
thread pool sized by GOLDIZONE_THREADS, and rows are sorted by grid key
before writing so parallelism never changes output bytes. Exit codes:
0 success, 2 config error, 3 I/O error.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, datasets, diffengine, logitmodel, spectra, trainlab
from .errors import ConfigError, GoldizoneError
from .netzoo import (ARCH_NAMES, Batch, build_net, confidence_stats,
                     cross_entropy, forward, scale_params, stable_softmax)

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# config plumbing

_DATASET_DEFAULTS = {
    "kind": "blobs", "K": 3, "dim": 8, "n_per_class": 40, "spread": 0.5,
    "seed": 0, "sep": 2.0, "input_scale": 1.0,
    "shape": [1, 8, 8], "n": 256,
    "images": None, "labels": None, "standardize": False,
}

_COMMON_DEFAULTS = {
    "arch": "mlp-small",
    "seed": 0,
    "seeds": None,            # optional list; falls back to [seed]
    "d": 50,
    "T": 1.0,
    "projector_seed": 1234,
    "hessian_batch": 512,
    "out_dir": ".",
    "dataset": None,
}

_COMMAND_DEFAULTS = {
    "sweep-alpha": {"alpha_grid": [0.5, 1.0, 2.0]},
    "sweep-temp": {"alpha": 1.0, "temp_grid": [0.5, 1.0, 2.0]},
    "train-grid": {"alpha_grid": [0.5, 1.0], "eta0_grid": [0.01, 0.1],
                   "epochs": 2000, "baseline_eta0": 0.05,
                   "baseline_epochs": 400},
    "scatter": {"n_inits": 50},
    "grad-similarity": {"alpha_grid": [1.0], "n_pairs": 10,
                        "batch_size": 32},
    "prior-sweep": {"alpha": 1.0, "n_priors": 50, "subset_size": 128,
                    "sigma_batch": 32, "concentration": 1.0},
    "uso": {"alpha": 0.01, "eta0": 0.01, "epochs": 100},
    "precollapse": {"alpha_grid": None, "n_alphas": 6, "entropy_target": 1e-6},
}


def load_config(command, path, overrides):
    cfg = dict(_COMMON_DEFAULTS)
    cfg.update(_COMMAND_DEFAULTS[command])
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except OSError:
            raise
        except ValueError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})")
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for key, val in user.items():
            if key not in cfg:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            cfg[key] = val
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    _validate(command, cfg)
    return cfg


def _validate(command, cfg):
    def fail(field, why):
        raise ConfigError(f"config.{field}: {why}")

    if cfg["arch"] not in ARCH_NAMES:
        fail("arch", f"unknown architecture {cfg['arch']!r}, "
             f"expected one of {ARCH_NAMES}")
    if not isinstance(cfg["d"], int) or cfg["d"] < 1:
        fail("d", "must be a positive integer")
    if cfg["T"] <= 0:
        fail("T", "temperature must be positive")
    if cfg["seeds"] is not None and (
            not isinstance(cfg["seeds"], list) or not cfg["seeds"]):
        fail("seeds", "must be a non-empty list of integers")
    for key in ("alpha_grid", "temp_grid", "eta0_grid"):
        grid = cfg.get(key)
        if grid is not None:
            if not isinstance(grid, list) or not grid:
                fail(key, "must be a non-empty list")
            if any(not isinstance(v, (int, float)) or v <= 0 for v in grid):
                fail(key, "entries must be positive numbers")
    ds = cfg["dataset"]
    if ds is not None:
        if not isinstance(ds, dict):
            fail("dataset", "must be an object")
        kind = ds.get("kind", "blobs")
        if kind not in ("blobs", "gaussian-images", "idx"):
            fail("dataset.kind", f"unknown kind {kind!r}")
        for key in ds:
            if key not in _DATASET_DEFAULTS:
                fail(f"dataset.{key}", "unknown key")


def make_dataset(cfg):
    spec = dict(_DATASET_DEFAULTS)
    spec.update(cfg["dataset"] or {})
    kind = spec["kind"]
    if kind == "blobs":
        return datasets.make_blobs(spec["K"], spec["dim"],
                                   spec["n_per_class"], spec["spread"],
                                   spec["seed"], sep=spec["sep"],
                                   input_scale=spec["input_scale"])
    if kind == "gaussian-images":
        return datasets.gaussian_images(tuple(spec["shape"]), spec["n"],
                                        spec["seed"], K=spec["K"])
    if spec["images"] is None or spec["labels"] is None:
        raise ConfigError("config.dataset: idx kind needs images and labels "
                          "paths")
    return datasets.load_idx(spec["images"], spec["labels"],
                             seed=spec["seed"],
                             standardize=spec["standardize"])


def _seeds(cfg):
    return list(cfg["seeds"]) if cfg["seeds"] is not None else [cfg["seed"]]


def _thread_count():
    raw = os.environ.get("GOLDIZONE_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"GOLDIZONE_THREADS must be an integer, "
                              f"got {raw!r}")
        if n < 1:
            raise ConfigError("GOLDIZONE_THREADS must be >= 1")
        return n
    return min(8, os.cpu_count() or 1)


def run_grid(items, fn):
    """Evaluate fn over items on the worker pool, preserving item order."""
    workers = _thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# output plumbing

def fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if v is None:
        return ""
    return str(v)


def write_csv(path, command, header, rows):
    lines = [f"# schema=goldizone/{command}/v{SCHEMA_VERSION}",
             ",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_value(v) for v in row))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def write_manifest(path, command, cfg, ds, net, extra=None):
    manifest = {
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg,
        "seeds": _seeds(cfg),
        "arch": cfg["arch"],
        "dataset_checksum": ds.checksum(),
        "P": net.P,
        "L": net.L,
        "d": cfg["d"],
        "hessian_batch": cfg["hessian_batch"],
        "grad_law_variants": ["stated", "derived"],
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_paths(cfg, command):
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    return (os.path.join(out, f"{command}.csv"),
            os.path.join(out, f"{command}.manifest.json"))


def _eval_batch(ds, cfg, seed):
    n = min(cfg["hessian_batch"], len(ds.train_idx))
    return datasets.balanced_batch(ds, n, seed, indices=ds.train_idx)


# ---------------------------------------------------------------------------
# per-point measurement shared by the sweep commands

SWEEP_HEADER = ["alpha", "temperature", "eta0", "seed", "curvature_H",
                "curvature_G", "curvature_Hstar", "specnorm_H", "specnorm_G",
                "specnorm_Hstar", "local_convexity", "mean_entropy", "loss",
                "grad_norm", "in_zone", "regime"]


def sweep_point(net, batch, alpha, T, cfg):
    """Curvature/confidence metrics of a scaled net at one grid point."""
    snet = scale_params(net, alpha)
    R = diffengine.make_projector(net.P, min(cfg["d"], net.P),
                                  cfg["projector_seed"])
    dec = diffengine.projected_decomposition(snet, batch, T, R, alpha)
    rep_h = spectra.curvature_report(dec.H_d)
    rep_g = spectra.curvature_report(dec.G_d)
    rep_s = spectra.curvature_report(dec.Hstar_d)
    verdict = spectra.goldilocks_verdict(dec)
    z = forward(snet, batch.X)
    loss, sb = cross_entropy(z, batch.y, T)
    ent, _ = confidence_stats(sb)
    gnorm = float(np.linalg.norm(diffengine.loss_grad(snet, batch, T)))
    return {
        "curvature_H": rep_h.positive_curvature,
        "curvature_G": rep_g.positive_curvature,
        "curvature_Hstar": rep_s.positive_curvature,
        "specnorm_H": rep_h.spec_norm,
        "specnorm_G": rep_g.spec_norm,
        "specnorm_Hstar": rep_s.spec_norm,
        "local_convexity": rep_h.local_convexity,
        "mean_entropy": ent,
        "loss": loss,
        "grad_norm": gnorm,
        "in_zone": verdict.in_zone,
    }


def _sweep_row(alpha, T, seed, metrics, eta0=None, regime=None):
    return [alpha, T, eta0, seed] + [metrics[k] for k in SWEEP_HEADER[4:14]] \
        + [metrics["in_zone"], regime]


# ---------------------------------------------------------------------------
# commands

def cmd_sweep_alpha(cfg):
    ds = make_dataset(cfg)
    input_shape = ds.X.shape[1:]
    points = sorted((float(a), int(s))
                    for a in cfg["alpha_grid"] for s in _seeds(cfg))

    def cell(point):
        alpha, seed = point
        net = build_net(cfg["arch"], input_shape, ds.K, seed)
        batch = _eval_batch(ds, cfg, seed)
        m = sweep_point(net, batch, alpha, cfg["T"], cfg)
        return _sweep_row(alpha, cfg["T"], seed, m)

    rows = run_grid(points, cell)
    csv_path, man_path = _out_paths(cfg, "sweep-alpha")
    write_csv(csv_path, "sweep-alpha", SWEEP_HEADER, rows)
    net = build_net(cfg["arch"], input_shape, ds.K, _seeds(cfg)[0])
    write_manifest(man_path, "sweep-alpha", cfg, ds, net)
    return csv_path


def cmd_sweep_temp(cfg):
    ds = make_dataset(cfg)
    input_shape = ds.X.shape[1:]
    alpha = float(cfg["alpha"])
    points = sorted((float(t), int(s))
                    for t in cfg["temp_grid"] for s in _seeds(cfg))
    header = SWEEP_HEADER + ["curvature_H_dual", "specnorm_H_dual"]

    def cell(point):
        T, seed = point
        net = build_net(cfg["arch"], input_shape, ds.K, seed)
        batch = _eval_batch(ds, cfg, seed)
        m = sweep_point(net, batch, alpha, T, cfg)
        # duality companion: the same point reached by scaling instead,
        # alpha' = alpha * T^(-1/L) at unit temperature
        alpha_dual = alpha * T ** (-1.0 / net.L)
        md = sweep_point(net, batch, alpha_dual, 1.0, cfg)
        return _sweep_row(alpha, T, seed, m) + [md["curvature_H"],
                                                md["specnorm_H"]]

    rows = run_grid(points, cell)
    csv_path, man_path = _out_paths(cfg, "sweep-temp")
    write_csv(csv_path, "sweep-temp", header, rows)
    net = build_net(cfg["arch"], input_shape, ds.K, _seeds(cfg)[0])
    write_manifest(man_path, "sweep-temp", cfg, ds, net)
    return csv_path


def cmd_train_grid(cfg):
    ds = make_dataset(cfg)
    input_shape = ds.X.shape[1:]
    baseline = trainlab.baseline_accuracy(cfg["arch"], ds,
                                          cfg["baseline_eta0"],
                                          epochs=cfg["baseline_epochs"])
    points = sorted((float(a), float(e), int(s))
                    for a in cfg["alpha_grid"] for e in cfg["eta0_grid"]
                    for s in _seeds(cfg))
    header = ["alpha", "eta0", "seed", "regime", "max_train_acc",
              "max_test_acc", "final_zero_logit_fraction", "max_theta_norm",
              "eta_specnorm_product", "error"]

    def cell(point):
        alpha, eta0, seed = point
        try:
            tcfg = trainlab.TrainConfig(alpha=alpha, eta0=eta0,
                                        arch=cfg["arch"], T=cfg["T"],
                                        epochs=cfg["epochs"], seed=seed)
            net = scale_params(build_net(cfg["arch"], input_shape, ds.K,
                                         seed), alpha)
            batch = _eval_batch(ds, cfg, seed)
            R = diffengine.make_projector(net.P, min(cfg["d"], net.P),
                                          cfg["projector_seed"])
            dec = diffengine.projected_decomposition(net, batch, cfg["T"], R)
            spec_h = spectra.curvature_report(dec.H_d).spec_norm
            traj = trainlab.train(tcfg, ds)
            regime = trainlab.classify_regime(traj, baseline)
            return [alpha, eta0, seed, regime,
                    max(traj.train_acc) if traj.train_acc else 0.0,
                    max(traj.test_acc) if traj.test_acc else 0.0,
                    traj.zero_logit_fraction[-1]
                    if traj.zero_logit_fraction else 1.0,
                    traj.max_theta_norm,
                    traj.eta_effective * spec_h, None]
        except GoldizoneError as e:       # failed cells are data, not crashes
            return [alpha, eta0, seed, "Error", None, None, None, None, None,
                    str(e)]

    rows = run_grid(points, cell)
    csv_path, man_path = _out_paths(cfg, "train-grid")
    write_csv(csv_path, "train-grid", header, rows)
    net = build_net(cfg["arch"], input_shape, ds.K, _seeds(cfg)[0])
    write_manifest(man_path, "train-grid", cfg, ds, net,
                   extra={"baseline_accuracy": baseline})
    return csv_path


def cmd_scatter(cfg):
    ds = make_dataset(cfg)
    batch = _eval_batch(ds, cfg, cfg["seed"])
    rows_raw = trainlab.confidence_scatter(
        cfg["n_inits"], cfg["arch"], ds.X.shape[1:], ds.K, batch,
        d=cfg["d"], seed=cfg["seed"], projector_seed=cfg["projector_seed"])
    header = ["init", "mean_entropy", "grad_norm", "curvature_H", "loss"]
    rows = [[i] + list(r) for i, r in enumerate(rows_raw)]
    ents = [r[0] for r in rows_raw]
    rho = {
        "spearman_entropy_grad": trainlab.rank_correlation(
            ents, [r[1] for r in rows_raw]),
        "spearman_entropy_curvature": trainlab.rank_correlation(
            ents, [r[2] for r in rows_raw]),
    }
    csv_path, man_path = _out_paths(cfg, "scatter")
    write_csv(csv_path, "scatter", header, rows)
    net = build_net(cfg["arch"], ds.X.shape[1:], ds.K, cfg["seed"])
    write_manifest(man_path, "scatter", cfg, ds, net, extra=rho)
    return csv_path


def cmd_grad_similarity(cfg):
    ds = make_dataset(cfg)
    input_shape = ds.X.shape[1:]
    points = sorted((float(a), int(i))
                    for a in cfg["alpha_grid"] for i in range(cfg["n_pairs"]))

    def cell(point):
        alpha, pair = point
        net = scale_params(build_net(cfg["arch"], input_shape, ds.K,
                                     cfg["seed"]), alpha)
        a = datasets.balanced_batch(ds, cfg["batch_size"], 2 * pair,
                                    indices=ds.train_idx)
        b = datasets.balanced_batch(ds, cfg["batch_size"], 2 * pair + 1,
                                    indices=ds.train_idx)
        return [alpha, pair, trainlab.grad_similarity(net, a, b, cfg["T"])]

    rows = run_grid(points, cell)
    csv_path, man_path = _out_paths(cfg, "grad-similarity")
    write_csv(csv_path, "grad-similarity", ["alpha", "pair", "cosine"], rows)
    net = build_net(cfg["arch"], input_shape, ds.K, cfg["seed"])
    write_manifest(man_path, "grad-similarity", cfg, ds, net)
    return csv_path


def cmd_prior_sweep(cfg):
    ds = make_dataset(cfg)
    input_shape = ds.X.shape[1:]
    net = scale_params(build_net(cfg["arch"], input_shape, ds.K,
                                 cfg["seed"]), cfg["alpha"])
    rows_raw, slope, intercept, r2 = trainlab.prior_sweep(
        net, ds, cfg["n_priors"], cfg["subset_size"], cfg["seed"],
        concentration=cfg["concentration"])
    # sigma estimates from per-sample logit jacobians on a small batch,
    # feeding both variants of the expected-gradient law
    sb = datasets.balanced_batch(ds, cfg["sigma_batch"], cfg["seed"],
                                 indices=ds.train_idx)
    jac = [diffengine.logit_jacobian(net, x) for x in sb.X]
    params = logitmodel.estimate_sigmas(jac)
    header = ["prior_index", "gap", "grad_norm", "predicted_stated",
              "predicted_derived", "slope", "intercept", "r2"]
    rows = []
    for i, (gap, gnorm, _) in enumerate(rows_raw):
        stated = params.d * params.sigma_c2 * gap
        derived = float(np.sqrt(params.d * params.sigma_c2)) * gap
        rows.append([i, gap, gnorm, stated, derived, slope, intercept, r2])
    csv_path, man_path = _out_paths(cfg, "prior-sweep")
    write_csv(csv_path, "prior-sweep", header, rows)
    write_manifest(man_path, "prior-sweep", cfg, ds, net, extra={
        "sigma_c2": params.sigma_c2, "sigma_e2": params.sigma_e2,
        "fit": {"slope": slope, "intercept": intercept, "r2": r2}})
    return csv_path


def cmd_uso(cfg):
    ds = make_dataset(cfg)
    alpha = float(cfg["alpha"])
    base_cfg = trainlab.TrainConfig(alpha=1.0, eta0=cfg["eta0"],
                                    arch=cfg["arch"], T=cfg["T"],
                                    epochs=cfg["epochs"], seed=cfg["seed"],
                                    uso_mode=True)
    scaled_cfg = trainlab.TrainConfig(alpha=alpha, eta0=cfg["eta0"],
                                      arch=cfg["arch"], T=cfg["T"],
                                      epochs=cfg["epochs"], seed=cfg["seed"],
                                      uso_mode=True)
    base = trainlab.uso_train(base_cfg, ds, keep_thetas=True)
    scaled = trainlab.uso_train(scaled_cfg, ds, keep_thetas=True)
    tb = ds.train_batch()
    input_shape = tb.X.shape[1:]
    net = build_net(cfg["arch"], input_shape, ds.K, cfg["seed"])
    header = ["step", "loss_scaled", "loss_base", "equivalence_dev",
              "uniformity_dev"]
    rows = []
    for i, step in enumerate(scaled.steps):
        if i >= len(base.thetas) or i >= len(scaled.thetas):
            break
        ts, tbase = scaled.thetas[i], base.thetas[i]
        dev = float(np.linalg.norm(ts - alpha * tbase)
                    / max(np.linalg.norm(ts), 1e-300))
        p = stable_softmax(forward(net.with_theta(ts), tb.X), cfg["T"])
        uni = float(np.max(np.abs(p - 1.0 / ds.K)))
        rows.append([step, scaled.loss[i], base.loss[i], dev, uni])
    csv_path, man_path = _out_paths(cfg, "uso")
    write_csv(csv_path, "uso", header, rows)
    write_manifest(man_path, "uso", cfg, ds, net)
    return csv_path


def cmd_precollapse(cfg):
    ds = make_dataset(cfg)
    batch = _eval_batch(ds, cfg, cfg["seed"])
    net = build_net(cfg["arch"], ds.X.shape[1:], ds.K, cfg["seed"])
    grid = cfg["alpha_grid"]
    if grid is None:
        a_star = spectra.find_precollapse_alpha(
            net, batch, target=cfg["entropy_target"])
        grid = list(np.geomspace(1.0, 0.95 * a_star, cfg["n_alphas"]))
    reports = spectra.precollapse_probe(net, batch, sorted(map(float, grid)),
                                        d=cfg["d"], seed=cfg["seed"])
    header = ["alpha", "min_entropy", "mean_entropy", "mu0", "g_curvature",
              "top_eig", "alignment_cos"]
    rows = [[r["alpha"], max(0.0, float(r["entropies"].min())),
             float(r["entropies"].mean()), r["mu0"], r["g_curvature"],
             r["top_eig"], r["alignment_cos"]] for r in reports]
    csv_path, man_path = _out_paths(cfg, "precollapse")
    write_csv(csv_path, "precollapse", header, rows)
    write_manifest(man_path, "precollapse", cfg, ds, net)
    return csv_path


_COMMANDS = {
    "sweep-alpha": cmd_sweep_alpha,
    "sweep-temp": cmd_sweep_temp,
    "train-grid": cmd_train_grid,
    "scatter": cmd_scatter,
    "grad-similarity": cmd_grad_similarity,
    "prior-sweep": cmd_prior_sweep,
    "uso": cmd_uso,
    "precollapse": cmd_precollapse,
}


# ---------------------------------------------------------------------------
# entry point

def _float_list(raw):
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: "
                                         f"{raw!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="goldizone",
        description="Curvature sweeps and training-regime experiments for "
                    "homogeneous ReLU nets.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out-dir", dest="out_dir", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--d", type=int, default=None)
        p.add_argument("--alpha-grid", dest="alpha_grid", type=_float_list,
                       default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k)
                 for k in ("out_dir", "seed", "d", "alpha_grid")}
    if args.command not in ("sweep-alpha", "train-grid", "grad-similarity",
                            "precollapse"):
        overrides.pop("alpha_grid")
    try:
        cfg = load_config(args.command, args.config, overrides)
        csv_path = _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    print(csv_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
