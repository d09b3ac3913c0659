"""Figure rendering: one function per figure kind.

All functions take a parsed FigureSpec and draw onto a fresh matplotlib
figure; rendering never mutates the input CSVs, and output bytes are
stable for a fixed matplotlib version (fixed hashsalt, no timestamps).
"""

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "plotkit"

import matplotlib.pyplot as plt
import numpy as np

from .errors import InvalidSpec
from .reader import read_table

FIGURE_KINDS = ("alpha-curve", "temp-curve", "heatmap", "scatter",
                "regression", "trajectory")

# Regime palette; zero-logit cells are the azure ones.
REGIME_COLORS = {
    "Normal": "#2ca02c",
    "Diverged": "#d62728",
    "ZeroLogit": "#007fff",
    "Lazy": "#ff7f0e",
    "Stalled": "#7f7f7f",
    "Error": "#17100e",
}
_UNKNOWN_REGIME_COLOR = "#e7e1ef"

_DEFAULTS = {
    "alpha-curve": {"x": "alpha",
                    "y": ["curvature_H", "curvature_G", "curvature_Hstar"],
                    "logx": True},
    "temp-curve": {"x": "temperature",
                   "y": ["curvature_H", "curvature_H_dual"],
                   "logx": True},
    "heatmap": {"x": "alpha", "y": "eta0", "value": "regime"},
    "scatter": {"x": "mean_entropy", "y": "grad_norm"},
    "regression": {"x": "gap", "y": "grad_norm"},
    "trajectory": {"x": "step", "y": ["loss_scaled", "loss_base"]},
}


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    csv: str
    out: str
    x: str
    y: object                   # column name or list of names
    value: str = "regime"       # heatmap cell column
    logx: bool = False
    logy: bool = False
    title: str = ""
    fmt: str = "svg"

    @property
    def y_list(self):
        return [self.y] if isinstance(self.y, str) else list(self.y)


def spec_from_dict(raw):
    if not isinstance(raw, dict):
        raise InvalidSpec("figure spec must be a JSON object")
    kind = raw.get("kind")
    if kind not in FIGURE_KINDS:
        raise InvalidSpec(f"unknown figure kind {kind!r}; "
                          f"expected one of {', '.join(FIGURE_KINDS)}")
    for required in ("csv", "out"):
        if required not in raw:
            raise InvalidSpec(f"figure spec lacks the {required!r} field")
    known = {"kind", "csv", "out", "x", "y", "value", "logx", "logy",
             "title", "fmt"}
    for key in raw:
        if key not in known:
            raise InvalidSpec(f"unknown figure spec field {key!r}")
    merged = dict(_DEFAULTS[kind])
    merged.update({k: v for k, v in raw.items() if k != "kind"})
    merged.setdefault("logx", False)
    return FigureSpec(kind=kind, **merged)


def _finish(fig, ax, spec):
    if spec.title:
        ax.set_title(spec.title)
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    fig.savefig(spec.out, format=spec.fmt, metadata={"Date": None}
                if spec.fmt == "svg" else None)
    plt.close(fig)


def _render_curves(spec, table):
    x = table.floats(spec.x)
    order = np.argsort(x, kind="stable")
    fig, ax = plt.subplots(figsize=(5, 3.5), constrained_layout=True)
    for name in spec.y_list:
        ax.plot(x[order], table.floats(name)[order], marker="o",
                markersize=3, label=name)
    ax.set_xlabel(spec.x)
    ax.legend(fontsize=8)
    _finish(fig, ax, spec)


def _render_heatmap(spec, table):
    xs = table.floats(spec.x)
    ys = table.floats(spec.y)
    values = table.strings(spec.value)
    xlev = sorted(set(xs))
    ylev = sorted(set(ys))
    fig, ax = plt.subplots(figsize=(5, 4), constrained_layout=True)
    cell = {}
    for xv, yv, v in zip(xs, ys, values):
        cell[(xv, yv)] = v
    seen = []
    for i, xv in enumerate(xlev):
        for j, yv in enumerate(ylev):
            label = cell.get((xv, yv), "")
            color = REGIME_COLORS.get(label, _UNKNOWN_REGIME_COLOR)
            ax.add_patch(plt.Rectangle((i, j), 1, 1, facecolor=color,
                                       edgecolor="white"))
            if label and label not in seen:
                seen.append(label)
    ax.set_xlim(0, len(xlev))
    ax.set_ylim(0, len(ylev))
    ax.set_xticks(np.arange(len(xlev)) + 0.5, [f"{v:g}" for v in xlev])
    ax.set_yticks(np.arange(len(ylev)) + 0.5, [f"{v:g}" for v in ylev])
    ax.set_xlabel(spec.x)
    ax.set_ylabel(spec.y)
    handles = [plt.Rectangle((0, 0), 1, 1,
                             facecolor=REGIME_COLORS.get(
                                 lab, _UNKNOWN_REGIME_COLOR))
               for lab in seen]
    ax.legend(handles, seen, fontsize=8, loc="upper left",
              bbox_to_anchor=(1.01, 1.0))
    _finish(fig, ax, spec)


def _render_scatter(spec, table):
    fig, ax = plt.subplots(figsize=(4.5, 3.5), constrained_layout=True)
    y = spec.y_list[0]
    ax.scatter(table.floats(spec.x), table.floats(y), s=12, alpha=0.7)
    ax.set_xlabel(spec.x)
    ax.set_ylabel(y)
    _finish(fig, ax, spec)


def _render_regression(spec, table):
    x = table.floats(spec.x)
    yname = spec.y_list[0]
    y = table.floats(yname)
    fig, ax = plt.subplots(figsize=(4.5, 3.5), constrained_layout=True)
    ax.scatter(x, y, s=12, alpha=0.7, label="observed")
    a = np.vstack([x, np.ones_like(x)]).T
    slope, intercept = np.linalg.lstsq(a, y, rcond=None)[0]
    grid = np.linspace(float(x.min()), float(x.max()), 50)
    ax.plot(grid, slope * grid + intercept, color="black",
            label=f"fit ({slope:.3g} x + {intercept:.3g})")
    # overlay both formula-variant prediction lines when the producer
    # carried them (prior-sweep CSVs do, by contract)
    for column, style in (("predicted_stated", "--"),
                          ("predicted_derived", ":")):
        if column in table.columns:
            pred = table.floats(column)
            order = np.argsort(x, kind="stable")
            ax.plot(x[order], pred[order], style, label=column)
    ax.set_xlabel(spec.x)
    ax.set_ylabel(yname)
    ax.legend(fontsize=8)
    _finish(fig, ax, spec)


_RENDERERS = {
    "alpha-curve": _render_curves,
    "temp-curve": _render_curves,
    "trajectory": _render_curves,
    "heatmap": _render_heatmap,
    "scatter": _render_scatter,
    "regression": _render_regression,
}


def render(spec):
    """Render one figure; returns the output path."""
    table = read_table(spec.csv)
    if spec.kind == "heatmap":
        table.require(spec.x, spec.y, spec.value)
    else:
        table.require(spec.x, *spec.y_list)
    _RENDERERS[spec.kind](spec, table)
    return spec.out
