"""Figure rendering from the sampler's CSV artifacts.

These scripts are strictly read-only consumers: every curve they draw comes
from a CSV emitted by the sampler CLI (including the analytic reference
curves), so no physics is recomputed here. Rendering is deterministic for
identical inputs: a fixed style, the Agg backend, and no timestamps in the
output bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("hist-overlay", "scatter-overlay", "multiline", "semilogy-multiline")

_STYLE = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


class SchemaError(ValueError):
    """An input CSV is missing a required column or has no data rows."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list[str]
    output: str
    x: str = ""
    y: str = ""
    group: str = ""
    err: str = ""
    dashed_group: str = ""
    align_offset: bool = False
    bins: int = 80
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


def read_csv_columns(path, required):
    """Load a delimited file into named float arrays, checking the schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = {}
    for col in required:
        i = header.index(col)
        column = []
        for row in rows:
            try:
                column.append(float(row[i]))
            except ValueError:
                raise SchemaError(f"{path}: non-numeric value in column {col!r}") from None
        data[col] = np.array(column)
    return data


def _save(fig, output):
    fig.tight_layout()
    fig.savefig(output, metadata={"Software": "mmplots"})
    plt.close(fig)


def _render_hist_overlay(spec: FigureSpec):
    """Sampled-coordinate histograms with the reference density curves.

    Expects the chain stream CSV and the reference-density CSV; draws the
    coarse coordinate against the filtered density and the fine coordinate
    against the plain Boltzmann density.
    """
    if len(spec.inputs) < 2:
        raise SchemaError("hist-overlay needs the chain CSV and the reference CSV")
    chain = read_csv_columns(spec.inputs[0], ["z", "xi_x"])
    ref = read_csv_columns(spec.inputs[1], ["z", "mu0", "mu_lambda"])
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0))
    for ax, samples, curve, label in (
        (axes[0], chain["z"], ref["mu_lambda"], "coarse samples vs filtered density"),
        (axes[1], chain["xi_x"], ref["mu0"], "fine samples vs free-energy density"),
    ):
        ax.hist(samples, bins=spec.bins, density=True, color="tab:orange", alpha=0.7)
        ax.plot(ref["z"], curve, color="tab:blue", lw=1.5)
        ax.set_xlabel("torsion angle (rad)")
        ax.set_title(label)
    axes[0].set_ylabel("density")
    if spec.title:
        fig.suptitle(spec.title)
    _save(fig, spec.output)


def _render_scatter_overlay(spec: FigureSpec):
    """Scattered estimates against the exact curve, optionally offset-aligned.

    Free energies are defined up to an additive constant; with align_offset
    the scattered values are shifted by the mean gap to the exact curve so the
    shapes can be compared directly.
    """
    if len(spec.inputs) < 2:
        raise SchemaError("scatter-overlay needs the scatter CSV and the reference CSV")
    scatter = read_csv_columns(spec.inputs[0], ["z", "q_lambda"])
    ref = read_csv_columns(spec.inputs[1], ["z", "q_exact"])
    values = scatter["q_lambda"]
    label = "recorded estimates"
    if spec.align_offset:
        exact_at = np.interp(scatter["z"], ref["z"], ref["q_exact"])
        values = values - float(np.mean(values - exact_at))
        label += " (offset aligned)"
    fig, ax = plt.subplots()
    ax.plot(scatter["z"], values, ".", ms=2.5, color="tab:orange", label=label)
    ax.plot(ref["z"], ref["q_exact"], color="tab:blue", lw=1.5, label="exact")
    ax.set_xlabel("reaction coordinate (rad)")
    ax.set_ylabel("effective free energy (K)")
    ax.legend()
    if spec.title:
        ax.set_title(spec.title)
    _save(fig, spec.output)


def _render_multiline(spec: FigureSpec, logy=False):
    """One line per group value, x against y, optional error bars."""
    x = spec.x or "N"
    y = spec.y or "mean_micro_acc"
    group = spec.group or "K"
    cols = [x, y, group] + ([spec.err] if spec.err else [])
    data = read_csv_columns(spec.inputs[0], cols)
    fig, ax = plt.subplots()
    try:
        group_values = sorted(set(data[group]))
    except TypeError:  # pragma: no cover - group column is always numeric here
        group_values = list(dict.fromkeys(data[group]))
    for g in group_values:
        mask = data[group] == g
        order = np.argsort(data[x][mask])
        xs = data[x][mask][order]
        ys = data[y][mask][order]
        name = f"{group}={g:g}"
        style = "--" if spec.dashed_group and f"{g:g}" == spec.dashed_group else "-"
        if spec.err:
            ax.errorbar(xs, ys, yerr=data[spec.err][mask][order], fmt="o" + style, label=name, capsize=2)
        else:
            ax.plot(xs, ys, "o" + style, label=name)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend()
    if spec.title:
        ax.set_title(spec.title)
    _save(fig, spec.output)


def _render_multiline_text_group(spec: FigureSpec, logy=False):
    """Variant for a non-numeric group column (e.g. functional names)."""
    x = spec.x or "K"
    y = spec.y or "gain"
    group = spec.group or "functional"
    numeric = read_csv_columns(spec.inputs[0], [x, y])
    with open(spec.inputs[0], newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if group not in header:
            raise SchemaError(f"{spec.inputs[0]}: missing column(s) {group}")
        gi = header.index(group)
        groups = np.array([row[gi] for row in reader])
    fig, ax = plt.subplots()
    for g in dict.fromkeys(groups):
        mask = groups == g
        order = np.argsort(numeric[x][mask])
        style = "--" if g == (spec.dashed_group or "variance") else "-"
        ax.plot(numeric[x][mask][order], numeric[y][mask][order], "o" + style, label=f"{group}={g}")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend()
    if spec.title:
        ax.set_title(spec.title)
    _save(fig, spec.output)


def render(spec: FigureSpec):
    """Render one figure to spec.output; raises before creating the file on
    any schema problem."""
    with plt.rc_context(_STYLE):
        if spec.kind == "hist-overlay":
            _render_hist_overlay(spec)
        elif spec.kind == "scatter-overlay":
            _render_scatter_overlay(spec)
        elif spec.kind == "multiline":
            if spec.group and not _column_is_numeric(spec.inputs[0], spec.group):
                _render_multiline_text_group(spec)
            else:
                _render_multiline(spec)
        elif spec.kind == "semilogy-multiline":
            if spec.group and not _column_is_numeric(spec.inputs[0], spec.group):
                _render_multiline_text_group(spec, logy=True)
            else:
                _render_multiline(spec, logy=True)
    return spec.output


def _column_is_numeric(path, column):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or column not in header:
            raise SchemaError(f"{path}: missing column(s) {column}")
        i = header.index(column)
        row = next(reader, None)
    if row is None:
        raise SchemaError(f"{path}: no data rows")
    try:
        float(row[i])
        return True
    except ValueError:
        return False
