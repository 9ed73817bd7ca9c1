"""Render delay-vs-false-alarm curves and per-stage sample paths.

Inputs are the CSV artifacts written by the simulation CLI: sweep files
(one operating point per row) and trace files (one stage per row, with
the change point recorded in a ``# gamma:`` comment).  Rendering is a
pure function of the file contents; fixed inputs give identical PNGs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

# 1200 x 800 px at the default bitmap resolution.
FIGSIZE = (12.0, 8.0)
DPI = 100

CURVE_COLUMNS = ("pfa", "edd", "policy")
TRACE_COLUMNS = ("stage", "alpha_sq", "c", "mu", "policy")


class SchemaError(ValueError):
    """An input CSV does not match the documented artifact schema."""


def read_csv(path, required, numeric):
    """Parse one artifact CSV into a dict of column lists.

    Comment lines (``# key: value``) are collected into the returned
    metadata dict.  Schema violations name the offending column or the
    1-based file row.
    """
    meta = {}
    header = None
    columns = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if ":" in body:
                    key, _, val = body.partition(":")
                    meta[key.strip()] = val.strip()
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                for col in required:
                    if col not in header:
                        raise SchemaError(f"{path}: missing column '{col}'")
                columns = {col: [] for col in header}
                continue
            if len(cells) != len(header):
                raise SchemaError(
                    f"{path}: row {lineno} has {len(cells)} cells, "
                    f"expected {len(header)}"
                )
            for col, cell in zip(header, cells):
                if col in numeric:
                    try:
                        cell = float(cell)
                    except ValueError as exc:
                        raise SchemaError(
                            f"{path}: row {lineno}, column '{col}': "
                            f"not a number: {cell!r}"
                        ) from exc
                columns[col].append(cell)
    if header is None:
        raise SchemaError(f"{path}: no header row")
    if not next(iter(columns.values()), []):
        raise SchemaError(f"{path}: no data rows")
    return columns, meta


def _save(fig, out_path):
    fig.savefig(out_path, dpi=DPI, metadata={"Software": "plots"})
    plt.close(fig)


def render_curves(in_paths, out_path, labels=None):
    """One delay-vs-P_FA series per input sweep CSV, log-scaled P_FA."""
    if not in_paths:
        raise SchemaError("need at least one curve CSV")
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for i, path in enumerate(in_paths):
        cols, _meta = read_csv(path, CURVE_COLUMNS, {"pfa", "edd"})
        rows = sorted(zip(cols["pfa"], cols["edd"]))
        if labels and i < len(labels):
            label = labels[i]
        else:
            label = cols["policy"][0]
        ax.plot(
            [r[0] for r in rows],
            [r[1] for r in rows],
            marker="o",
            label=label,
        )
    ax.set_xscale("log")
    ax.set_xlabel("probability of false alarm")
    ax.set_ylabel("expected detection delay")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, out_path)
    return out_path


def render_samplepath(in_path, out_path):
    """Three stacked panels (alpha^2, c, belief) along one sample path.

    A vertical line marks the change point when the trace records one.
    """
    cols, meta = read_csv(in_path, TRACE_COLUMNS, {"stage", "alpha_sq", "c", "mu"})
    stages = cols["stage"]
    gamma = None
    if "gamma" in meta:
        try:
            gamma = float(meta["gamma"])
        except ValueError as exc:
            raise SchemaError(f"{in_path}: bad gamma comment: {meta['gamma']!r}") from exc
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=FIGSIZE)
    panels = [
        ("alpha_sq", r"$\alpha^2$"),
        ("c", "c"),
        ("mu", r"$\mu$"),
    ]
    for ax, (col, label) in zip(axes, panels):
        ax.plot(stages, cols[col], drawstyle="steps-post")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        if gamma is not None and stages[0] <= gamma <= stages[-1] + 1:
            ax.axvline(gamma, color="tab:red", linestyle="--", linewidth=1.2)
    axes[-1].set_xlabel("stage")
    title = cols["policy"][0]
    axes[0].set_title(f"{title} sample path")
    _save(fig, out_path)
    return out_path
