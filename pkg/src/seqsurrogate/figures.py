"""Matplotlib rendering for the CLI report paths.

Every figure is written next to its CSV with the same stem. Rendering is
deterministic: fixed size/dpi and no software/date metadata, so re-running
a command reproduces the PNG byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _new_axes(xlabel: str, ylabel: str, title: str):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def render_report(report, path) -> None:
    """Histogram of per-sequence errors with the summary statistics marked."""
    values = report.values
    fig, ax = _new_axes("trajectory error (scaled)", "sequences", f"{report.family}: test errors")
    ax.hist(values, bins=min(40, max(10, len(values) // 10)), color="#4878a8", alpha=0.85)
    ax.axvline(report.median, color="k", linestyle="--", label=f"median {report.median:.4f}")
    ax.axvline(report.mean, color="#b04030", linestyle=":", label=f"mean {report.mean:.4f}")
    ax.legend()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_history(history, path, title: str = "training loss") -> None:
    fig, ax = _new_axes("epoch", "mean batch loss", title)
    ax.semilogy(np.arange(1, history.n_epochs + 1), history.losses, color="#4878a8")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_length_study(table, path) -> None:
    xs = [r.x for r in table.rows]
    med = [r.median_iae for r in table.rows]
    fig, ax = _new_axes("input sequence length", "median trajectory error", "error vs observed prefix")
    ax.plot(xs, med, "o-", color="#4878a8")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_convergence(result, path) -> None:
    dxs = np.array([row[0] for row in result.rows])
    errs = np.array([row[3] for row in result.rows])
    title = "solver error vs spatial step"
    if result.order is not None:
        title += f" (fitted order {result.order:.2f})"
    fig, ax = _new_axes("dx", "|final value - closed form|", title)
    ax.loglog(dxs, errs, "ko-", label="measured")
    if result.order is not None and np.all(errs > 0):
        ref = errs[-1] * (dxs / dxs[-1]) ** 2
        ax.loglog(dxs, ref, "--", color="#888888", label="slope 2 reference")
    ax.legend()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_extrapolation(model_table, solver_table, path) -> None:
    fig, ax = _new_axes("dx", "trajectory error vs closed form (scaled)", "resolution extrapolation")
    sx = [r.x for r in solver_table.rows]
    sy = [r.median_iae for r in solver_table.rows]
    mx = [r.x for r in model_table.rows]
    my = [r.median_iae for r in model_table.rows]
    ax.loglog(sx, sy, "ko-", label="numerical solver")
    ax.loglog(mx, my, "r*", markersize=12, label="surrogate model")
    ax.legend()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_early_stop_summary(consumed_steps, remainder_errors, n_total, path) -> None:
    fig, ax = _new_axes("steps consumed before takeover", "sequences", "early-termination summary")
    if consumed_steps:
        ax.hist(consumed_steps, bins=min(30, max(5, len(consumed_steps) // 5)), color="#30a050", alpha=0.85)
    label = f"terminated {len(consumed_steps)}/{n_total}"
    if remainder_errors:
        label += f", mean remainder error {np.mean(remainder_errors):.4f}"
    ax.set_title(label)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_trace(trace, threshold, path) -> None:
    fig, ax = _new_axes("checkpoint", "window error (scaled)", "early-termination monitor")
    xs = [r.checkpoint for r in trace.records]
    ys = [r.iae for r in trace.records]
    colors = ["#30a050" if r.decision == "TERMINATE" else "#4878a8" for r in trace.records]
    ax.scatter(xs, ys, c=colors, zorder=3)
    ax.plot(xs, ys, color="#bbbbbb", zorder=2)
    if threshold > 0 and np.isfinite(threshold):
        ax.axhline(threshold, color="k", linestyle="--", label=f"threshold {threshold:g}")
        ax.legend()
    if ys and min(ys) > 0:
        ax.set_yscale("log")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
