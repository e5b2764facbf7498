"""Convergence figures for benchmark output.

Figures are drawn on a bare :class:`matplotlib.figure.Figure` so nothing
touches global pyplot state; this is safe inside worker processes and on
headless machines.
"""

import numpy as np
from matplotlib.figure import Figure


def median_curves(traces):
    """Per-checkpoint medians over seeds.

    ``traces`` is a list of :class:`~spidersqn.solvers.RunTrace` for one
    algorithm. Returns ``(paper_sfo, f, grad_norm)`` arrays truncated to the
    shortest trace.
    """
    length = min(len(t.checkpoints) for t in traces)
    sfo = np.array([[c.paper_sfo for c in t.checkpoints[:length]] for t in traces], dtype=float)
    f = np.array([[c.f for c in t.checkpoints[:length]] for t in traces])
    g = np.array([[c.grad_norm for c in t.checkpoints[:length]] for t in traces])
    return np.median(sfo, axis=0), np.median(f, axis=0), np.median(g, axis=0)


def convergence_figure(curves, title="", f_ref=None):
    """Two panels against ``paper_sfo``: ``f - f_ref`` and ``||grad f||``, log scale.

    ``curves`` maps algorithm name to ``(paper_sfo, f, grad_norm)``. The
    reference value defaults to the smallest ``f`` seen in any curve, with a
    small offset so the best curve stays on the log axis.
    """
    if f_ref is None:
        best = min(float(np.min(f)) for _, f, _ in curves.values())
        f_ref = best - 1e-3 * max(abs(best), 1.0)
    fig = Figure(figsize=(10, 4), constrained_layout=True)
    ax_f, ax_g = fig.subplots(1, 2)
    for name, (sfo, f, g) in curves.items():
        ax_f.plot(sfo, f - f_ref, label=name)
        ax_g.plot(sfo, g, label=name)
    for ax, label in ((ax_f, "f(x) - f_ref"), (ax_g, "||grad f(x)||")):
        ax.set_yscale("log")
        ax.set_xlabel("SFO calls")
        ax.set_ylabel(label)
        ax.grid(True, which="both", alpha=0.3)
    ax_f.legend(fontsize="small")
    if title:
        fig.suptitle(title)
    return fig


def save_convergence_plot(traces_by_algo, path, title=""):
    """Median curves for each algorithm, written to ``path`` (format from suffix)."""
    curves = {name: median_curves(ts) for name, ts in traces_by_algo.items() if ts}
    if not curves:
        return None
    fig = convergence_figure(curves, title)
    fig.savefig(path, dpi=120)
    return path
