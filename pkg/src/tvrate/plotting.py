"""SVG figures: kernels, oracle overlays, log-log MSE curves and bandwidth sweeps.

Everything renders through the Agg backend to self-contained SVG.  The output
is made byte-stable by fixing the SVG hash salt, dropping the date stamp and
keeping text as text.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "svg.hashsalt": "tvrate",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.0),
    "font.size": 10,
    "axes.spines.right": False,
    "axes.spines.top": False,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
}
_COLORS = ["#3969b1", "#cc2529", "#3e9651", "#000000"]


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_kernel(kernel, delta: float, path, truth=None, oracle=None, points: int = 1001) -> None:
    """``H_{k,δ}`` on ``[-δ, δ]``; with ``truth``/``oracle`` given, a second panel overlays them."""
    with plt.rc_context(_STYLE):
        panels = 2 if truth is not None else 1
        fig, axes = plt.subplots(1, panels, figsize=(6.0 * panels, 4.0), squeeze=False)
        ax = axes[0, 0]
        t = np.linspace(-delta, delta, points)
        ax.plot(t, kernel(t / delta) / delta, color=_COLORS[0])
        ax.axhline(0.0, color="0.6", linewidth=0.5)
        ax.set_xlabel("t")
        ax.set_ylabel(r"$H_{k,\delta}(t)$")
        ax.set_title(f"order-{kernel.order} kernel, bandwidth {delta:g}")
        if truth is not None:
            ax = axes[0, 1]
            lo, hi = truth.domain
            x = np.linspace(lo, hi, points)
            ax.plot(x, truth(x), color=_COLORS[3], label="truth")
            if oracle is not None:
                ax.plot(x, oracle(x), color=_COLORS[1], label="smoothed")
            for b in truth.breakpoints:
                ax.axvspan(b - delta, b + delta, color="0.9", zorder=0)
            ax.set_xlabel("x")
            ax.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_rates(results, estimate, path, title: str = "", reference_slopes=None) -> None:
    """Mean MSE against n on log-log axes with replicate scatter and the fitted line."""
    ns = np.array([r.n for r in results], dtype=float)
    mse = np.array([r.mse for r in results], dtype=float)
    grid = np.unique(ns)
    means = np.array([mse[ns == n].mean() for n in grid])
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.scatter(ns, mse, s=4, color="0.7", label="replicates", zorder=1)
        ax.plot(grid, means, "o", color=_COLORS[0], label="mean", zorder=2)
        fit = np.exp(estimate.intercept) * grid**estimate.slope
        ax.plot(grid, fit, color=_COLORS[1], zorder=3,
                label=f"slope {estimate.slope:.3f} (SE {estimate.slope_se:.3f})")
        for i, (name, s) in enumerate((reference_slopes or {}).items()):
            ref = means[0] * (grid / grid[0]) ** s
            ax.plot(grid, ref, linestyle="--", linewidth=0.8, color=_COLORS[2 + i % 2], label=f"{name} {s:.3f}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel("MSE")
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_sweep(sweep: dict, path, title: str = "") -> None:
    """Approximation error and penalty (with its bound) against bandwidth."""
    rows = sweep["rows"]
    d = np.array([r["delta"] for r in rows])
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(10.0, 4.0))
        a1.loglog(d, [r["approx_error_sq"] for r in rows], "o-", color=_COLORS[0])
        a1.set_xlabel(r"$\delta$")
        a1.set_ylabel("approximation error")
        a1.set_title(f"slope {sweep['approx_slope']:.3f} (target {sweep['approx_target']})")
        a2.loglog(d, [r["penalty"] for r in rows], "o-", color=_COLORS[0], label="measured")
        a2.loglog(d, [r["penalty_bound"] for r in rows], "--", color=_COLORS[1], label="bound")
        a2.set_xlabel(r"$\delta$")
        a2.set_ylabel("penalty")
        a2.set_title(f"slope {sweep['penalty_slope']:.3f} (target {sweep['penalty_target']})")
        a2.legend()
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)
