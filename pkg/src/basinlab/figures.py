"""Figure rendering for the run pipelines. Everything goes through the
Agg backend and straight to a file; nothing here opens a window."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

_BASIN_CMAP = ListedColormap(["#2b5fa3", "#b8b8b8", "#d4731c"])


def save_basin_grid(labels, interval, path):
    """Label matrix as a three-color image, lower fibre endpoint at the bottom."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    e_lo, e_hi = interval
    ax.imshow(labels, cmap=_BASIN_CMAP, vmin=-1, vmax=1, origin="lower",
              aspect="auto", extent=[0.0, 1.0, e_lo, e_hi],
              interpolation="nearest")
    ax.set_xlabel("omega")
    ax.set_ylabel("x")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_graph_profile(omegas, phi, path):
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    ax.plot(omegas, phi, ",", color="#333333", markersize=0.8)
    ax.set_xlabel("omega")
    ax.set_ylabel("phi_c")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_loglog(eps, series, fits, path, ylabel="fraction"):
    """Scatter of (eps, value) per named series with the fitted power laws.

    series: dict name -> value array aligned with eps (zeros are skipped);
    fits: dict name -> ScalingFit or None.
    """
    fig, ax = plt.subplots(figsize=(5.4, 4.2))
    for name, vals in series.items():
        vals = np.asarray(vals, dtype=float)
        keep = vals > 0
        ax.loglog(np.asarray(eps)[keep], vals[keep], "o", label=name,
                  markersize=4)
        fit = fits.get(name)
        if fit is not None:
            lo, hi = fit.eps_range
            ee = np.geomspace(lo, hi, 32)
            ax.loglog(ee, np.exp(fit.intercept) * ee ** fit.slope, "-",
                      linewidth=1,
                      label="%s slope %.3f" % (name, fit.slope))
    ax.set_xlabel("eps")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_curves(panels, path):
    """Row of line plots; panels is a list of dicts with x, y, xlabel,
    ylabel and optional marks (vertical lines)."""
    fig, axes = plt.subplots(1, len(panels), figsize=(4.6 * len(panels), 3.6))
    if len(panels) == 1:
        axes = [axes]
    for ax, p in zip(axes, panels):
        ax.plot(p["x"], p["y"], "-", color="#2b5fa3")
        ax.axhline(0.0, color="#999999", linewidth=0.6)
        for m in p.get("marks", ()):
            ax.axvline(m, color="#d4731c", linewidth=0.8, linestyle="--")
        ax.set_xlabel(p["xlabel"])
        ax.set_ylabel(p["ylabel"])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
