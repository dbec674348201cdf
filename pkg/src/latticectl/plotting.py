"""SVG line and scatter plots for scenario artifacts."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "latticectl"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_svg(path, series, xlabel="", ylabel="", title="", scatter=False, logx=False) -> None:
    """Plot ``series``, a list of ``(label, x, y)``, to an SVG file; non-finite points are skipped."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if scatter:
            ax.scatter(x[ok], y[ok], label=str(label), s=14)
        else:
            ax.plot(x[ok], y[ok], label=str(label), lw=1.5)
    if logx:
        ax.set_xscale("log")
    ax.set(xlabel=xlabel, ylabel=ylabel, title=title)
    if series:
        ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
