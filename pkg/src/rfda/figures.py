"""Figure rendering for the report command.

Everything renders through the Agg backend straight into files; no
window is ever opened.  The delimited tables stay the primary output,
these are companions for quick visual inspection.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["gnorm_heatmap", "mean_components", "scree", "metrics_series",
           "rate_trend"]


def gnorm_heatmap(surface, path) -> None:
    """Heatmap of the fitted covariance norm over the time square."""
    norms = surface.gnorm_grid()
    lo, hi = float(surface.grid[0]), float(surface.grid[-1])
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    image = ax.imshow(norms.T, origin="lower", extent=(lo, hi, lo, hi),
                      aspect="equal", cmap="viridis")
    fig.colorbar(image, ax=ax, label="norm")
    ax.set_xlabel("s")
    ax.set_ylabel("t")
    ax.set_title("Covariance norm")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def mean_components(mean, path) -> None:
    """Ambient coordinates of the fitted mean curve against time."""
    flat = mean.points.reshape(len(mean.grid), -1)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for j in range(flat.shape[1]):
        ax.plot(mean.grid, flat[:, j], label=f"x{j + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("coordinate")
    ax.set_title("Mean curve")
    ax.legend(loc="best", fontsize="small")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def scree(eigsys, path) -> None:
    """Eigenvalues by component index."""
    k = np.arange(1, eigsys.k + 1)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(k, eigsys.eigenvalues, "o-")
    ax.set_xticks(k)
    ax.set_xlabel("component")
    ax.set_ylabel("eigenvalue")
    ax.set_title("Spectrum")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def metrics_series(report, path) -> None:
    """Per-replicate error metrics of one experiment."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(report.rep_ids, report.rmuie, "o", label="uniform")
    ax.plot(report.rep_ids, report.rrmise, "s", label="integrated")
    ax.axhline(report.rrmise_mean, color="gray", lw=0.8)
    ax.set_xlabel("replicate")
    ax.set_ylabel("relative error (%)")
    ax.set_title(f"{report.design} n={report.n} m={report.m:g}")
    ax.legend(loc="best", fontsize="small")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def rate_trend(rows, path) -> None:
    """Mean integrated error against n, one panel per design.

    ``rows`` are mappings with design, n, m and rrmise_mean entries;
    lines connect equal observation rates.
    """
    designs = sorted({r["design"] for r in rows})
    fig, axes = plt.subplots(1, len(designs),
                             figsize=(3.6 * len(designs), 3.4), squeeze=False)
    for ax, design in zip(axes[0], designs):
        mine = [r for r in rows if r["design"] == design]
        for m in sorted({r["m"] for r in mine}):
            line = sorted((r for r in mine if r["m"] == m),
                          key=lambda r: r["n"])
            ax.loglog([r["n"] for r in line],
                      [r["rrmise_mean"] for r in line], "o-", label=f"m={m:g}")
        ax.set_xlabel("n")
        ax.set_title(design)
        ax.legend(fontsize="small")
    axes[0][0].set_ylabel("mean rRMISE (%)")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
