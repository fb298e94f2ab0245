"""Relative error metrics for fitted covariance surfaces.

Both metrics move the fitted surface cell by cell from the fibers over
the fitted mean to the fibers over the true mean, measure the
Hilbert-Schmidt distance to the true covariance there, and normalize by
the size of the truth.  One takes the supremum over grid cells, the
other a trapezoid double integral; both are approximated on the
surface's own grid, so refine the grid when the sup matters.

The truth object only needs ``mean_point``, ``mean_frame`` and
``cov_grid``, which keeps the metrics usable with hand-built references
in tests.
"""

import numpy as np

from .exceptions import ValidationError
from .fpca import trapezoid_weights
from .geometry import Frame
from .smoother import CovSurface

__all__ = ["surface_error_grid", "rmuie", "rrmise"]


def _frame_change(geometry, old: Frame, new: Frame) -> np.ndarray:
    """Coefficient matrix of the parallel transport from ``old`` to
    ``new``: column j holds the new-frame coordinates of the moved j-th
    old frame vector."""
    moved = geometry.transport(old.base, new.base, old.vectors)
    return geometry.coords(new, moved).T


def surface_error_grid(surface: CovSurface, truth) -> tuple:
    """Squared cellwise errors against the truth, on the surface grid.

    Returns ``(err2, truth2)``: the squared Hilbert-Schmidt norm of the
    difference between the transported fitted element and the true
    covariance at every grid cell, and the squared norm of the truth
    itself.  Transport rides the minimizing geodesics between the fitted
    and true mean points, so guard violations (antipodal points) raise.
    """
    geometry = surface.geometry
    grid = surface.grid
    g_len, d = len(grid), geometry.dim
    truth_frames = [truth.mean_frame(float(t)) for t in grid]
    target_side = np.empty((g_len, d, d))
    source_side = np.empty((g_len, d, d))
    for g in range(g_len):
        target_side[g] = _frame_change(geometry, surface.frames[g],
                                       truth_frames[g])
        source_side[g] = _frame_change(geometry, truth_frames[g],
                                       surface.frames[g])
    moved = np.einsum("hij,ghjk,gkl->ghil", target_side, surface.elements,
                      source_side)
    truth_mats = truth.cov_grid(grid)
    err2 = np.sum((moved - truth_mats) ** 2, axis=(2, 3))
    truth2 = np.sum(truth_mats ** 2, axis=(2, 3))
    return err2, truth2


def _check(surface, truth, mean) -> None:
    if mean is not None and mean.geometry != surface.geometry:
        raise ValidationError(
            f"mean geometry {mean.geometry.descriptor()} does not match the "
            f"surface geometry {surface.geometry.descriptor()}")


def rmuie(surface: CovSurface, truth, mean=None) -> float:
    """Relative uniform error of a covariance surface.

    The supremum over grid cells of the Hilbert-Schmidt distance between
    the transported fitted element and the truth, divided by the
    supremum of the truth's norm.  Returns the raw ratio; multiply by
    100 for a percentage.

    Parameters
    ----------
    surface : CovSurface
    truth : object
        Provides ``mean_frame`` and ``cov_grid`` (a simulation truth or
        an equivalent reference).
    mean : MeanCurve, optional
        Accepted for interface symmetry; the surface's own mean anchors
        the fibers.  A mismatched geometry raises.
    """
    _check(surface, truth, mean)
    err2, truth2 = surface_error_grid(surface, truth)
    top = float(truth2.max())
    if not top > 0:
        raise ValidationError("truth covariance vanishes on the grid; the "
                              "relative error is undefined")
    return float(np.sqrt(err2.max() / top))


def rrmise(surface: CovSurface, truth, mean=None) -> float:
    """Relative integrated error of a covariance surface.

    Square root of the ratio of trapezoid double integrals of the
    squared cellwise errors and of the squared truth norm, on the
    surface grid.  Raw ratio; multiply by 100 for a percentage.
    """
    _check(surface, truth, mean)
    err2, truth2 = surface_error_grid(surface, truth)
    w = trapezoid_weights(surface.grid)
    denom = float(w @ truth2 @ w)
    if not denom > 0:
        raise ValidationError("truth covariance vanishes on the grid; the "
                              "relative error is undefined")
    return float(np.sqrt((w @ err2 @ w) / denom))
