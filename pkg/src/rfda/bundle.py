"""Covariance fibers: linear maps between tangent spaces.

A fiber element represents a linear map from the tangent space at a
source point to the tangent space at a target point.  It is stored as a
coefficient matrix with respect to orthonormal frames at the two base
points, so the Hilbert-Schmidt inner product of two elements over the
same pair of points is a plain Frobenius product once the frames are
aligned.  Transport between fibers rides on the geometry's parallel
transport applied to each side separately, which preserves the
Hilbert-Schmidt norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .geometry import Frame, Geometry

__all__ = [
    "FiberElement",
    "raw_cov",
    "bundle_transport",
    "bundle_inner",
    "gnorm",
    "adjoint",
    "holonomy_defect",
]


@dataclass(frozen=True)
class FiberElement:
    """Linear map between two tangent spaces in frame coordinates.

    ``matrix[j, k]`` sends the k-th source frame coefficient to the j-th
    target frame coefficient: a tangent ``u`` at the source with
    coefficients ``x`` maps to the tangent at the target with
    coefficients ``matrix @ x``.
    """

    source_frame: Frame
    target_frame: Frame
    matrix: np.ndarray

    @property
    def source(self) -> np.ndarray:
        return self.source_frame.base

    @property
    def target(self) -> np.ndarray:
        return self.target_frame.base

    def apply(self, geometry: Geometry, u: np.ndarray) -> np.ndarray:
        """Evaluate the map on a tangent vector at the source point."""
        x = geometry.coords(self.source_frame, u)
        return geometry.from_coords(self.target_frame, x @ self.matrix.T)


def raw_cov(geometry: Geometry, source_frame: Frame, target_frame: Frame,
            y_source: np.ndarray, y_target: np.ndarray) -> FiberElement:
    """Rank-one covariance contribution of one observation pair.

    The element is the outer product of the logarithms of the two
    observations taken at the respective base points; applied to a
    tangent ``u`` it returns ``<log_s, u> * log_t``.
    """
    a = geometry.coords(source_frame, geometry.log(source_frame.base, y_source))
    b = geometry.coords(target_frame, geometry.log(target_frame.base, y_target))
    return FiberElement(source_frame, target_frame, np.outer(b, a))


def bundle_transport(geometry: Geometry, element: FiberElement,
                     source_frame: Frame, target_frame: Frame) -> FiberElement:
    """Move a fiber element to a new pair of base points.

    The source side is pulled back along the minimizing geodesic between
    the new and old source points, the output is pushed forward between
    the old and new target points.  Both steps are isometries, so the
    Hilbert-Schmidt norm of the coefficient matrix is unchanged up to
    rounding.
    """
    moved_src = geometry.transport(source_frame.base, element.source_frame.base,
                                   source_frame.vectors)
    p_cols = geometry.coords(element.source_frame, moved_src).T
    moved_tgt = geometry.transport(element.target_frame.base, target_frame.base,
                                   element.target_frame.vectors)
    b_cols = geometry.coords(target_frame, moved_tgt).T
    return FiberElement(source_frame, target_frame,
                        b_cols @ element.matrix @ p_cols)


def _frames_close(f1: Frame, f2: Frame) -> bool:
    return f1.vectors.shape == f2.vectors.shape and np.allclose(
        f1.vectors, f2.vectors, atol=1e-12, rtol=0.0
    )


def bundle_inner(geometry: Geometry, e1: FiberElement, e2: FiberElement,
                 base_tol: float = 1e-9) -> float:
    """Hilbert-Schmidt inner product of two elements over the same fiber.

    The base points must agree within ``base_tol``; differing frames are
    aligned by an orthogonal change of basis before the Frobenius
    product is taken, so the value does not depend on the frames.
    """
    ds = geometry.dist(e1.source, e2.source)
    dt = geometry.dist(e1.target, e2.target)
    if ds > base_tol or dt > base_tol:
        raise ValidationError(
            f"fiber elements live over different base points "
            f"(source offset {float(ds):.3e}, target offset {float(dt):.3e})"
        )
    if _frames_close(e1.source_frame, e2.source_frame) and _frames_close(
        e1.target_frame, e2.target_frame
    ):
        a2 = e2.matrix
    else:
        m = geometry.coords(e2.source_frame, e1.source_frame.vectors)
        q = geometry.coords(e1.target_frame, e2.target_frame.vectors)
        a2 = q.T @ e2.matrix @ m.T
    return float(np.sum(e1.matrix * a2))


def gnorm(element: FiberElement) -> float:
    """Hilbert-Schmidt norm of a fiber element."""
    return float(np.linalg.norm(element.matrix))


def adjoint(element: FiberElement) -> FiberElement:
    """Adjoint map, exchanging the source and target fibers."""
    return FiberElement(element.target_frame, element.source_frame, element.matrix.T)


def holonomy_defect(geometry: Geometry, p1, p2, q1, q2, y) -> np.ndarray:
    """Route discrepancy of parallel transport around a geodesic
    quadrilateral.

    The tangent vector ``log(q2, y)`` is carried into the tangent space
    at ``p1`` along two routes, ``q2 -> q1 -> p1`` and
    ``q2 -> p2 -> p1``, and the norm of the difference is returned.  On
    flat geometries transport is path independent and the defect is
    exactly zero; on curved ones it is of linear order in
    ``dist(p1, q1) + dist(p2, q2)`` as the quadrilateral degenerates.
    Broadcasts over leading batch dimensions.
    """
    v = geometry.log(q2, y)
    via_q1 = geometry.transport(q1, p1, geometry.transport(q2, q1, v))
    via_p2 = geometry.transport(p2, p1, geometry.transport(q2, p2, v))
    return geometry.norm(p1, via_q1 - via_p2)
