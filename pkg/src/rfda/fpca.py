"""Principal components of the smoothed covariance field.

The covariance surface induces an integral operator on square-integrable
tangent fields along the mean curve.  Discretizing the integral with
trapezoid quadrature turns the eigenproblem into a symmetric matrix
eigendecomposition whose eigenvectors, rescaled by the quadrature
weights, are the component fields in frame-field coordinates.  Subject
scores are predicted from sparse noisy observations by the conditional
expectation formula: a ridge-stabilized linear solve against the fitted
covariance blocks at the subject's own observation times.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import SparseDataset
from .exceptions import SingularFitError, ValidationError
from .mean import MeanCurve
from .smoother import NOISE_FLOOR, CovSurface

__all__ = [
    "DiscretizedOperator",
    "EigenSystem",
    "Scores",
    "blup_scores",
    "discretize_operator",
    "eigenpairs",
]

ASYMMETRY_TOL = 1e-8


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Quadrature weights reproducing the trapezoid rule on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    w = np.zeros(len(grid))
    half = 0.5 * np.diff(grid)
    w[:-1] += half
    w[1:] += half
    return w


@dataclass(frozen=True)
class DiscretizedOperator:
    """Covariance operator on the grid, as a block matrix.

    ``matrix`` has shape ``(G*d, G*d)``; block ``(g, h)`` carries the
    covariance coefficients between the fibers at grid times ``g`` and
    ``h``, so the matrix is symmetric.  ``weights`` are the trapezoid
    quadrature weights that stand in for the integral.
    """

    matrix: np.ndarray
    weights: np.ndarray
    grid: np.ndarray
    dim: int


def discretize_operator(surface: CovSurface) -> DiscretizedOperator:
    """Turn a covariance surface into a quadrature operator matrix.

    Raises
    ------
    ValidationError
        If the surface elements are asymmetric beyond ``1e-8``, which
        indicates a corrupted or unsymmetrized input.
    """
    elements = surface.elements
    mirror = elements.transpose(1, 0, 3, 2)
    gap = float(np.max(np.abs(elements - mirror))) if elements.size else 0.0
    if gap > ASYMMETRY_TOL:
        raise ValidationError(
            f"covariance elements asymmetric by {gap:.3e}; expected a "
            "symmetrized surface"
        )
    g, d = surface.size, surface.geometry.dim
    matrix = np.swapaxes(elements, 0, 1).transpose(0, 2, 1, 3).reshape(g * d, g * d)
    return DiscretizedOperator(matrix=matrix,
                               weights=trapezoid_weights(surface.grid),
                               grid=surface.grid.copy(), dim=d)


@dataclass
class EigenSystem:
    """Leading eigenpairs of the discretized covariance operator.

    Attributes
    ----------
    grid : ndarray
    weights : ndarray
        Trapezoid quadrature weights; the fields are orthonormal in the
        induced discrete inner product.
    eigenvalues : ndarray
        Top eigenvalues, descending, clamped at zero.
    raw_eigenvalues : ndarray
        Same eigenvalues before clamping; small negatives witness the
        indefiniteness of the fitted surface.
    fields : ndarray, shape (K, G, d)
        Component fields in frame-field coordinates, sign-fixed so the
        largest-magnitude coefficient of each field is positive.
    """

    grid: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    raw_eigenvalues: np.ndarray
    fields: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.raw_eigenvalues = np.asarray(self.raw_eigenvalues, dtype=float)
        self.fields = np.asarray(self.fields, dtype=float)
        if self.fields.shape[:2] != (len(self.eigenvalues), len(self.grid)):
            raise ValidationError(
                f"fields have shape {self.fields.shape}, expected "
                f"({len(self.eigenvalues)}, {len(self.grid)}, d)"
            )

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def field_values(self, ts) -> np.ndarray:
        """Component coefficients at arbitrary times, shape (K, T, d).

        Linear interpolation of the grid coefficients; because the
        frame field is parallel within each grid segment this agrees
        with transporting the endpoint vectors to the evaluation point
        and interpolating there.
        """
        ts = np.asarray(ts, dtype=float).ravel()
        lo, hi = self.grid[0], self.grid[-1]
        if ts.size and (ts.min() < lo or ts.max() > hi):
            raise ValidationError(
                f"evaluation times leave the grid range [{lo:.6g}, {hi:.6g}]"
            )
        gi = np.clip(np.searchsorted(self.grid, ts, side="right") - 1,
                     0, len(self.grid) - 2)
        a = (ts - self.grid[gi]) / (self.grid[gi + 1] - self.grid[gi])
        a = a[None, :, None]
        return (1 - a) * self.fields[:, gi] + a * self.fields[:, gi + 1]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "weights": self.weights.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "raw_eigenvalues": self.raw_eigenvalues.tolist(),
            "fields": self.fields.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EigenSystem":
        return cls(grid=np.asarray(data["grid"], dtype=float),
                   weights=np.asarray(data["weights"], dtype=float),
                   eigenvalues=np.asarray(data["eigenvalues"], dtype=float),
                   raw_eigenvalues=np.asarray(data["raw_eigenvalues"],
                                              dtype=float),
                   fields=np.asarray(data["fields"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EigenSystem":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def eigenpairs(op: DiscretizedOperator, k: int) -> EigenSystem:
    """Top ``k`` eigenpairs of the quadrature-scaled operator.

    The eigenproblem of the integral operator under trapezoid
    quadrature is symmetrized by conjugating with the square-root
    weights; eigenvectors are rescaled back so the returned fields are
    orthonormal under the quadrature inner product.
    """
    g, d = len(op.grid), op.dim
    if not 1 <= k <= g * d:
        raise ValidationError(f"need 1 <= k <= {g * d}, got {k}")
    sw = np.sqrt(np.repeat(op.weights, d))
    scaled = op.matrix * np.outer(sw, sw)
    vals, vecs = np.linalg.eigh(scaled)
    order = np.argsort(vals)[::-1][:k]
    raw = vals[order]
    fields = (vecs[:, order] / sw[:, None]).T.reshape(k, g, d)
    flat = fields.reshape(k, -1)
    lead = flat[np.arange(k), np.argmax(np.abs(flat), axis=1)]
    fields = np.where((lead < 0)[:, None, None], -fields, fields)
    return EigenSystem(grid=op.grid.copy(), weights=op.weights.copy(),
                       eigenvalues=np.maximum(raw, 0.0), raw_eigenvalues=raw,
                       fields=fields)


@dataclass
class Scores:
    """Predicted subject scores with conditioning diagnostics.

    ``matrix[i, k]`` is subject ``i``'s score on component ``k``;
    ``conditions[i]`` is the spectral condition number of the subject's
    ridge-stabilized covariance system; ``repairs[i]`` is the Frobenius
    norm of the negative eigenvalue part removed from that system
    before the ridge (the smoothed surface is not guaranteed positive
    semidefinite, so the removal is applied and reported, never
    silent).
    """

    subject_ids: tuple
    matrix: np.ndarray
    conditions: np.ndarray
    repairs: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.conditions = np.asarray(self.conditions, dtype=float)
        self.repairs = np.asarray(self.repairs, dtype=float)
        if len(self.subject_ids) != len(self.matrix):
            raise ValidationError("one score row per subject required")

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    def to_dict(self) -> dict:
        return {
            "subject_ids": list(self.subject_ids),
            "matrix": self.matrix.tolist(),
            "conditions": self.conditions.tolist(),
            "repairs": self.repairs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scores":
        return cls(subject_ids=tuple(data["subject_ids"]),
                   matrix=np.asarray(data["matrix"], dtype=float),
                   conditions=np.asarray(data["conditions"], dtype=float),
                   repairs=np.asarray(data["repairs"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Scores":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def export_csv(self, path) -> None:
        """Write the subject-by-component score table."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject"]
                            + [f"score_{j + 1}" for j in range(self.k)])
            for sid, row in zip(self.subject_ids, self.matrix):
                writer.writerow([sid] + [repr(float(v)) for v in row])


def blup_scores(dataset: SparseDataset, mean: MeanCurve, surface: CovSurface,
                eigsys: EigenSystem, sigma2, k: int = None) -> Scores:
    """Predict subject scores by conditional expectation.

    For each subject the residual coefficients at its observation times
    are stacked into one vector and regressed against each component
    field through the subject's fitted covariance matrix (surface
    blocks at all pairs of its times plus the noise ridge).  Because
    local-linear smoothing does not constrain the surface to be
    positive semidefinite, each subject's block matrix first has its
    negative eigenvalues clamped at zero; the removed mass is reported
    in ``Scores.repairs``.  The result does not depend on the frame
    choices: rotating the frames rotates the residuals, the fields, and
    the covariance blocks consistently, the clamp commutes with
    orthogonal conjugation, and the quadratic form is invariant.

    Parameters
    ----------
    sigma2 : NoiseVariance or float
        Ridge added to the diagonal; floored at ``1e-10``.
    k : int, optional
        Number of components to score, by default all of ``eigsys``.

    Raises
    ------
    SingularFitError
        If a subject's system cannot be decomposed or is still not
        positive definite after clamp and ridge, reporting the subject
        and its condition number.
    """
    if k is None:
        k = eigsys.k
    if not 1 <= k <= eigsys.k:
        raise ValidationError(
            f"need 1 <= k <= {eigsys.k} available components, got {k}"
        )
    sig = float(getattr(sigma2, "sigma_sq", sigma2))
    sig = max(sig, NOISE_FLOOR)
    geometry = dataset.geometry
    d = geometry.dim
    subj, times, points = dataset.flat()
    ev_pts, ev_vecs = mean.evaluate(times)
    z_all = geometry.frame_coords(ev_pts, ev_vecs, geometry.log(ev_pts, points))
    g_all = eigsys.field_values(times)[:k]
    lam = eigsys.eigenvalues[:k]
    sizes = dataset.sizes()
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    matrix = np.empty((dataset.n, k))
    conditions = np.empty(dataset.n)
    repairs = np.empty(dataset.n)
    for i, sub in enumerate(dataset.subjects):
        sl = slice(starts[i], starts[i] + sizes[i])
        ts = times[sl]
        z = z_all[sl].ravel()
        fields = g_all[:, sl, :].reshape(k, -1)
        blocks = surface.eval_coeffs(ts[None, :], ts[:, None])
        sigma = blocks.transpose(0, 2, 1, 3).reshape(len(ts) * d, len(ts) * d)
        sigma = 0.5 * (sigma + sigma.T)
        if not np.all(np.isfinite(sigma)):
            raise SingularFitError(
                f"subject {sub.id}: covariance system contains non-finite "
                "entries"
            )
        try:
            vals, vecs = np.linalg.eigh(sigma)
        except LinAlgError as exc:
            raise SingularFitError(
                f"subject {sub.id}: covariance system decomposition "
                f"failed: {exc}"
            ) from exc
        neg = np.minimum(vals, 0.0)
        repairs[i] = float(np.sqrt(np.sum(neg * neg)))
        if vals[0] < 0.0:
            sigma = (vecs * np.maximum(vals, 0.0)) @ vecs.T
            sigma = 0.5 * (sigma + sigma.T)
        sigma[np.diag_indices_from(sigma)] += sig
        conditions[i] = (max(vals[-1], 0.0) + sig) / (max(vals[0], 0.0) + sig)
        try:
            factor = cho_factor(sigma, lower=True)
        except LinAlgError as exc:
            raise SingularFitError(
                f"subject {sub.id}: covariance system not positive definite "
                f"after the {sig:.3g} ridge; condition number "
                f"{conditions[i]:.3e}"
            ) from exc
        matrix[i] = lam * (fields @ cho_solve(factor, z))
    return Scores(subject_ids=tuple(s.id for s in dataset.subjects),
                  matrix=matrix, conditions=conditions, repairs=repairs)
