"""Frame-equivariant local-linear smoothing of the covariance field.

Raw covariances of within-subject observation pairs, parallel
transported into a common fiber, are smoothed by a local-linear fit in
the two time variables.  The intercept has a closed form as a ratio of
moment sums, solved entrywise in the working frames; because the
normal equations decouple per entry in any fixed orthonormal frame and
transport is an isometry, the result transforms by frame conjugation
and all derived error metrics are frame independent.

Two routes compute the same numbers: :func:`moment_sums` with
:func:`fit_cov_point` loop over pairs at a single time pair, while
:class:`SmootherWorkspace` (used by :func:`fit_cov_surface`) evaluates
every grid cell at once from precomputed transported coordinates.  The
workspace precompute does not depend on the bandwidth, so candidate
bandwidths can be refitted cheaply during cross-validation.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .bundle import FiberElement, bundle_transport, raw_cov
from .data import SparseDataset
from .exceptions import SingularFitError, ValidationError, WindowError
from .geometry import Frame
from .mean import MeanCurve, eval_mean, kernel_function

__all__ = [
    "CovSurface",
    "MomentSums",
    "NoiseVariance",
    "SmootherWorkspace",
    "fit_cov_point",
    "fit_cov_surface",
    "moment_sums",
    "noise_variance",
]

DENOM_GUARD = 1e-12
MIN_PAIRS = 3
NOISE_FLOOR = 1e-10


@dataclass(frozen=True)
class MomentSums:
    """Kernel-weighted moment sums of one covariance cell.

    Scalar sums ``s_ab`` carry monomials ``u^a v^b`` in the normalized
    offsets ``u = (T_ij - s)/h`` and ``v = (T_ik - t)/h``; the operator
    sums ``r00, r10, r01`` accumulate the transported raw covariance
    elements with the same weights and all live in the fiber at the
    evaluated mean points of ``(s, t)``.  ``pairs`` counts the
    within-subject ordered pairs with positive kernel weight.
    """

    s: float
    t: float
    bandwidth: float
    s00: float
    s10: float
    s01: float
    s20: float
    s02: float
    s11: float
    r00: FiberElement
    r10: FiberElement
    r01: FiberElement
    pairs: int


def moment_sums(dataset: SparseDataset, mean: MeanCurve, s: float, t: float,
                h_c: float, kernel: str = "epanechnikov",
                min_pairs: int = MIN_PAIRS) -> MomentSums:
    """Accumulate the local-linear moment sums at one time pair.

    Loops over within-subject ordered pairs ``j != k`` whose times fall
    inside the kernel windows around ``s`` and ``t``.  Each raw
    covariance element is bundle-transported into the fiber at the
    evaluated mean points of ``(s, t)`` before accumulation.  This is
    the reference route; :class:`SmootherWorkspace` computes the same
    sums vectorized.

    Raises
    ------
    WindowError
        If fewer than ``min_pairs`` pairs (default 3, the number needed
        to identify the three local-linear coefficients) have positive
        weight.
    """
    if not h_c > 0:
        raise ValidationError(f"bandwidth must be positive, got {h_c}")
    geometry = dataset.geometry
    kern = kernel_function(kernel)
    nu = dataset.cov_weights()
    _, frame_s = eval_mean(mean, s)
    _, frame_t = eval_mean(mean, t)
    d = geometry.dim
    sums = np.zeros(6)
    r00 = np.zeros((d, d))
    r10 = np.zeros((d, d))
    r01 = np.zeros((d, d))
    pairs = 0
    for i, sub in enumerate(dataset.subjects):
        if sub.size < 2 or nu[i] == 0.0:
            continue
        ev_pts, ev_vecs = mean.evaluate(sub.times)
        ku = kern((sub.times - s) / h_c) / h_c
        kv = kern((sub.times - t) / h_c) / h_c
        for j in np.nonzero(ku > 0)[0]:
            frame_j = Frame(ev_pts[j], ev_vecs[j])
            u = (sub.times[j] - s) / h_c
            for k in np.nonzero(kv > 0)[0]:
                if k == j:
                    continue
                v = (sub.times[k] - t) / h_c
                frame_k = Frame(ev_pts[k], ev_vecs[k])
                element = raw_cov(geometry, frame_j, frame_k,
                                  sub.points[j], sub.points[k])
                moved = bundle_transport(geometry, element, frame_s, frame_t)
                w = nu[i] * ku[j] * kv[k]
                sums += w * np.array([1.0, u, v, u * u, v * v, u * v])
                r00 += w * moved.matrix
                r10 += (w * u) * moved.matrix
                r01 += (w * v) * moved.matrix
                pairs += 1
    if pairs < min_pairs:
        raise WindowError(
            f"only {pairs} within-subject pairs have weight near "
            f"(s, t) = ({s:.6g}, {t:.6g}); need at least {min_pairs}"
        )
    return MomentSums(
        s=float(s), t=float(t), bandwidth=float(h_c),
        s00=sums[0], s10=sums[1], s01=sums[2],
        s20=sums[3], s02=sums[4], s11=sums[5],
        r00=FiberElement(frame_s, frame_t, r00),
        r10=FiberElement(frame_s, frame_t, r10),
        r01=FiberElement(frame_s, frame_t, r01),
        pairs=pairs,
    )


def _det_terms(s00, s10, s01, s20, s02, s11):
    d1 = s20 * s02 - s11 * s11
    d2 = s10 * s02 - s01 * s11
    d3 = s10 * s11 - s01 * s20
    return d1, d2, d3, d1 * s00 - d2 * s10 + d3 * s01


def fit_cov_point(sums: MomentSums) -> FiberElement:
    """Local-linear intercept of one covariance cell.

    Solves the operator-valued least squares over the design
    ``[1, u, v]`` by the closed-form determinant ratio, applied
    entrywise to the accumulated coefficient matrices.

    Raises
    ------
    SingularFitError
        If the design determinant falls below ``1e-12`` at the natural
        cubic scale ``s00**3``, reporting the cell and its pair count.
    """
    d1, d2, d3, denom = _det_terms(sums.s00, sums.s10, sums.s01,
                                   sums.s20, sums.s02, sums.s11)
    if not (sums.s00 > 0 and denom > DENOM_GUARD * sums.s00**3):
        raise SingularFitError(
            f"near-singular local design at (s, t) = "
            f"({sums.s:.6g}, {sums.t:.6g}) with {sums.pairs} pairs: "
            f"determinant {denom:.3e}"
        )
    matrix = (d1 * sums.r00.matrix - d2 * sums.r10.matrix
              + d3 * sums.r01.matrix) / denom
    return FiberElement(sums.r00.source_frame, sums.r00.target_frame, matrix)


@dataclass
class CovSurface:
    """Smoothed covariance field on a grid, in the mean curve's frames.

    ``elements[g, h]`` holds the coefficient matrix of the fiber
    element with source fiber at grid time ``g`` and target fiber at
    grid time ``h``; rows index target coefficients.  After
    symmetrization the array mirrors exactly: ``elements[h, g]`` is the
    transpose of ``elements[g, h]``, which is the adjoint relation in
    the shared frame field.

    Attributes
    ----------
    mean : MeanCurve
        Curve whose frame field anchors every fiber.
    grid : ndarray
        Cell times, by default the mean curve's grid.
    frames : tuple of Frame
        Frame at each grid time, shared by both axes.
    elements : ndarray, shape (G, G, d, d)
    bandwidth : float
    kernel : str
    pair_counts : ndarray of int, shape (G, G)
    denominators : ndarray, shape (G, G)
        Design determinants, for diagnosing near-singular cells.
    failed : ndarray of bool, shape (G, G)
        Cells that tripped a guard and were imputed from the nearest
        healthy cell.
    """

    mean: MeanCurve
    grid: np.ndarray
    frames: tuple
    elements: np.ndarray
    bandwidth: float
    kernel: str
    pair_counts: np.ndarray
    denominators: np.ndarray
    failed: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        g = len(self.grid)
        d = self.mean.geometry.dim
        if self.elements.shape != (g, g, d, d):
            raise ValidationError(
                f"elements have shape {self.elements.shape}, expected {(g, g, d, d)}"
            )

    @property
    def size(self) -> int:
        return len(self.grid)

    @property
    def geometry(self):
        return self.mean.geometry

    def fiber(self, g_source: int, g_target: int) -> FiberElement:
        """Cell ``(g_source, g_target)`` as a fiber element."""
        return FiberElement(self.frames[g_source], self.frames[g_target],
                            self.elements[g_source, g_target])

    def eval_coeffs(self, ss, tt) -> np.ndarray:
        """Bilinear surface evaluation in frame-field coordinates.

        The frame field is parallel along each grid geodesic, so cell
        coefficient matrices of neighboring cells are directly
        comparable and bilinear interpolation of coefficients equals
        transporting the four corner elements to the evaluation fiber
        and averaging there.  Returns matrices with shape
        ``broadcast(ss, tt).shape + (d, d)`` expressed in the frames
        that :meth:`MeanCurve.evaluate` attaches at ``(ss, tt)``.
        """
        ss = np.asarray(ss, dtype=float)
        tt = np.asarray(tt, dtype=float)
        ss, tt = np.broadcast_arrays(ss, tt)
        shape = ss.shape
        ss = np.atleast_1d(ss).ravel()
        tt = np.atleast_1d(tt).ravel()
        lo, hi = self.grid[0], self.grid[-1]
        if ss.size and (min(ss.min(), tt.min()) < lo or max(ss.max(), tt.max()) > hi):
            raise ValidationError(
                f"evaluation times leave the grid range [{lo:.6g}, {hi:.6g}]"
            )
        gi = np.clip(np.searchsorted(self.grid, ss, side="right") - 1, 0, self.size - 2)
        gj = np.clip(np.searchsorted(self.grid, tt, side="right") - 1, 0, self.size - 2)
        a = (ss - self.grid[gi]) / (self.grid[gi + 1] - self.grid[gi])
        b = (tt - self.grid[gj]) / (self.grid[gj + 1] - self.grid[gj])
        a = a[:, None, None]
        b = b[:, None, None]
        e = self.elements
        out = ((1 - a) * (1 - b) * e[gi, gj] + a * (1 - b) * e[gi + 1, gj]
               + (1 - a) * b * e[gi, gj + 1] + a * b * e[gi + 1, gj + 1])
        return out.reshape(shape + e.shape[2:])

    def gnorm_grid(self) -> np.ndarray:
        """Frobenius norm of every cell, the fiber metric norm."""
        return np.sqrt(np.sum(self.elements**2, axis=(2, 3)))

    def diagonal_clamp_report(self) -> np.ndarray:
        """Frobenius change from clamping negative eigenvalues of each
        diagonal cell at zero.  Healthy fits keep this below the noise
        scale; it is reported, never applied silently."""
        diag = self.elements[np.arange(self.size), np.arange(self.size)]
        vals = np.linalg.eigvalsh(0.5 * (diag + np.swapaxes(diag, -1, -2)))
        neg = np.minimum(vals, 0.0)
        return np.sqrt(np.sum(neg**2, axis=-1))

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.to_dict(),
            "grid": self.grid.tolist(),
            "elements": self.elements.tolist(),
            "bandwidth": self.bandwidth,
            "kernel": self.kernel,
            "pair_counts": self.pair_counts.tolist(),
            "denominators": self.denominators.tolist(),
            "failed": self.failed.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CovSurface":
        mean = MeanCurve.from_dict(data["mean"])
        grid = np.asarray(data["grid"], dtype=float)
        frames = _grid_frames(mean, grid)
        return cls(mean=mean, grid=grid, frames=frames,
                   elements=np.asarray(data["elements"], dtype=float),
                   bandwidth=float(data["bandwidth"]), kernel=data["kernel"],
                   pair_counts=np.asarray(data["pair_counts"], dtype=int),
                   denominators=np.asarray(data["denominators"], dtype=float),
                   failed=np.asarray(data["failed"], dtype=bool))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CovSurface":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def export_gnorm_csv(self, path) -> None:
        """Write cell norms as ``s,t,gnorm`` rows for plotting."""
        norms = self.gnorm_grid()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "t", "gnorm"])
            for g, s in enumerate(self.grid):
                for h, t in enumerate(self.grid):
                    writer.writerow([repr(float(s)), repr(float(t)),
                                     repr(float(norms[g, h]))])


def _grid_frames(mean: MeanCurve, grid: np.ndarray) -> tuple:
    pts, vecs = mean.evaluate(grid)
    return tuple(Frame(pts[g], vecs[g]) for g in range(len(grid)))


class SmootherWorkspace:
    """Transported observation coordinates shared across bandwidths.

    On construction every observation's residual vector is written in
    the frame at its own time and transported into the frame at every
    grid time.  These arrays do not depend on the bandwidth, so
    :meth:`fit` can be called repeatedly (for candidate bandwidths or
    cross-validation folds) paying only the moment accumulation, which
    runs as a handful of dense matrix products.
    """

    def __init__(self, dataset: SparseDataset, mean: MeanCurve, grid=None,
                 kernel: str = "epanechnikov"):
        if dataset.geometry != mean.geometry:
            raise ValidationError(
                f"dataset geometry {dataset.geometry.descriptor()} does not "
                f"match mean curve geometry {mean.geometry.descriptor()}"
            )
        self.dataset = dataset
        self.mean = mean
        self.kernel = kernel
        self.grid = mean.grid if grid is None else np.asarray(grid, dtype=float)
        geometry = dataset.geometry
        subj, times, points = dataset.flat()
        self.subj = subj
        self.times = times
        ev_pts, ev_vecs = mean.evaluate(times)
        logs = geometry.log(ev_pts, points)
        self.z = geometry.frame_coords(ev_pts, ev_vecs, logs)
        self.frames = _grid_frames(mean, self.grid)
        n_obs, g_len, d = len(times), len(self.grid), geometry.dim
        self.transported = np.empty((n_obs, g_len, d))
        for g, frame in enumerate(self.frames):
            moved = geometry.transport(ev_pts, frame.base, logs)
            self.transported[:, g, :] = geometry.frame_coords(
                frame.base, frame.vectors, moved)
        sizes = dataset.sizes()
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.nu_subject = dataset.cov_weights()
        self.nu_obs = self.nu_subject[subj]

    def _aggregate(self, arr: np.ndarray) -> np.ndarray:
        return np.add.reduceat(arr, self.starts, axis=0)

    def subset(self, indices) -> "SmootherWorkspace":
        """Workspace restricted to the given subject positions.

        The grid, frames and transported coordinates are reused, so
        building fold workspaces for cross-validation costs only array
        slicing.  Indices are deduplicated and sorted; the per-subject
        weights are renormalized over the retained subjects.
        """
        indices = np.unique(np.asarray(indices, dtype=int))
        if indices.size == 0:
            raise ValidationError("subject subset is empty")
        if indices[0] < 0 or indices[-1] >= self.dataset.n:
            raise ValidationError(
                f"subject indices must lie in [0, {self.dataset.n}), got "
                f"[{indices[0]}, {indices[-1]}]")
        ws = object.__new__(SmootherWorkspace)
        ws.dataset = self.dataset.subset(indices)
        ws.mean = self.mean
        ws.kernel = self.kernel
        ws.grid = self.grid
        ws.frames = self.frames
        keep = np.isin(self.subj, indices)
        ws.subj = np.searchsorted(indices, self.subj[keep])
        ws.times = self.times[keep]
        ws.z = self.z[keep]
        ws.transported = self.transported[keep]
        sizes = ws.dataset.sizes()
        ws.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        ws.nu_subject = ws.dataset.cov_weights()
        ws.nu_obs = ws.nu_subject[ws.subj]
        return ws

    def fit(self, h_c: float, max_failed: float = 0.1) -> CovSurface:
        """Fit the covariance surface at bandwidth ``h_c``.

        Cells failing the pair-count or determinant guards are imputed
        from the nearest healthy cell and flagged; the fit errors out
        when more than ``max_failed`` of all cells fail.
        """
        if not h_c > 0:
            raise ValidationError(f"bandwidth must be positive, got {h_c}")
        if h_c > self.mean.bandwidth:
            warnings.warn(
                f"covariance bandwidth {h_c:.3g} exceeds the mean bandwidth "
                f"{self.mean.bandwidth:.3g}; pointwise rate guarantees assume "
                "the two are of the same order", stacklevel=2)
        kern = kernel_function(self.kernel)
        x = (self.times[:, None] - self.grid[None, :]) / h_c
        k = kern(x) / h_c
        w0 = k
        w1 = k * x
        w2 = w1 * x
        ind = (k > 0).astype(float)
        p0, p1, p2, pi = (self._aggregate(a) for a in (w0, w1, w2, ind))

        def smat(pa, pb, wa, wb):
            top = (self.nu_subject[:, None] * pa).T @ pb
            corr = (self.nu_obs[:, None] * wa).T @ wb
            return top - corr

        s00 = smat(p0, p0, w0, w0)
        s10 = smat(p1, p0, w1, w0)
        s20 = smat(p2, p0, w2, w0)
        s11 = smat(p1, p1, w1, w1)
        s01, s02 = s10.T, s20.T
        counts = np.rint(pi.T @ pi - ind.T @ ind).astype(int)

        v0 = w0[:, :, None] * self.transported
        v1 = w1[:, :, None] * self.transported
        u0 = self._aggregate(v0)
        u1 = self._aggregate(v1)
        g_len, d = len(self.grid), self.dataset.geometry.dim

        def rmat(ua, ub, va, vb):
            top = ((self.nu_subject[:, None, None] * ua).reshape(len(ua), -1).T
                   @ ub.reshape(len(ub), -1))
            corr = ((self.nu_obs[:, None, None] * va).reshape(len(va), -1).T
                    @ vb.reshape(len(vb), -1))
            m = (top - corr).reshape(g_len, d, g_len, d)
            return m.transpose(0, 2, 3, 1)

        r00 = rmat(u0, u0, v0, v0)
        r10 = rmat(u1, u0, v1, v0)
        r01 = rmat(u0, u1, v0, v1)

        d1, d2, d3, denom = _det_terms(s00, s10, s01, s20, s02, s11)
        valid = (counts >= MIN_PAIRS) & (s00 > 0) & (denom > DENOM_GUARD * s00**3)
        n_bad = int(np.size(valid) - np.count_nonzero(valid))
        if n_bad > max_failed * valid.size or n_bad == valid.size:
            raise SingularFitError(
                f"{n_bad} of {valid.size} covariance cells failed the "
                f"window or determinant guards at bandwidth {h_c:.3g}"
            )
        safe = np.where(valid, denom, 1.0)
        raw = (d1[..., None, None] * r00 - d2[..., None, None] * r10
               + d3[..., None, None] * r01) / safe[..., None, None]
        if n_bad:
            raw = _impute_failed(raw, valid)
        sym = 0.5 * (raw + raw.transpose(1, 0, 3, 2))
        return CovSurface(mean=self.mean, grid=self.grid, frames=self.frames,
                          elements=sym, bandwidth=float(h_c),
                          kernel=self.kernel, pair_counts=counts,
                          denominators=denom, failed=~valid)


def _impute_failed(raw: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Copy each failed cell from its nearest healthy neighbor
    (Chebyshev distance, deterministic scan order)."""
    out = raw.copy()
    good = np.argwhere(valid)
    for gi, gj in np.argwhere(~valid):
        dist = np.maximum(np.abs(good[:, 0] - gi), np.abs(good[:, 1] - gj))
        src = good[int(np.argmin(dist))]
        out[gi, gj] = raw[src[0], src[1]]
    return out


def fit_cov_surface(dataset: SparseDataset, mean: MeanCurve, h_c: float,
                    kernel: str = "epanechnikov", grid=None,
                    max_failed: float = 0.1) -> CovSurface:
    """Fit the covariance surface of a sparse dataset.

    Convenience wrapper building a :class:`SmootherWorkspace` for a
    single bandwidth; reuse the workspace directly when fitting many
    bandwidths on the same data.

    Parameters
    ----------
    dataset : SparseDataset
    mean : MeanCurve
        Fitted mean on the same geometry; its frame field anchors all
        fibers.
    h_c : float
        Bandwidth of the product kernel in the two time variables.
    kernel : str
        Kernel name.
    grid : array_like, optional
        Surface grid, by default the mean curve's grid.
    max_failed : float
        Tolerated fraction of failed (imputed) cells.
    """
    workspace = SmootherWorkspace(dataset, mean, grid=grid, kernel=kernel)
    return workspace.fit(h_c, max_failed=max_failed)


@dataclass(frozen=True)
class NoiseVariance:
    """Measurement noise variance estimate.

    ``sigma_sq`` is floored at ``1e-10``; ``raw`` keeps the unfloored
    value, which can be slightly negative on nearly noiseless data.
    """

    sigma_sq: float
    raw: float


def noise_variance(dataset: SparseDataset, mean: MeanCurve,
                   surface: CovSurface) -> NoiseVariance:
    """Estimate the measurement noise variance.

    Averages, over observations, the squared residual coefficient norm
    minus the fitted covariance trace at the observation time, scaled
    by the subject size and the geometry dimension.  The diagonal
    surface trace is frame invariant because both axes share the frame
    at the evaluation point.
    """
    geometry = dataset.geometry
    subj, times, points = dataset.flat()
    ev_pts, ev_vecs = mean.evaluate(times)
    z = geometry.frame_coords(ev_pts, ev_vecs, geometry.log(ev_pts, points))
    tr = np.trace(surface.eval_coeffs(times, times), axis1=-2, axis2=-1)
    per_obs = np.sum(z * z, axis=1) - tr
    inv_m = 1.0 / dataset.sizes().astype(float)
    raw = float(np.sum(per_obs * inv_m[subj]) / (dataset.n * geometry.dim))
    return NoiseVariance(sigma_sq=max(raw, NOISE_FLOOR), raw=raw)
