"""Local-linear mean curve estimation on a geometry.

The mean curve of a sparsely observed process is fitted one grid point
at a time.  At each time the observations receive local-linear weights
built from a kernel in the time variable, and the weighted Fréchet mean
is found by Riemannian gradient descent.  The fitted curve carries a
field of orthonormal frames, propagated by parallel transport along the
consecutive grid geodesics, so that downstream covariance work has a
consistent coordinate system at every grid point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import SparseDataset
from .exceptions import (ConvergenceError, GuardError, NumericalError,
                         SingularFitError, ValidationError, WindowError)
from .geometry import Frame, Geometry, geometry_from_descriptor

__all__ = [
    "KERNELS",
    "LocalWeights",
    "MeanCurve",
    "default_grid",
    "eval_mean",
    "fit_mean",
    "frechet_minimize",
    "kernel_function",
    "local_weights",
]

DEFAULT_GRID_SIZE = 51
GRADIENT_TOL = 1e-10
MAX_ITERATIONS = 200
STEP_FLOOR = 1e-6
SIGMA_GUARD = 1e-14


def _epanechnikov(x):
    return np.where(np.abs(x) < 1.0, 0.75 * (1.0 - x * x), 0.0)


def _truncated_gauss(x):
    return np.where(np.abs(x) < 1.0, np.exp(-0.5 * x * x), 0.0)


KERNELS = {"epanechnikov": _epanechnikov, "gauss": _truncated_gauss}


def kernel_function(name: str):
    """Look up a kernel by name; supported kernels live in ``KERNELS``."""
    try:
        return KERNELS[name]
    except KeyError:
        raise ValidationError(
            f"unknown kernel {name!r}; expected one of {tuple(KERNELS)}"
        ) from None


def default_grid(domain, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Equispaced evaluation grid spanning the domain."""
    return np.linspace(domain[0], domain[1], size)


@dataclass(frozen=True)
class LocalWeights:
    """Local-linear weights at one target time.

    Observations outside the kernel window are dropped; ``indices``
    locates the survivors in the dataset's flat arrays.  ``weights``
    holds the local-linear weight of each surviving observation, which
    can be negative near the domain boundary, and ``lam`` the subject
    weight it is paired with.  The moments ``u0, u1, u2`` and their
    determinant ``sigma0_sq`` are kept for diagnostics.
    """

    t: float
    bandwidth: float
    indices: np.ndarray
    weights: np.ndarray
    lam: np.ndarray
    u0: float
    u1: float
    u2: float
    sigma0_sq: float

    @property
    def combined(self) -> np.ndarray:
        """Subject weight times local-linear weight, the coefficients of
        the weighted Fréchet objective.  Sums to one."""
        return self.lam * self.weights


def local_weights(dataset: SparseDataset, t: float, h_mu: float,
                  kernel: str = "epanechnikov") -> LocalWeights:
    """Local-linear weights for mean estimation at time ``t``.

    Parameters
    ----------
    dataset : SparseDataset
        Observations and their subject weighting scheme.
    t : float
        Target time inside the dataset's domain.
    h_mu : float
        Kernel bandwidth, positive.
    kernel : str
        Kernel name, by default the Epanechnikov kernel on [-1, 1].

    Returns
    -------
    LocalWeights

    Raises
    ------
    WindowError
        If no observation falls inside ``(t - h_mu, t + h_mu)``.
    SingularFitError
        If the weight determinant ``u0 u2 - u1**2`` is not positive,
        which happens when the window holds a single distinct time.
    """
    if not h_mu > 0:
        raise ValidationError(f"bandwidth must be positive, got {h_mu}")
    kern = kernel_function(kernel)
    subj, times, _ = dataset.flat()
    lam_subject = dataset.mean_weights()
    x = (times - t) / h_mu
    k = kern(x)
    idx = np.nonzero(k > 0.0)[0]
    if idx.size == 0:
        raise WindowError(
            f"no observations in the window ({t - h_mu:.6g}, {t + h_mu:.6g})"
        )
    kh = k[idx] / h_mu
    d = times[idx] - t
    lam = lam_subject[subj[idx]]
    lk = lam * kh
    u0 = float(np.sum(lk))
    u1 = float(np.sum(lk * d))
    u2 = float(np.sum(lk * d * d))
    sigma0_sq = u0 * u2 - u1 * u1
    if sigma0_sq <= SIGMA_GUARD:
        raise SingularFitError(
            f"degenerate window at t={t:.6g}: u0*u2 - u1^2 = {sigma0_sq:.3e}"
        )
    w = kh * (u2 - u1 * d) / sigma0_sq
    return LocalWeights(t=float(t), bandwidth=float(h_mu), indices=idx,
                        weights=w, lam=lam, u0=u0, u1=u1, u2=u2,
                        sigma0_sq=sigma0_sq)


def _minimize(geometry: Geometry, points, weights, init, tol=GRADIENT_TOL,
              max_iter=MAX_ITERATIONS):
    """Weighted Fréchet mean by gradient descent with backtracking.

    Returns ``(point, iterations, gradient_norm)``.  Raises
    ConvergenceError when the iteration budget runs out, or when the
    line search cannot decrease the objective, before the gradient norm
    reaches ``tol`` times the total absolute weight.
    """
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if len(points) != len(weights):
        raise ValidationError(
            f"{len(points)} points but {len(weights)} weights"
        )
    total = float(np.sum(np.abs(weights)))
    if not total > 0:
        raise ValidationError("all weights are zero")
    # The objective is locally quadratic with curvature set by the net
    # weight, so the natural unit step divides the gradient by it; when
    # signed weights nearly cancel that scale is unreliable and the
    # absolute total takes over as a conservative bound.
    net = float(np.sum(weights))
    scale = net if net > 0.05 * total else total
    y = np.array(init, dtype=float)

    def objective(p):
        dd = geometry.dist(p, points)
        return float(np.sum(weights * dd * dd))

    obj = objective(y)
    grad_norm = np.inf
    for it in range(max_iter):
        logs = geometry.log(y, points)
        grad = np.tensordot(weights, logs, axes=(0, 0))
        grad_norm = float(geometry.norm(y, grad))
        if grad_norm <= tol * total:
            return y, it, grad_norm
        direction = grad / scale
        tau = 1.0
        accepted = False
        # Near the minimizer the objective is flat to machine precision,
        # so a strict decrease test would reject every step; allow slack
        # at the rounding level of the objective.
        slack = 1e-14 * (abs(obj) + 1.0)
        while tau >= STEP_FLOOR:
            try:
                cand = geometry.exp(y, tau * direction)
            except GuardError:
                tau *= 0.5
                continue
            cand_obj = objective(cand)
            if cand_obj <= obj + slack:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            break
        y, obj = cand, cand_obj
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations; "
        f"gradient norm {grad_norm:.3e} (tolerance {tol * total:.3e})"
    )


def frechet_minimize(geometry: Geometry, points, weights, init) -> np.ndarray:
    """Weighted Fréchet mean of ``points`` under ``weights``.

    Riemannian gradient descent from ``init`` with backtracking line
    search; each accepted step does not increase the objective.  Stops
    once the gradient norm falls below ``1e-10`` times the total
    absolute weight; raises :class:`ConvergenceError`, reporting the
    final gradient norm, if 200 iterations do not get there.  Weights
    may be negative as long as one is nonzero.
    """
    y, _, _ = _minimize(geometry, points, weights, init)
    return y


@dataclass
class MeanCurve:
    """Fitted mean curve on a grid with a parallel frame field.

    Attributes
    ----------
    geometry : Geometry
    grid : ndarray
        Strictly increasing fit times.
    points : ndarray
        Fitted point at each grid time, shape ``(G,) + ambient_shape``.
    frames : tuple of Frame
        Orthonormal frame at each fitted point; the first is the
        geometry's base frame there and the rest are its parallel
        transports along consecutive grid geodesics.
    bandwidth : float
    kernel : str
    iterations : ndarray
        Gradient-descent iteration count per grid point.
    gradient_norms : ndarray
        Final gradient norm per grid point.
    """

    geometry: Geometry
    grid: np.ndarray
    points: np.ndarray
    frames: tuple
    bandwidth: float
    kernel: str = "epanechnikov"
    iterations: np.ndarray = field(default=None)
    gradient_norms: np.ndarray = field(default=None)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.grid.ndim != 1 or len(self.grid) < 2:
            raise ValidationError("grid needs at least two points")
        if np.any(np.diff(self.grid) <= 0):
            raise ValidationError("grid times must be strictly increasing")
        if self.points.shape != (len(self.grid),) + self.geometry.ambient_shape:
            raise ValidationError(
                f"points have shape {self.points.shape}, expected "
                f"{(len(self.grid),) + self.geometry.ambient_shape}"
            )
        if len(self.frames) != len(self.grid):
            raise ValidationError("one frame per grid point required")
        if self.iterations is None:
            self.iterations = np.zeros(len(self.grid), dtype=int)
        if self.gradient_norms is None:
            self.gradient_norms = np.zeros(len(self.grid))

    @property
    def size(self) -> int:
        return len(self.grid)

    def frame_vectors(self) -> np.ndarray:
        """Stacked frame vectors, shape ``(G, dim) + ambient_shape``."""
        return np.stack([f.vectors for f in self.frames])

    def evaluate(self, ts) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized curve and frame evaluation.

        Parameters
        ----------
        ts : array_like
            Times inside ``[grid[0], grid[-1]]``.

        Returns
        -------
        points : ndarray, shape ``ts.shape + ambient_shape``
        vectors : ndarray, shape ``ts.shape + (dim,) + ambient_shape``
            Frame vectors transported along the interpolating geodesic
            from the left grid point; exactly the stored values at grid
            times.
        """
        geometry = self.geometry
        ts = np.asarray(ts, dtype=float)
        scalar = ts.ndim == 0
        flat = np.atleast_1d(ts).ravel()
        if flat.size and (flat.min() < self.grid[0] or flat.max() > self.grid[-1]):
            raise ValidationError(
                f"evaluation times leave the grid range "
                f"[{self.grid[0]:.6g}, {self.grid[-1]:.6g}]"
            )
        seg = np.clip(np.searchsorted(self.grid, flat, side="right") - 1,
                      0, self.size - 2)
        alpha = (flat - self.grid[seg]) / (self.grid[seg + 1] - self.grid[seg])
        left = self.points[seg]
        right = self.points[seg + 1]
        ax = (...,) + (None,) * len(geometry.ambient_shape)
        pts = geometry.exp(left, alpha[ax] * geometry.log(left, right))
        all_vectors = self.frame_vectors()
        vecs = geometry.transport(left[:, None], pts[:, None], all_vectors[seg])
        hit = np.nonzero(self.grid[seg] == flat)[0]
        if hit.size:
            pts[hit] = self.points[seg[hit]]
            vecs[hit] = all_vectors[seg[hit]]
        end = np.nonzero(flat == self.grid[-1])[0]
        if end.size:
            pts[end] = self.points[-1]
            vecs[end] = all_vectors[-1]
        shape = ts.shape if not scalar else ()
        pts = pts.reshape(shape + geometry.ambient_shape)
        vecs = vecs.reshape(shape + (geometry.dim,) + geometry.ambient_shape)
        return pts, vecs

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.descriptor(),
            "bandwidth": self.bandwidth,
            "kernel": self.kernel,
            "grid": self.grid.tolist(),
            "points": self.points.tolist(),
            "frames": [f.vectors.tolist() for f in self.frames],
            "iterations": self.iterations.tolist(),
            "gradient_norms": self.gradient_norms.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MeanCurve":
        geometry = geometry_from_descriptor(data["geometry"])
        points = np.asarray(data["points"], dtype=float)
        frames = tuple(
            Frame(base=points[g], vectors=np.asarray(v, dtype=float))
            for g, v in enumerate(data["frames"])
        )
        return cls(geometry=geometry, grid=np.asarray(data["grid"], dtype=float),
                   points=points, frames=frames,
                   bandwidth=float(data["bandwidth"]),
                   kernel=data.get("kernel", "epanechnikov"),
                   iterations=np.asarray(data["iterations"], dtype=int),
                   gradient_norms=np.asarray(data["gradient_norms"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MeanCurve":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_mean(dataset: SparseDataset, h_mu: float, grid=None,
             kernel: str = "epanechnikov") -> MeanCurve:
    """Fit the mean curve of a sparse dataset on a time grid.

    Parameters
    ----------
    dataset : SparseDataset
    h_mu : float
        Bandwidth of the local-linear weights.
    grid : array_like, optional
        Strictly increasing times inside the dataset's domain; defaults
        to 51 equispaced points spanning it.
    kernel : str
        Kernel name.

    Returns
    -------
    MeanCurve

    Notes
    -----
    Each grid point solves a weighted Fréchet minimization warm-started
    at the previous fitted point.  The first grid point starts from the
    Fréchet mean of its window under the nonnegative kernel weights
    alone, which is robust to the sign changes of the local-linear
    weights.  Window and convergence failures are re-raised with the
    offending grid time in the message.
    """
    geometry = dataset.geometry
    if grid is None:
        grid = default_grid(dataset.domain)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be a strictly increasing vector")
    if grid[0] < dataset.domain[0] or grid[-1] > dataset.domain[1]:
        raise ValidationError(f"grid leaves the domain {dataset.domain}")
    _, _, obs_points = dataset.flat()
    fitted = np.empty((len(grid),) + geometry.ambient_shape)
    iterations = np.zeros(len(grid), dtype=int)
    gradient_norms = np.zeros(len(grid))
    prev = None
    for g, t in enumerate(grid):
        try:
            lw = local_weights(dataset, t, h_mu, kernel=kernel)
            pts = obs_points[lw.indices]
            if prev is None:
                kw = lw.lam * np.maximum(kernel_function(kernel)(
                    (dataset.flat()[1][lw.indices] - t) / lw.bandwidth), 0.0)
                start = pts[int(np.argmax(kw))]
                init, _, _ = _minimize(geometry, pts, kw, start)
            else:
                init = prev
            y, its, gn = _minimize(geometry, pts, lw.combined, init)
        except NumericalError as exc:
            raise type(exc)(f"grid point t={t:.6g}: {exc}") from exc
        fitted[g] = y
        iterations[g] = its
        gradient_norms[g] = gn
        prev = y
    frames = [geometry.onb(fitted[0])]
    for g in range(1, len(grid)):
        frames.append(geometry.onb(fitted[g], reference=frames[g - 1]))
    return MeanCurve(geometry=geometry, grid=grid, points=fitted,
                     frames=tuple(frames), bandwidth=float(h_mu),
                     kernel=kernel, iterations=iterations,
                     gradient_norms=gradient_norms)


def eval_mean(curve: MeanCurve, t: float) -> tuple[np.ndarray, Frame]:
    """Evaluate a fitted mean curve between grid points.

    Interpolates along the geodesic joining the bracketing fitted
    points and transports the left frame by the same fraction.  Exact
    at grid times.  Raises :class:`ValidationError` outside the grid
    range.
    """
    pts, vecs = curve.evaluate(float(t))
    return pts, Frame(base=pts, vectors=vecs)
