"""Riemannian geometries for functional data on manifolds.

This module provides the model spaces used by the rest of the package:
Euclidean space, the unit sphere, and symmetric positive-definite (SPD)
matrices under either the log-Cholesky or the affine-invariant metric.
Each geometry implements exponential and logarithmic maps, geodesic
distance, parallel transport along minimizing geodesics, and orthonormal
tangent frames.

Points and tangent vectors are plain numpy arrays whose trailing
dimensions form the geometry's ambient shape: ``(d,)`` for Euclidean
space, ``(d+1,)`` for the d-sphere and ``(m, m)`` for SPD matrices.
All metric operations broadcast over leading batch dimensions; frame
construction works on a single base point at a time.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .exceptions import GuardError, ValidationError

__all__ = [
    "Frame",
    "Geometry",
    "Euclidean",
    "Sphere",
    "SPDLogCholesky",
    "SPDAffineInvariant",
    "geometry_from_descriptor",
    "rotate_frame",
    "random_orthogonal",
]

# Eigenvalue floor applied before matrix logarithms.
EIG_FLOOR = 1e-14


@dataclass(frozen=True)
class Frame:
    """Orthonormal basis of a tangent space.

    Attributes
    ----------
    base : ndarray
        The point whose tangent space the frame spans.
    vectors : ndarray of shape (dim, \\*ambient)
        Stacked tangent vectors, orthonormal in the geometry's metric.
    """

    base: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]


def rotate_frame(frame: Frame, rotation: np.ndarray) -> Frame:
    """Recombine frame vectors by an orthogonal matrix.

    The new k-th vector is ``sum_j rotation[k, j] * vectors[j]``.  Any
    orthogonal ``rotation`` yields another orthonormal frame at the same
    base point.
    """
    vecs = np.einsum("kj,j...->k...", rotation, frame.vectors)
    return Frame(frame.base, vecs)


def random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    """Draw a Haar-distributed orthogonal d-by-d matrix."""
    a = rng.standard_normal((d, d))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


class Geometry(ABC):
    """Abstract Riemannian geometry.

    Subclasses fix the ambient representation of points and implement
    the metric, the exponential and logarithmic maps, geodesic distance,
    and parallel transport along minimizing geodesics.

    Parameters
    ----------
    dim : int
        Intrinsic dimension of the manifold.
    ambient_shape : tuple of int
        Trailing shape of point and tangent arrays.
    guard_tol : float
        Tolerance used by validity checks and geometric guards.
    """

    kind: str = ""

    def __init__(self, dim: int, ambient_shape: tuple, guard_tol: float = 1e-12):
        self.dim = int(dim)
        self.ambient_shape = tuple(ambient_shape)
        self.guard_tol = float(guard_tol)

    # ------------------------------------------------------------------
    # representation and hygiene
    # ------------------------------------------------------------------

    @abstractmethod
    def check_point(self, p: np.ndarray) -> None:
        """Raise :class:`ValidationError` if ``p`` is not a valid point."""

    @abstractmethod
    def project_tangent(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Project an ambient perturbation onto the tangent space at ``p``."""

    def _check_shape(self, arr: np.ndarray, what: str) -> None:
        k = len(self.ambient_shape)
        if arr.ndim < k or arr.shape[arr.ndim - k:] != self.ambient_shape:
            raise ValidationError(
                f"{what} has trailing shape {arr.shape}, expected {self.ambient_shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{what} contains non-finite entries")

    # ------------------------------------------------------------------
    # metric
    # ------------------------------------------------------------------

    @abstractmethod
    def inner(self, p: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Riemannian inner product of tangents ``u`` and ``v`` at ``p``."""

    def norm(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Riemannian norm of a tangent vector."""
        return np.sqrt(np.clip(self.inner(p, v, v), 0.0, None))

    @abstractmethod
    def dist(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Geodesic distance between points."""

    # ------------------------------------------------------------------
    # maps and transport
    # ------------------------------------------------------------------

    @abstractmethod
    def exp(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Exponential map: follow the geodesic from ``p`` with velocity ``v``."""

    @abstractmethod
    def log(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Logarithmic map: initial velocity of the geodesic from ``p`` to ``q``."""

    @abstractmethod
    def transport(self, p: np.ndarray, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Parallel transport of ``v`` from ``p`` to ``q`` along the
        minimizing geodesic."""

    # ------------------------------------------------------------------
    # frames
    # ------------------------------------------------------------------

    @abstractmethod
    def _base_frame_vectors(self, p: np.ndarray) -> np.ndarray:
        """Deterministic orthonormal basis of the tangent space at ``p``."""

    def onb(self, p: np.ndarray, reference: Frame | None = None) -> Frame:
        """Orthonormal tangent frame at ``p``.

        Parameters
        ----------
        p : ndarray
            Base point.
        reference : Frame, optional
            When given, the reference frame is parallel transported from
            its own base point to ``p`` along the minimizing geodesic.
            This is how a continuous frame field is propagated along a
            fitted curve.  Without a reference a deterministic frame is
            constructed from ``p`` alone.
        """
        if reference is None:
            return Frame(np.asarray(p, dtype=float), self._base_frame_vectors(p))
        vecs = self.transport(reference.base, p, reference.vectors)
        return Frame(np.asarray(p, dtype=float), vecs)

    @abstractmethod
    def coords(self, frame: Frame, v: np.ndarray) -> np.ndarray:
        """Coefficients of tangent vectors ``v`` in an orthonormal frame.

        Broadcasts over leading dimensions of ``v``; returns an array
        whose trailing dimension is ``self.dim``.
        """

    def from_coords(self, frame: Frame, x: np.ndarray) -> np.ndarray:
        """Tangent vector with coefficient array ``x`` in ``frame``."""
        x = np.asarray(x, dtype=float)
        flat = frame.vectors.reshape(self.dim, -1)
        out = x @ flat
        return out.reshape(x.shape[:-1] + self.ambient_shape)

    def frame_coords(self, p: np.ndarray, vectors: np.ndarray,
                     v: np.ndarray) -> np.ndarray:
        """Coefficients of ``v`` in per-point orthonormal frames.

        Batched companion of :meth:`coords`: ``p`` has shape
        ``(..., *ambient)``, ``vectors`` ``(..., dim, *ambient)`` and
        ``v`` ``(..., *ambient)``; the result has shape ``(..., dim)``.
        Valid for orthonormal frames, where coefficients are metric
        inner products with the frame vectors.
        """
        k = len(self.ambient_shape) + 1
        pe = np.expand_dims(np.asarray(p, dtype=float), -k)
        ve = np.expand_dims(np.asarray(v, dtype=float), -k)
        return self.inner(pe, vectors, ve)

    def frame_expand(self, vectors: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Tangent vectors with coefficients ``x`` in per-point frames.

        Inverse of :meth:`frame_coords` on orthonormal frames:
        ``vectors`` has shape ``(..., dim, *ambient)`` and ``x``
        ``(..., dim)``; the result has shape ``(..., *ambient)``.
        """
        vectors = np.asarray(vectors, dtype=float)
        x = np.asarray(x, dtype=float)
        lead = vectors.shape[:-1 - len(self.ambient_shape)]
        flat = vectors.reshape(lead + (self.dim, -1))
        out = np.matmul(x[..., None, :], flat)[..., 0, :]
        return out.reshape(out.shape[:-1] + self.ambient_shape)

    def frame_gram(self, frame: Frame) -> np.ndarray:
        """Gram matrix of a frame; the identity for an orthonormal frame."""
        d = frame.dim
        g = np.empty((d, d))
        for i in range(d):
            g[i] = self.inner(frame.base, frame.vectors[i], frame.vectors)
        return g

    def check_frame(self, frame: Frame, tol: float = 1e-9) -> None:
        """Raise :class:`ValidationError` unless the frame is orthonormal."""
        g = self.frame_gram(frame)
        err = np.max(np.abs(g - np.eye(frame.dim)))
        if not err <= tol:
            raise ValidationError(f"frame Gram matrix deviates from identity by {err:.3e}")

    # ------------------------------------------------------------------
    # random draws (testing and demos)
    # ------------------------------------------------------------------

    @abstractmethod
    def random_point(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw random valid points, stacked along a leading axis if ``n``."""

    def random_tangent(
        self,
        rng: np.random.Generator,
        p: np.ndarray,
        scale: float = 1.0,
        n: int | None = None,
    ) -> np.ndarray:
        """Draw random tangent vectors at ``p`` by projecting ambient noise."""
        shape = (self.ambient_shape if n is None else (n,) + self.ambient_shape)
        raw = rng.standard_normal(shape)
        return scale * self.project_tangent(p, raw)

    # ------------------------------------------------------------------
    # identification
    # ------------------------------------------------------------------

    @property
    def _param(self) -> int:
        raise NotImplementedError

    def descriptor(self) -> str:
        """Compact text form, e.g. ``"sphere:2"``; see
        :func:`geometry_from_descriptor`."""
        return f"{self.kind}:{self._param}"

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._param})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Geometry) and self.descriptor() == other.descriptor()

    def __hash__(self) -> int:
        return hash(self.descriptor())


class Euclidean(Geometry):
    """Flat Euclidean space of dimension ``d``; points are ``(d,)`` arrays."""

    kind = "euclidean"

    def __init__(self, dim: int, guard_tol: float = 1e-12):
        if dim < 1:
            raise ValidationError("euclidean dimension must be at least 1")
        super().__init__(dim, (dim,), guard_tol)

    @property
    def _param(self) -> int:
        return self.dim

    def check_point(self, p):
        self._check_shape(np.asarray(p, dtype=float), "point")

    def project_tangent(self, p, v):
        return np.array(v, dtype=float)

    def inner(self, p, u, v):
        return np.sum(np.asarray(u) * np.asarray(v), axis=-1)

    def dist(self, p, q):
        return np.linalg.norm(np.asarray(q) - np.asarray(p), axis=-1)

    def exp(self, p, v):
        return np.asarray(p) + np.asarray(v)

    def log(self, p, q):
        return np.asarray(q) - np.asarray(p)

    def transport(self, p, q, v):
        return np.array(v, dtype=float)

    def _base_frame_vectors(self, p):
        return np.eye(self.dim)

    def coords(self, frame, v):
        return np.asarray(v) @ frame.vectors.T

    def random_point(self, rng, n=None):
        shape = (self.dim,) if n is None else (n, self.dim)
        return rng.standard_normal(shape)


class Sphere(Geometry):
    """Unit d-sphere embedded in ``R^(d+1)``.

    The exponential map, logarithm and parallel transport are closed
    forms in the ambient space.  The logarithm is guarded against
    antipodal pairs, where no unique minimizing geodesic exists, and the
    exponential map rejects steps of length ``pi`` or more.
    """

    kind = "sphere"

    def __init__(self, dim: int, guard_tol: float = 1e-12):
        if dim < 1:
            raise ValidationError("sphere dimension must be at least 1")
        super().__init__(dim, (dim + 1,), guard_tol)

    _SMALL = 1e-8  # angle below which series expansions take over

    @property
    def _param(self) -> int:
        return self.dim

    def check_point(self, p):
        p = np.asarray(p, dtype=float)
        self._check_shape(p, "point")
        err = np.max(np.abs(np.linalg.norm(p, axis=-1) - 1.0))
        if not err <= self.guard_tol:
            raise ValidationError(f"point is off the unit sphere by {err:.3e}")

    def project_tangent(self, p, v):
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        return v - np.sum(p * v, axis=-1, keepdims=True) * p

    def inner(self, p, u, v):
        return np.sum(np.asarray(u) * np.asarray(v), axis=-1)

    def dist(self, p, q):
        chord = np.linalg.norm(np.asarray(q) - np.asarray(p), axis=-1)
        return 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))

    def exp(self, p, v):
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        theta = np.linalg.norm(np.broadcast_to(v, np.broadcast_shapes(p.shape, v.shape)), axis=-1)
        if np.any(theta >= np.pi):
            raise GuardError("exponential map step of length >= pi reaches the antipode")
        small = theta < self._SMALL
        with np.errstate(invalid="ignore", divide="ignore"):
            sinc = np.where(small, 1.0 - theta**2 / 6.0, np.sin(theta) / np.where(theta == 0.0, 1.0, theta))
        out = np.cos(theta)[..., None] * p + sinc[..., None] * v
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def log(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        dot = np.clip(np.sum(p * q, axis=-1), -1.0, 1.0)
        chord = np.linalg.norm(q - p, axis=-1)
        theta = 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))
        if np.any(theta >= np.pi - self.guard_tol):
            raise GuardError("logarithm is undefined for antipodal points")
        w = q - dot[..., None] * p
        nw = np.linalg.norm(w, axis=-1)
        small = theta < self._SMALL
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(
                small,
                1.0 + theta**2 / 6.0,
                theta / np.where(nw == 0.0, 1.0, nw),
            )
        return scale[..., None] * w

    def transport(self, p, q, v):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        w = self.log(p, q)
        theta = np.linalg.norm(w, axis=-1)
        safe = np.where(theta == 0.0, 1.0, theta)
        u = w / safe[..., None]
        a = np.sum(v * u, axis=-1)
        u_at_q = np.cos(theta)[..., None] * u - np.sin(theta)[..., None] * p
        out = v + a[..., None] * (u_at_q - u)
        out = np.where(theta[..., None] < self._SMALL, v, out)
        return self.project_tangent(q, out)

    def _base_frame_vectors(self, p):
        p = np.asarray(p, dtype=float)
        n = self.dim + 1
        e = np.zeros(n)
        sign = -1.0 if p[-1] < 0 else 1.0
        e[-1] = sign
        w = p + e
        h = np.eye(n) - 2.0 * np.outer(w, w) / (w @ w)
        # Columns 0..d-1 of the reflection are orthonormal and tangent at p.
        return h[:, : self.dim].T.copy()

    def coords(self, frame, v):
        return np.asarray(v) @ frame.vectors.T

    def random_point(self, rng, n=None):
        shape = (self.dim + 1,) if n is None else (n, self.dim + 1)
        raw = rng.standard_normal(shape)
        return raw / np.linalg.norm(raw, axis=-1, keepdims=True)


# ----------------------------------------------------------------------
# symmetric-matrix helpers shared by the SPD geometries
# ----------------------------------------------------------------------


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _sym_map(a: np.ndarray, fn, floor: float | None = None) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of symmetric matrices."""
    w, v = np.linalg.eigh(_symmetrize(a))
    if floor is not None:
        w = np.clip(w, floor, None)
    fw = fn(w)
    return (v * fw[..., None, :]) @ np.swapaxes(v, -1, -2)


def _spd_log(a):
    return _sym_map(a, np.log, floor=EIG_FLOOR)


def _spd_exp(s):
    return _sym_map(s, np.exp)


def _spd_pow(a, power):
    return _sym_map(a, lambda w: np.power(w, power), floor=EIG_FLOOR)


class SPDLogCholesky(Geometry):
    """SPD matrices of size ``m`` under the log-Cholesky metric.

    The chart sending ``P = L L^T`` to the strictly lower triangle of
    ``L`` together with the elementwise logarithm of its diagonal is a
    global isometry onto ``R^(m(m+1)/2)``, so the geometry is flat:
    distances, geodesics and parallel transport are Euclidean in chart
    coordinates, and transport is exactly path independent.
    """

    kind = "spd-lc"

    def __init__(self, size: int, guard_tol: float = 1e-12):
        if size < 1:
            raise ValidationError("matrix size must be at least 1")
        self.size = int(size)
        super().__init__(size * (size + 1) // 2, (size, size), guard_tol)
        self._strict = np.tril_indices(size, -1)
        self._n_strict = size * (size - 1) // 2
        self._diag = np.arange(size)

    @property
    def _param(self) -> int:
        return self.size

    # -- chart plumbing -------------------------------------------------

    def _cholesky(self, p, what="point"):
        try:
            return np.linalg.cholesky(np.asarray(p, dtype=float))
        except np.linalg.LinAlgError as exc:
            raise ValidationError(f"{what} is not positive definite") from exc

    def _pack(self, strict_src: np.ndarray, diag_vals: np.ndarray) -> np.ndarray:
        out = np.empty(strict_src.shape[:-2] + (self.dim,))
        out[..., : self._n_strict] = strict_src[..., self._strict[0], self._strict[1]]
        out[..., self._n_strict:] = diag_vals
        return out

    def _unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        strict = np.zeros(x.shape[:-1] + (self.size, self.size))
        strict[..., self._strict[0], self._strict[1]] = x[..., : self._n_strict]
        return strict, x[..., self._n_strict:]

    def chart(self, p: np.ndarray) -> np.ndarray:
        """Global chart coordinates of SPD points."""
        ell = self._cholesky(p)
        d = ell[..., self._diag, self._diag]
        return self._pack(ell, np.log(d))

    def chart_inv(self, x: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`chart`."""
        x = np.asarray(x, dtype=float)
        ell, logd = self._unpack(x)
        ell[..., self._diag, self._diag] = np.exp(logd)
        return ell @ np.swapaxes(ell, -1, -2)

    def chart_diff(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Differential of the chart applied to tangents ``v`` at ``p``."""
        ell = self._cholesky(p)
        v = _symmetrize(np.asarray(v, dtype=float))
        a = np.linalg.solve(ell, v)
        s = np.linalg.solve(ell, np.swapaxes(a, -1, -2))  # L^-1 V L^-T
        phi = np.tril(s, -1)
        phi[..., self._diag, self._diag] = 0.5 * s[..., self._diag, self._diag]
        dl = ell @ phi
        ddiag = dl[..., self._diag, self._diag] / ell[..., self._diag, self._diag]
        return self._pack(dl, ddiag)

    def chart_diff_inv(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Tangent at ``p`` whose chart differential equals ``x``."""
        ell = self._cholesky(p)
        dl, rel = self._unpack(np.asarray(x, dtype=float))
        dl[..., self._diag, self._diag] = rel * ell[..., self._diag, self._diag]
        return dl @ np.swapaxes(ell, -1, -2) + ell @ np.swapaxes(dl, -1, -2)

    # -- geometry -------------------------------------------------------

    def check_point(self, p):
        p = np.asarray(p, dtype=float)
        self._check_shape(p, "point")
        asym = np.max(np.abs(p - np.swapaxes(p, -1, -2)))
        scale = max(1.0, float(np.max(np.abs(p))))
        if not asym <= self.guard_tol * scale:
            raise ValidationError(f"matrix is asymmetric by {asym:.3e}")
        self._cholesky(p)

    def project_tangent(self, p, v):
        return _symmetrize(np.asarray(v, dtype=float))

    def inner(self, p, u, v):
        cu = self.chart_diff(p, u)
        cv = self.chart_diff(p, v)
        return np.sum(cu * cv, axis=-1)

    def dist(self, p, q):
        return np.linalg.norm(self.chart(q) - self.chart(p), axis=-1)

    def exp(self, p, v):
        return self.chart_inv(self.chart(p) + self.chart_diff(p, v))

    def log(self, p, q):
        return self.chart_diff_inv(p, self.chart(q) - self.chart(p))

    def transport(self, p, q, v):
        return self.chart_diff_inv(q, self.chart_diff(p, v))

    def _base_frame_vectors(self, p):
        return self.chart_diff_inv(p, np.eye(self.dim))

    def coords(self, frame, v):
        basis = self.chart_diff(frame.base, frame.vectors)  # (dim, dim)
        x = self.chart_diff(frame.base, v)
        return x @ basis.T

    def random_point(self, rng, n=None):
        shape = (self.size, self.size) if n is None else (n, self.size, self.size)
        s = _symmetrize(rng.standard_normal(shape))
        return _spd_exp(0.5 * s)


class SPDAffineInvariant(Geometry):
    """SPD matrices of size ``m`` under the affine-invariant metric.

    The metric at ``P`` is ``<U, V> = tr(P^-1 U P^-1 V)``; geodesics,
    logarithms and parallel transport are matrix closed forms evaluated
    through symmetric eigendecompositions, with eigenvalues floored at
    ``1e-14`` before logarithms.
    """

    kind = "spd-ai"

    def __init__(self, size: int, guard_tol: float = 1e-12):
        if size < 1:
            raise ValidationError("matrix size must be at least 1")
        self.size = int(size)
        super().__init__(size * (size + 1) // 2, (size, size), guard_tol)
        self._sym_basis = self._build_sym_basis(size)

    @staticmethod
    def _build_sym_basis(m: int) -> np.ndarray:
        """Frobenius-orthonormal basis of symmetric matrices: diagonal
        units first, then off-diagonal pairs scaled by 1/sqrt(2)."""
        basis = []
        for i in range(m):
            b = np.zeros((m, m))
            b[i, i] = 1.0
            basis.append(b)
        for i in range(m):
            for j in range(i + 1, m):
                b = np.zeros((m, m))
                b[i, j] = b[j, i] = 1.0 / np.sqrt(2.0)
                basis.append(b)
        return np.stack(basis)

    @property
    def _param(self) -> int:
        return self.size

    def check_point(self, p):
        p = np.asarray(p, dtype=float)
        self._check_shape(p, "point")
        asym = np.max(np.abs(p - np.swapaxes(p, -1, -2)))
        scale = max(1.0, float(np.max(np.abs(p))))
        if not asym <= self.guard_tol * scale:
            raise ValidationError(f"matrix is asymmetric by {asym:.3e}")
        w = np.linalg.eigvalsh(_symmetrize(p))
        if not np.all(w > 0):
            raise ValidationError("matrix is not positive definite")

    def project_tangent(self, p, v):
        return _symmetrize(np.asarray(v, dtype=float))

    def inner(self, p, u, v):
        p = np.asarray(p, dtype=float)
        x = np.linalg.solve(p, np.asarray(u, dtype=float))
        y = np.linalg.solve(p, np.asarray(v, dtype=float))
        return np.einsum("...ab,...ba->...", x, y)

    def _half_powers(self, p):
        w, vec = np.linalg.eigh(_symmetrize(np.asarray(p, dtype=float)))
        w = np.clip(w, EIG_FLOOR, None)
        sq = np.sqrt(w)
        ph = (vec * sq[..., None, :]) @ np.swapaxes(vec, -1, -2)
        pmh = (vec * (1.0 / sq)[..., None, :]) @ np.swapaxes(vec, -1, -2)
        return ph, pmh

    def dist(self, p, q):
        _, pmh = self._half_powers(p)
        s = pmh @ np.asarray(q, dtype=float) @ pmh
        w = np.linalg.eigvalsh(_symmetrize(s))
        w = np.clip(w, EIG_FLOOR, None)
        return np.linalg.norm(np.log(w), axis=-1)

    def exp(self, p, v):
        ph, pmh = self._half_powers(p)
        s = pmh @ _symmetrize(np.asarray(v, dtype=float)) @ pmh
        return ph @ _spd_exp(s) @ ph

    def log(self, p, q):
        ph, pmh = self._half_powers(p)
        s = pmh @ np.asarray(q, dtype=float) @ pmh
        return ph @ _spd_log(s) @ ph

    def transport(self, p, q, v):
        ph, pmh = self._half_powers(p)
        s = pmh @ np.asarray(q, dtype=float) @ pmh
        e = ph @ _spd_pow(s, 0.5) @ pmh
        return e @ _symmetrize(np.asarray(v, dtype=float)) @ np.swapaxes(e, -1, -2)

    def _base_frame_vectors(self, p):
        ph, _ = self._half_powers(p)
        return ph @ self._sym_basis @ ph

    def coords(self, frame, v):
        pinv = np.linalg.inv(frame.base)
        duals = pinv @ frame.vectors @ pinv  # (dim, m, m)
        return np.einsum("kab,...ab->...k", duals, _symmetrize(np.asarray(v, dtype=float)))

    def random_point(self, rng, n=None):
        shape = (self.size, self.size) if n is None else (n, self.size, self.size)
        s = _symmetrize(rng.standard_normal(shape))
        return _spd_exp(0.5 * s)


_KINDS = {
    "euclidean": Euclidean,
    "sphere": Sphere,
    "spd-lc": SPDLogCholesky,
    "spd-ai": SPDAffineInvariant,
}


def geometry_from_descriptor(text: str) -> Geometry:
    """Build a geometry from its descriptor, e.g. ``"spd-lc:3"``.

    The descriptor is ``kind:parameter`` where the parameter is the
    dimension for ``euclidean`` and ``sphere`` and the matrix size for
    the SPD geometries.
    """
    parts = str(text).strip().split(":")
    if len(parts) != 2 or parts[0] not in _KINDS:
        raise ValidationError(
            f"unknown geometry descriptor {text!r}; expected one of "
            f"{sorted(_KINDS)} followed by ':<int>'"
        )
    try:
        param = int(parts[1])
    except ValueError as exc:
        raise ValidationError(f"geometry parameter in {text!r} is not an integer") from exc
    return _KINDS[parts[0]](param)
