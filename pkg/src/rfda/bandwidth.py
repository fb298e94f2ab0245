"""Data-driven bandwidth selection for the mean and covariance fits.

The primary selector is subject-level K-fold cross-validation: subjects
are assigned to folds, each candidate bandwidth is refit with one fold
held out, and the held-out prediction error is accumulated into a risk
table.  A cheaper one-pass generalized cross-validation score is
available behind the ``method`` flag; it approximates the effective
degrees of freedom from the kernel height and should be treated as a
rough screen rather than a validated selector.
"""

import csv
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .data import SparseDataset
from .exceptions import NumericalError, ValidationError
from .mean import MeanCurve, fit_mean, kernel_function
from .smoother import SmootherWorkspace

DEFAULT_GRID_SIZE = 8
DEFAULT_FOLDS = 5


@dataclass(frozen=True)
class BandwidthGrid:
    """Strictly increasing, positive candidate bandwidths.

    Duplicate values are removed on construction.  :meth:`default`
    builds a geometric grid whose endpoints adapt to the sampling
    density: from 1.5 times the median within-subject time gap up to
    half the domain length.
    """

    candidates: np.ndarray

    def __post_init__(self):
        arr = np.unique(np.asarray(self.candidates, dtype=float))
        if arr.size == 0:
            raise ValidationError("bandwidth grid is empty")
        if not np.all(np.isfinite(arr)) or arr[0] <= 0:
            raise ValidationError(
                f"candidate bandwidths must be positive and finite, got "
                f"{np.asarray(self.candidates).tolist()}")
        object.__setattr__(self, "candidates", arr)

    @classmethod
    def default(cls, dataset: SparseDataset, size: int = DEFAULT_GRID_SIZE) -> "BandwidthGrid":
        """Geometric candidate grid adapted to the dataset.

        The lower endpoint is 1.5 times the median gap between
        consecutive observation times within a subject, the upper
        endpoint half the domain length.  Raises
        :class:`ValidationError` when the data are too sparse for the
        endpoints to be ordered.
        """
        if size < 1:
            raise ValidationError(f"grid size must be at least 1, got {size}")
        gaps = np.concatenate([np.diff(np.sort(s.times))
                               for s in dataset.subjects if s.size >= 2] or
                              [np.empty(0)])
        if gaps.size == 0:
            raise ValidationError(
                "no subject has two observations; cannot infer a bandwidth range")
        lo = 1.5 * float(np.median(gaps))
        hi = 0.5 * (dataset.domain[1] - dataset.domain[0])
        if not lo < hi:
            raise ValidationError(
                f"default bandwidth range is empty: 1.5 * median gap = {lo:.3g} "
                f"is not below half the domain length {hi:.3g}; pass an "
                "explicit grid")
        return cls(np.geomspace(lo, hi, size))

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __repr__(self) -> str:
        inner = ", ".join(f"{c:.4g}" for c in self.candidates)
        return f"BandwidthGrid([{inner}])"


def subject_folds(n: int, folds: int, seed=None) -> list:
    """Partition ``n`` subjects into ``folds`` test-index arrays.

    Assignment is round robin in subject order, so folds are
    deterministic for a given dataset.  Passing a seed shuffles the
    subjects first (still deterministically).
    """
    if not 2 <= folds <= n:
        raise ValidationError(
            f"need 2 <= folds <= n subjects, got folds={folds}, n={n}")
    order = np.arange(n)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(n)
    return [np.sort(order[f::folds]) for f in range(folds)]


def select_bandwidth(candidates: np.ndarray, risks: np.ndarray) -> float:
    """Risk-minimizing candidate, ties broken toward the larger
    bandwidth (the smoother fit)."""
    candidates = np.asarray(candidates, dtype=float)
    risks = np.asarray(risks, dtype=float)
    if candidates.shape != risks.shape or candidates.ndim != 1:
        raise ValidationError(
            f"candidates and risks must be matching 1-d arrays, got shapes "
            f"{candidates.shape} and {risks.shape}")
    finite = np.isfinite(risks)
    if not np.any(finite):
        raise ValidationError("no candidate has a finite risk")
    best = np.min(risks[finite])
    return float(candidates[np.flatnonzero(risks == best)[-1]])


@dataclass(frozen=True)
class CvResult:
    """Risk table from a bandwidth search.

    ``failures`` holds one message per candidate (empty string when the
    candidate fit everywhere); failed candidates carry infinite risk and
    never win the selection.
    """

    target: str
    candidates: np.ndarray
    risks: np.ndarray
    h_opt: float
    folds: int
    method: str
    failures: tuple = field(repr=False, default=())

    def export_csv(self, path) -> None:
        """Write the risk table as ``bandwidth,risk,failure`` rows."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bandwidth", "risk", "failure"])
            for h, r, msg in zip(self.candidates, self.risks, self.failures):
                writer.writerow([repr(float(h)), repr(float(r)), msg])

    def __repr__(self) -> str:
        return (f"CvResult(target={self.target!r}, h_opt={self.h_opt:.4g}, "
                f"method={self.method!r}, candidates={len(self.candidates)})")


def _finish(target, grid, risks, failures, folds, method) -> CvResult:
    if not np.any(np.isfinite(risks)):
        log = "; ".join(f"h={h:.4g}: {msg}"
                        for h, msg in zip(grid.candidates, failures))
        raise NumericalError(
            f"all {len(grid)} candidate bandwidths failed the {target} "
            f"search: {log}")
    h_opt = select_bandwidth(grid.candidates, risks)
    return CvResult(target=target, candidates=grid.candidates, risks=risks,
                    h_opt=h_opt, folds=folds, method=method,
                    failures=tuple(failures))


@contextmanager
def _quiet_ordering():
    """Silence the advisory about the covariance bandwidth exceeding the
    mean bandwidth; candidate search is expected to probe that range."""
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*exceeds the mean bandwidth.*",
                                category=UserWarning)
        yield


def _mean_risk(geometry, fit: MeanCurve, held: SparseDataset) -> float:
    total = 0.0
    for sub in held.subjects:
        pts, _ = fit.evaluate(sub.times)
        total += float(np.sum(geometry.dist(pts, sub.points) ** 2))
    return total


def cv_mean(dataset: SparseDataset, grid: BandwidthGrid = None,
            folds: int = DEFAULT_FOLDS, kernel: str = "epanechnikov",
            mean_grid=None, method: str = "kfold", seed=None) -> CvResult:
    """Select the mean bandwidth by subject-level cross-validation.

    For every candidate the mean curve is refit with each fold of
    subjects held out and scored by the summed squared geodesic
    distance between held-out observations and the refitted curve.
    Candidates whose refit fails on any fold are logged and skipped.

    Parameters
    ----------
    dataset : SparseDataset
    grid : BandwidthGrid, optional
        Candidates; defaults to :meth:`BandwidthGrid.default`.
    folds : int
        Number of subject folds, at least 2.
    kernel : str
        Kernel name passed through to the fits.
    mean_grid : array_like, optional
        Time grid for the candidate fits (default the fitter's own).
    method : str
        ``"kfold"`` for cross-validation, ``"gcv"`` for the one-pass
        generalized cross-validation approximation.
    seed : int, optional
        Shuffle subjects before the round-robin fold assignment.

    Returns
    -------
    CvResult
    """
    if grid is None:
        grid = BandwidthGrid.default(dataset)
    geometry = dataset.geometry
    risks = np.full(len(grid), np.inf)
    failures = [""] * len(grid)

    if method == "gcv":
        span = dataset.domain[1] - dataset.domain[0]
        n_obs = int(dataset.sizes().sum())
        k0 = float(kernel_function(kernel)(np.zeros(())))
        for c, h in enumerate(grid):
            df = k0 * span / h
            if df >= n_obs:
                failures[c] = (f"effective degrees of freedom {df:.3g} reach "
                               f"the {n_obs} observations")
                continue
            try:
                fit = fit_mean(dataset, h, grid=mean_grid, kernel=kernel)
            except NumericalError as exc:
                failures[c] = str(exc)
                continue
            rss = _mean_risk(geometry, fit, dataset)
            risks[c] = rss / (1.0 - df / n_obs) ** 2
        return _finish("mean", grid, risks, failures, 0, method)
    if method != "kfold":
        raise ValidationError(f"unknown method {method!r}; expected 'kfold' or 'gcv'")

    fold_sets = subject_folds(dataset.n, folds, seed=seed)
    all_idx = np.arange(dataset.n)
    splits = [(dataset.subset(np.setdiff1d(all_idx, test)), dataset.subset(test))
              for test in fold_sets]
    for c, h in enumerate(grid):
        total = 0.0
        try:
            for train, test in splits:
                fit = fit_mean(train, h, grid=mean_grid, kernel=kernel)
                total += _mean_risk(geometry, fit, test)
        except NumericalError as exc:
            failures[c] = str(exc)
            continue
        risks[c] = total
    return _finish("mean", grid, risks, failures, folds, method)


def _pair_risk(surface, times, z) -> float:
    """Summed squared distance between the fitted covariance and the
    held-out raw pair products of one subject, off-diagonal pairs only."""
    blocks = surface.eval_coeffs(times[None, :], times[:, None])
    raw = z[:, None, :, None] * z[None, :, None, :]
    resid = blocks - raw
    sq = np.sum(resid ** 2, axis=(2, 3))
    np.fill_diagonal(sq, 0.0)
    return float(np.sum(sq))


def cv_cov(dataset: SparseDataset, mean: MeanCurve, grid: BandwidthGrid = None,
           folds: int = DEFAULT_FOLDS, kernel: str = "epanechnikov",
           surface_grid=None, method: str = "kfold", max_failed: float = 0.1,
           seed=None) -> CvResult:
    """Select the covariance bandwidth by subject-level cross-validation.

    The mean curve is fixed (fit it on the full data first); candidate
    surfaces are refit per fold and scored against the held-out raw
    pair products in the fitted frames, summing the squared fiber
    distance over off-diagonal pairs.  The transported observation
    coordinates are computed once and sliced per fold.

    Parameters mirror :func:`cv_mean`; ``surface_grid`` sets the grid
    of the candidate surfaces (default the mean curve's grid) and
    ``max_failed`` is passed through to the surface fits.
    """
    if grid is None:
        grid = BandwidthGrid.default(dataset)
    workspace = SmootherWorkspace(dataset, mean, grid=surface_grid, kernel=kernel)
    risks = np.full(len(grid), np.inf)
    failures = [""] * len(grid)
    starts = workspace.starts
    sizes = dataset.sizes()

    def held_risk(surface, test_idx) -> float:
        total = 0.0
        for i in test_idx:
            if sizes[i] < 2:
                continue
            sl = slice(starts[i], starts[i] + sizes[i])
            total += _pair_risk(surface, workspace.times[sl], workspace.z[sl])
        return total

    if method == "gcv":
        span = dataset.domain[1] - dataset.domain[0]
        n_pairs = int(np.sum(sizes * (sizes - 1)))
        k0 = float(kernel_function(kernel)(np.zeros(())))
        for c, h in enumerate(grid):
            df = (k0 * span / h) ** 2
            if df >= n_pairs:
                failures[c] = (f"effective degrees of freedom {df:.3g} reach "
                               f"the {n_pairs} observation pairs")
                continue
            try:
                with _quiet_ordering():
                    surface = workspace.fit(h, max_failed=max_failed)
            except NumericalError as exc:
                failures[c] = str(exc)
                continue
            rss = held_risk(surface, np.arange(dataset.n))
            risks[c] = rss / (1.0 - df / n_pairs) ** 2
        return _finish("covariance", grid, risks, failures, 0, method)
    if method != "kfold":
        raise ValidationError(f"unknown method {method!r}; expected 'kfold' or 'gcv'")

    fold_sets = subject_folds(dataset.n, folds, seed=seed)
    all_idx = np.arange(dataset.n)
    fold_ws = [workspace.subset(np.setdiff1d(all_idx, test)) for test in fold_sets]
    for c, h in enumerate(grid):
        total = 0.0
        try:
            for test, train_ws in zip(fold_sets, fold_ws):
                with _quiet_ordering():
                    surface = train_ws.fit(h, max_failed=max_failed)
                total += held_risk(surface, test)
        except NumericalError as exc:
            failures[c] = str(exc)
            continue
        risks[c] = total
    return _finish("covariance", grid, risks, failures, folds, method)
