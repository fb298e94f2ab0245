"""Sparse manifold-valued samples and their on-disk interchange format.

A dataset is a collection of subjects, each observed at a few time
points inside a common domain.  Files are JSON lines: a header record
carrying the geometry descriptor and domain, then one record per
subject with its id, times, and points (nested lists in the geometry's
ambient shape).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .geometry import Geometry, geometry_from_descriptor

__all__ = ["Subject", "SparseDataset", "read_jsonl", "write_jsonl"]

WEIGHT_SCHEMES = ("obs", "subject")


@dataclass
class Subject:
    """One subject's observations, times sorted ascending."""

    id: str
    times: np.ndarray
    points: np.ndarray

    @property
    def size(self) -> int:
        return len(self.times)


class SparseDataset:
    """Validated collection of sparsely observed curves.

    Parameters
    ----------
    geometry : Geometry
        Model space of the observations.
    subjects : sequence of Subject
        Per-subject observations.  Unsorted times are sorted on entry
        and counted in :attr:`sort_warnings`.
    domain : tuple of float
        Closed observation interval, default ``(0, 1)``.
    weight_scheme : str
        ``"obs"`` weights every observation equally across subjects;
        ``"subject"`` weights every subject equally regardless of its
        number of observations.
    """

    def __init__(self, geometry: Geometry, subjects, domain=(0.0, 1.0),
                 weight_scheme: str = "obs"):
        if weight_scheme not in WEIGHT_SCHEMES:
            raise ValidationError(
                f"unknown weight scheme {weight_scheme!r}; expected one of {WEIGHT_SCHEMES}"
            )
        lo, hi = float(domain[0]), float(domain[1])
        if not lo < hi:
            raise ValidationError(f"domain {domain} is not an increasing interval")
        self.geometry = geometry
        self.domain = (lo, hi)
        self.weight_scheme = weight_scheme
        self.sort_warnings = 0
        self.subjects: list[Subject] = []
        seen = set()
        for sub in subjects:
            times = np.asarray(sub.times, dtype=float)
            points = np.asarray(sub.points, dtype=float)
            if sub.id in seen:
                raise ValidationError(f"duplicate subject id {sub.id!r}")
            seen.add(sub.id)
            if times.ndim != 1 or len(times) == 0:
                raise ValidationError(f"subject {sub.id!r}: times must be a non-empty vector")
            if points.shape != (len(times),) + geometry.ambient_shape:
                raise ValidationError(
                    f"subject {sub.id!r}: points have shape {points.shape}, expected "
                    f"{(len(times),) + geometry.ambient_shape}"
                )
            if not np.all(np.isfinite(times)):
                raise ValidationError(f"subject {sub.id!r}: non-finite times")
            if np.min(times) < lo or np.max(times) > hi:
                raise ValidationError(f"subject {sub.id!r}: times leave the domain {self.domain}")
            order = np.argsort(times, kind="stable")
            if not np.array_equal(order, np.arange(len(times))):
                self.sort_warnings += 1
                times = times[order]
                points = points[order]
            try:
                geometry.check_point(points)
            except ValidationError as exc:
                raise ValidationError(f"subject {sub.id!r}: {exc}") from exc
            self.subjects.append(Subject(str(sub.id), times, points))
        if not self.subjects:
            raise ValidationError("dataset contains no subjects")
        self._flat = None

    # ------------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.subjects)

    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.subjects])

    def mean_weights(self) -> np.ndarray:
        """Per-subject weights for mean estimation, summing against the
        observation counts to one."""
        m = self.sizes()
        if self.weight_scheme == "obs":
            return np.full(self.n, 1.0 / m.sum())
        return 1.0 / (self.n * m.astype(float))

    def cov_weights(self) -> np.ndarray:
        """Per-subject weights for covariance estimation.

        Subjects with fewer than two observations contribute no pairs
        and get weight zero; over the rest the weights sum against the
        ordered pair counts ``m_i (m_i - 1)`` to one.
        """
        m = self.sizes()
        pairs = m * (m - 1)
        eligible = pairs > 0
        nu = np.zeros(self.n)
        if not np.any(eligible):
            return nu
        if self.weight_scheme == "obs":
            nu[eligible] = 1.0 / pairs[eligible].sum()
        else:
            n2 = int(eligible.sum())
            nu[eligible] = 1.0 / (n2 * pairs[eligible].astype(float))
        return nu

    def flat(self):
        """Concatenated observation arrays: (subject index, times, points)."""
        if self._flat is None:
            idx = np.concatenate([np.full(s.size, i) for i, s in enumerate(self.subjects)])
            times = np.concatenate([s.times for s in self.subjects])
            points = np.concatenate([s.points for s in self.subjects])
            self._flat = (idx.astype(int), times, points)
        return self._flat

    def subset(self, indices) -> "SparseDataset":
        """New dataset restricted to the given subject indices."""
        subs = [self.subjects[i] for i in indices]
        out = SparseDataset(self.geometry, subs, self.domain, self.weight_scheme)
        return out

    def __repr__(self) -> str:
        return (f"SparseDataset({self.geometry.descriptor()}, n={self.n}, "
                f"obs={int(self.sizes().sum())})")


def read_jsonl(path) -> SparseDataset:
    """Read a dataset from a JSON-lines file.

    The first record is a header with the geometry descriptor and the
    domain; every following record is one subject.  Malformed lines and
    invalid points raise :class:`ValidationError` naming the offender.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise ValidationError(f"{path}: empty file")
    records = []
    for lineno, ln in enumerate(lines, start=1):
        try:
            records.append(json.loads(ln))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
    header = records[0]
    if "geometry" not in header:
        raise ValidationError(f"{path}: header record lacks a 'geometry' field")
    geometry = geometry_from_descriptor(header["geometry"])
    domain = tuple(header.get("domain", (0.0, 1.0)))
    subjects = []
    for lineno, rec in enumerate(records[1:], start=2):
        if not {"id", "times", "points"} <= rec.keys():
            raise ValidationError(f"{path}:{lineno}: subject record needs id, times, points")
        subjects.append(Subject(str(rec["id"]), np.asarray(rec["times"], dtype=float),
                                np.asarray(rec["points"], dtype=float)))
    weight_scheme = header.get("weights", "obs")
    return SparseDataset(geometry, subjects, domain, weight_scheme)


def write_jsonl(dataset: SparseDataset, path) -> None:
    """Write a dataset in the format understood by :func:`read_jsonl`."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"geometry": dataset.geometry.descriptor(),
                  "domain": list(dataset.domain),
                  "weights": dataset.weight_scheme}
        fh.write(json.dumps(header) + "\n")
        for sub in dataset.subjects:
            rec = {"id": sub.id,
                   "times": sub.times.tolist(),
                   "points": sub.points.tolist()}
            fh.write(json.dumps(rec) + "\n")
