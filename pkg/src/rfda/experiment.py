"""Monte Carlo experiment harness.

A configuration names a simulation design and a bandwidth policy; the
harness repeats simulate, fit the mean, fit the covariance surface, and
score against the generating truth, then aggregates the per-replicate
error metrics into a report.  Replicates draw independent seeds from a
master seed, can run in worker processes, and pin the linear algebra
libraries to one thread each so the emitted numbers do not depend on
the host's thread count.
"""

import csv
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from functools import partial

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - present in the supported env
    threadpool_limits = None

from .bandwidth import BandwidthGrid, cv_cov, cv_mean
from .exceptions import ExperimentError, NumericalError, ValidationError
from .mean import fit_mean
from .metrics import rmuie, rrmise
from .simulate import DESIGNS, simulate
from .smoother import fit_cov_surface

CSV_HEADER = ["design", "n", "m", "rep", "rmuie", "rrmise", "h_mu", "h_cov",
              "seconds"]
MAX_FAILED_FRACTION = 0.05


def _single_thread():
    if threadpool_limits is None:
        return nullcontext()
    return threadpool_limits(limits=1)


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of a simulation table.

    ``policy`` is either ``"fixed"`` (supply ``h_mu`` and ``h_cov``) or
    ``"cv"`` (per-replicate cross-validated bandwidths, scored on a
    coarser grid of ``cv_grid_size`` points for speed).  ``grid_size``
    sets the evaluation grid of the fitted mean and surface, and with
    it the quadrature of the error metrics.
    """

    design: str
    n: int
    m: float
    reps: int
    seed: int = 0
    snr: float = 5.0
    policy: str = "fixed"
    h_mu: float = None
    h_cov: float = None
    grid_size: int = 51
    cv_grid_size: int = 26
    folds: int = 5
    candidates: int = 8
    weight_scheme: str = "obs"
    record_timing: bool = False

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValidationError(
                f"unknown design {self.design!r}; expected one of {DESIGNS}")
        if self.n < 1 or self.reps < 1:
            raise ValidationError("need n >= 1 subjects and reps >= 1")
        if self.m < 0:
            raise ValidationError("observation rate must be non-negative")
        if self.grid_size < 2 or self.cv_grid_size < 2:
            raise ValidationError("grids need at least 2 points")
        if self.policy == "fixed":
            if self.h_mu is None or self.h_cov is None or \
                    not (self.h_mu > 0 and self.h_cov > 0):
                raise ValidationError(
                    "fixed bandwidth policy needs positive h_mu and h_cov")
        elif self.policy != "cv":
            raise ValidationError(
                f"unknown bandwidth policy {self.policy!r}; expected "
                "'fixed' or 'cv'")


def rep_seed(master: int, rep: int) -> int:
    """Independent per-replicate seed derived from the master seed."""
    return int(np.random.SeedSequence(entropy=[int(master), int(rep)])
               .generate_state(1, np.uint64)[0])


def _run_rep(config: ExperimentConfig, rep: int) -> dict:
    start = time.perf_counter()
    try:
        with _single_thread():
            dataset, truth = simulate(
                config.design, config.n, config.m, snr=config.snr,
                seed=rep_seed(config.seed, rep),
                weight_scheme=config.weight_scheme)
            grid = np.linspace(dataset.domain[0], dataset.domain[1],
                               config.grid_size)
            if config.policy == "cv":
                cands = BandwidthGrid.default(dataset, size=config.candidates)
                cv_grid = np.linspace(dataset.domain[0], dataset.domain[1],
                                      config.cv_grid_size)
                h_mu = cv_mean(dataset, cands, folds=config.folds,
                               mean_grid=cv_grid).h_opt
            else:
                h_mu = config.h_mu
            mean = fit_mean(dataset, h_mu, grid=grid)
            if config.policy == "cv":
                h_cov = cv_cov(dataset, mean, cands, folds=config.folds,
                               surface_grid=cv_grid).h_opt
            else:
                h_cov = config.h_cov
            with warnings.catch_warnings():
                warnings.filterwarnings(
                    "ignore", message=".*exceeds the mean bandwidth.*",
                    category=UserWarning)
                surface = fit_cov_surface(dataset, mean, h_cov, grid=grid)
            out = {
                "rep": rep,
                "rmuie": 100.0 * rmuie(surface, truth),
                "rrmise": 100.0 * rrmise(surface, truth),
                "h_mu": float(h_mu),
                "h_cov": float(h_cov),
            }
    except NumericalError as exc:
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}
    out["seconds"] = time.perf_counter() - start if config.record_timing else 0.0
    return out


@dataclass(frozen=True)
class ExperimentReport:
    """Aggregated replicate metrics for one configuration.

    Per-replicate arrays hold successful replicates only (in replicate
    order); ``failures`` pairs each failed replicate index with its
    error message.  Metric values are percentages; the summary
    statistics are the across-replicate mean and sample standard
    deviation, both recomputable from the per-replicate values.
    """

    design: str
    n: int
    m: float
    reps: int
    policy: str
    rep_ids: np.ndarray
    rmuie: np.ndarray
    rrmise: np.ndarray
    h_mu: np.ndarray
    h_cov: np.ndarray
    seconds: np.ndarray
    rmuie_mean: float
    rmuie_sd: float
    rrmise_mean: float
    rrmise_sd: float
    elapsed: float
    failures: tuple = field(default=(), repr=False)

    def export_csv(self, path) -> None:
        """Write one row per successful replicate, metrics in percent."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for i, rep in enumerate(self.rep_ids):
                writer.writerow([
                    self.design, int(self.n), repr(float(self.m)), int(rep),
                    repr(float(self.rmuie[i])), repr(float(self.rrmise[i])),
                    repr(float(self.h_mu[i])), repr(float(self.h_cov[i])),
                    repr(float(self.seconds[i])),
                ])

    def summary(self) -> str:
        return (f"{self.design} n={self.n} m={self.m:g} "
                f"reps={len(self.rep_ids)}/{self.reps} [{self.policy}]: "
                f"rMUIE {self.rmuie_mean:.2f}% (SD {self.rmuie_sd:.2f}), "
                f"rRMISE {self.rrmise_mean:.2f}% (SD {self.rrmise_sd:.2f})")


def _aggregate(vals: np.ndarray) -> tuple:
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return mean, sd


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    """Run all replicates of a configuration and aggregate the metrics.

    Replicates are independent and may run in ``jobs`` worker
    processes; results are always reduced in replicate order, so the
    report does not depend on scheduling.  Replicate failures are
    collected, and more than 5% of them abort the run.

    The reported spread is the standard deviation across replicates,
    not the standard error of the mean; divide by sqrt(reps) for the
    latter.
    """
    if jobs < 1:
        raise ValidationError(f"jobs must be at least 1, got {jobs}")
    start = time.perf_counter()
    reps = list(range(config.reps))
    if jobs == 1:
        rows = [_run_rep(config, rep) for rep in reps]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(partial(_run_rep, config), reps))
    rows.sort(key=lambda r: r["rep"])
    failures = tuple((r["rep"], r["error"]) for r in rows if "error" in r)
    good = [r for r in rows if "error" not in r]
    if len(failures) > MAX_FAILED_FRACTION * config.reps:
        detail = "; ".join(f"rep {rep}: {msg}" for rep, msg in failures[:5])
        raise ExperimentError(
            f"{len(failures)} of {config.reps} replicates failed "
            f"(tolerated fraction {MAX_FAILED_FRACTION}): {detail}")
    cols = {key: np.array([r[key] for r in good])
            for key in ("rep", "rmuie", "rrmise", "h_mu", "h_cov", "seconds")}
    rmuie_mean, rmuie_sd = _aggregate(cols["rmuie"])
    rrmise_mean, rrmise_sd = _aggregate(cols["rrmise"])
    return ExperimentReport(
        design=config.design, n=config.n, m=config.m, reps=config.reps,
        policy=config.policy, rep_ids=cols["rep"], rmuie=cols["rmuie"],
        rrmise=cols["rrmise"], h_mu=cols["h_mu"], h_cov=cols["h_cov"],
        seconds=cols["seconds"], rmuie_mean=rmuie_mean, rmuie_sd=rmuie_sd,
        rrmise_mean=rrmise_mean, rrmise_sd=rrmise_sd,
        elapsed=time.perf_counter() - start, failures=failures)
