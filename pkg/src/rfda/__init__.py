"""Intrinsic functional data analysis for sparsely observed manifold-valued curves."""

from .exceptions import (
    ConvergenceError,
    ExperimentError,
    GuardError,
    NumericalError,
    RfdaError,
    SingularFitError,
    ValidationError,
    WindowError,
)
from .geometry import (
    Euclidean,
    Frame,
    Geometry,
    SPDAffineInvariant,
    SPDLogCholesky,
    Sphere,
    geometry_from_descriptor,
    random_orthogonal,
    rotate_frame,
)
from .data import SparseDataset, Subject, read_jsonl, write_jsonl
from .simulate import DESIGNS, SimTruth, simulate, snr_calibrate
from .bundle import (
    FiberElement,
    adjoint,
    bundle_inner,
    bundle_transport,
    gnorm,
    holonomy_defect,
    raw_cov,
)
from .mean import (
    LocalWeights,
    MeanCurve,
    default_grid,
    eval_mean,
    fit_mean,
    frechet_minimize,
    local_weights,
)
from .smoother import (
    CovSurface,
    MomentSums,
    NoiseVariance,
    SmootherWorkspace,
    fit_cov_point,
    fit_cov_surface,
    moment_sums,
    noise_variance,
)
from .fpca import (
    DiscretizedOperator,
    EigenSystem,
    Scores,
    blup_scores,
    discretize_operator,
    eigenpairs,
)
from .bandwidth import (
    BandwidthGrid,
    CvResult,
    cv_cov,
    cv_mean,
    select_bandwidth,
    subject_folds,
)
from .metrics import rmuie, rrmise, surface_error_grid
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    rep_seed,
    run_experiment,
)

__version__ = "0.1.0"
