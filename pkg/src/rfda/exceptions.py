"""Exception hierarchy for the package.

Two branches matter downstream: :class:`ValidationError` covers malformed
inputs and configuration, while :class:`NumericalError` covers guard
violations and failed fits.  The command line maps the branches to
distinct exit codes (2 and 3 respectively).
"""


class RfdaError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RfdaError):
    """Input data, configuration, or arguments are malformed."""


class NumericalError(RfdaError):
    """A computation failed or left its domain of validity."""


class GuardError(NumericalError):
    """A geometric guard was violated (antipodal points, overlong steps)."""


class WindowError(NumericalError):
    """A kernel window contains too little data to identify a local fit."""


class SingularFitError(NumericalError):
    """A local linear system is numerically singular."""


class ConvergenceError(NumericalError):
    """An iterative routine failed to converge."""


class ExperimentError(NumericalError):
    """Too many replicates of an experiment failed."""
