"""Exception types shared across the package.

Everything raised intentionally by fairshift derives from FairshiftError so
callers (and the CLI) can separate data/configuration problems from bugs.
"""


class FairshiftError(Exception):
    """Base class for all errors raised deliberately by this package."""


class SchemaError(FairshiftError):
    """A schema file is malformed or does not match the CSV it describes."""


class DataError(FairshiftError):
    """Input data is unusable: empty, non-finite, degenerate, or mis-sized."""


class DegenerateGroupError(DataError):
    """A protected group is empty or has (near-)zero estimated mass."""


class DomainError(FairshiftError):
    """A numeric argument lies outside its admissible domain."""


class NumericalError(FairshiftError):
    """A non-finite value appeared where a finite one is required."""


class DivergenceError(NumericalError):
    """Gradient descent diverged; a smaller initial learning rate may help."""


class ConvergenceWarningFlag:
    """Marker strings recorded on results when something soft went wrong."""

    MAX_ITERS = "max_iters_reached"
    NO_BRACKET = "mu_no_bracket"
    SINGLETON_CI = "single_repetition_ci"
    UNDEFINED_TPR = "undefined_tpr"
