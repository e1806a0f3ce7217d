"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`LfmError`
and carries an ``exit_code`` used by the command-line front end.
"""


class LfmError(Exception):
    exit_code = 1


class ConfigError(LfmError):
    exit_code = 2


class DataError(LfmError):
    """Unparseable input, duplicate timestamps, non-finite samples."""

    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericFailureError(LfmError):
    """A kernel or gradient evaluation produced a non-finite number."""

    exit_code = 4


class IllConditionedError(LfmError):
    """Cholesky failed at every rung of the jitter ladder."""

    exit_code = 4

    def __init__(self, message, jitter_ladder=()):
        super().__init__(message)
        self.jitter_ladder = tuple(jitter_ladder)


class OptimizationFailureError(LfmError):
    exit_code = 5

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class QueryError(LfmError):
    """Unknown channel or latent force, or an invalid query."""

    exit_code = 6


class UnsupportedModelError(LfmError):
    exit_code = 7


class MetricError(LfmError):
    """A metric is undefined for the given input (e.g. single-class AUC)."""

    exit_code = 8


class OracleFailureError(LfmError):
    """Quadrature did not converge to the requested tolerance."""

    exit_code = 9


EXIT_CODES = {
    0: "success",
    1: "unexpected internal error",
    ConfigError.exit_code: "invalid configuration or command line",
    DataError.exit_code: "input data could not be ingested",
    NumericFailureError.exit_code: "numerical failure (non-finite values or ill-conditioned model)",
    OptimizationFailureError.exit_code: "hyperparameter optimization failed",
    QueryError.exit_code: "invalid query (unknown channel or force)",
    UnsupportedModelError.exit_code: "operation not supported by this model",
    MetricError.exit_code: "metric undefined for the given data",
    OracleFailureError.exit_code: "quadrature oracle failed to converge",
}
