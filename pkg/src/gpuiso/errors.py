"""Exception hierarchy shared by every module.

The CLI maps these onto its fixed exit codes, so each class carries the
code it should produce.
"""


class GpuIsoError(Exception):
    exit_code = 1


class ConfigError(GpuIsoError):
    """Unknown device/model/partition, malformed scenario or registry."""

    exit_code = 2


class UnsupportedRegime(ConfigError):
    pass


class InvalidSize(ConfigError):
    pass


class DomainError(GpuIsoError, ValueError):
    """An argument outside the domain of a numeric operation."""

    exit_code = 2


class CalibrationError(GpuIsoError):
    exit_code = 2

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BatchError(GpuIsoError):
    """The executor failed while a timed batch was running."""

    exit_code = 3


class SearchFailed(GpuIsoError):
    exit_code = 3


class ResultsError(GpuIsoError):
    """A results directory could not be parsed."""

    exit_code = 4


class ExpectationFailed(GpuIsoError):
    exit_code = 5
