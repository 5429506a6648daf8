"""Exception types raised across the package.

The CLI maps them to exit codes: configuration problems exit with 2,
numerical aborts with 3.
"""


class PwfnError(Exception):
    """Base class for every error raised by the package"""


class ConfigError(PwfnError):
    """Invalid configuration, override or dataset shape"""


class ShapeError(PwfnError, ValueError):
    """Matrix shapes disagree"""

    def __init__(self, operation, left_shape, right_shape):
        self.operation = operation
        self.left_shape = tuple(left_shape)
        self.right_shape = tuple(right_shape)
        super().__init__(
            f'{operation}: shape mismatch between {self.left_shape} and {self.right_shape}'
        )


class NumericalError(PwfnError):
    """Non-finite loss or values produced during training"""


class ClusteringError(NumericalError):
    """Fix round could not complete (escalation past the codebook cap)"""


class CodebookError(ConfigError):
    """Invalid base set or a codebook that would be too large"""


class CheckpointError(PwfnError):
    """Unreadable or corrupt checkpoint file"""


class ReportError(PwfnError):
    """Report requested without the data it needs"""
