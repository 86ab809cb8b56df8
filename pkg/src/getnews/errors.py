"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data problems exit 2, numeric problems exit 3.
"""


class UsageError(ValueError):
    """Bad command-line arguments or config keys."""


class DataError(ValueError):
    """Malformed input files, checkpoints, or dataset contents."""


class ShapeError(ValueError):
    """Operands with incompatible shapes; message names both shapes."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""
