"""Exception hierarchy shared by the library and the CLI.

The CLI maps each class onto a process exit code.
"""


class MSPLError(Exception):
    exit_code = 1


class ShapeError(MSPLError, ValueError):
    """Operand shapes are incompatible with an operation's shape rule."""

    exit_code = 1


class DataError(MSPLError, ValueError):
    """Input data is malformed, inconsistent, or out of range."""

    exit_code = 2


class NumericalError(MSPLError, ArithmeticError):
    """A NaN/Inf appeared where finite values are required."""

    exit_code = 3
