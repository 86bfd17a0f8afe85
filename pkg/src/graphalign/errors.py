"""Exception types raised across the alignment pipeline."""


class AlignmentError(Exception):
    """Base class for all errors raised by :mod:`graphalign`."""


class ParseError(AlignmentError, ValueError):
    """Malformed line in one of the text input formats."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class RangeError(AlignmentError, ValueError):
    pass


class ShapeError(AlignmentError, ValueError):
    pass


class DegeneratePriorError(AlignmentError, ValueError):
    """An alignment matrix carries no mass, so no marginals can be derived."""


class NumericalError(AlignmentError, ArithmeticError):
    pass


class GradientError(AlignmentError):
    """Analytic and finite-difference gradients disagree."""


class SizeError(AlignmentError, ValueError):
    pass
