"""Exception types shared by the factorization and Riccati routines."""


class HyhError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(HyhError, ValueError):
    pass


class NotPositiveDefinite(HyhError, ArithmeticError):
    """A Cholesky pivot was not strictly positive.

    ``index`` is the offending pivot (column) index, ``stage`` the Riccati
    stage when raised from the recursion.
    """

    def __init__(self, index, stage=None, pivot=None):
        self.index = index
        self.stage = stage
        self.pivot = pivot
        where = f"pivot {index}" if stage is None else f"stage {stage}, pivot {index}"
        super().__init__(f"matrix is not positive definite ({where}, value {pivot!r})")


class SingularTriangular(HyhError, ArithmeticError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"triangular matrix has a zero diagonal entry at {index}")


class IndefiniteUpdate(HyhError, ArithmeticError):
    """The updated matrix L L^T + A S A^T is not positive definite.

    Raised at the first failing column; the in-place buffers are left in an
    unspecified state.
    """

    def __init__(self, index, stage=None):
        self.index = index
        self.stage = stage
        where = f"column {index}" if stage is None else f"stage {stage}, column {index}"
        super().__init__(f"update leaves the matrix indefinite ({where})")


class DegeneratePivot(HyhError, ArithmeticError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"reflector pivot beta vanished at column {index}")


class GenerationFailed(HyhError, RuntimeError):
    pass
