"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A distribution or model parameter lies outside its domain."""


class NumericError(ArithmeticError):
    """A density or update produced +inf or NaN."""


class DegenerateDensityError(NumericError):
    """Every grid evaluation of a log-density was -inf."""


class NoThresholdError(ValueError):
    """The thresholding equation has no root in the search bracket."""


class UndefinedRatioError(ZeroDivisionError):
    """A shrinkage ratio was requested for an observation equal to zero."""


class ChainFailure(RuntimeError):
    """A Gibbs chain produced non-finite values.

    Carries the sweep index and the first offending coordinate so that
    experiment grids can record the failure instead of dropping it.
    """

    def __init__(self, sweep, coordinate, message="non-finite state"):
        self.sweep = sweep
        self.coordinate = coordinate
        super().__init__(f"{message} at sweep {sweep}, coordinate {coordinate}")
