class IvBoundsError(Exception):
    exit_code = 1


class ConfigError(IvBoundsError):
    exit_code = 2


class DataError(IvBoundsError):
    exit_code = 3


class NumericError(IvBoundsError):
    exit_code = 4


class SharpnessError(NumericError):
    def __init__(self, lower_gap, upper_gap, tol):
        super().__init__(
            f"closed form and LP disagree: {lower_gap=:.3e} {upper_gap=:.3e} {tol=:.1e}"
        )
        self.lower_gap = lower_gap
        self.upper_gap = upper_gap
        self.tol = tol
