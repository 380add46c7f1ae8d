"""Exception types raised across the package."""


class PlateauDynError(Exception):
    """Base class for all package errors."""


# spectrum
class NonUnitFractions(PlateauDynError, ValueError):
    pass


class NegativeEigenvalue(PlateauDynError, ValueError):
    pass


class TooSmallN(PlateauDynError, ValueError):
    pass


class DegenerateData(PlateauDynError, ValueError):
    pass


# gauss
class NonPSD(PlateauDynError, ValueError):
    pass


class SingularDenominator(PlateauDynError, ArithmeticError):
    pass


class CollinearZ1Z3(PlateauDynError, ArithmeticError):
    pass


# macro
class IndexOutOfRange(PlateauDynError, IndexError):
    pass


class NonFinite(PlateauDynError, FloatingPointError):
    """State became NaN/Inf during integration."""

    def __init__(self, alpha, message=None):
        self.alpha = alpha
        super().__init__(message or f"non-finite state at alpha={alpha:g}")


# plateau
class TooShort(PlateauDynError, ValueError):
    pass


class DegenerateTerminal(PlateauDynError, ValueError):
    pass


# cli
class InvalidDelta(PlateauDynError, ValueError):
    pass
