"""Online learning in two-layer student-teacher networks with correlated inputs.

Modules: :mod:`spectrum` (input eigenvalue spectra), :mod:`gauss` (Gaussian
expectations of erf units), :mod:`micro` (SGD simulator), :mod:`macro`
(order-parameter ODEs), :mod:`plateau` (plateau detection), :mod:`cli`.
"""
__version__ = "0.1.0"

from .errors import PlateauDynError  # noqa: E402
from .spectrum import EigenSpectrum, new_spectrum, parse_spectrum  # noqa: E402
from .state import OrderParameterState, Trajectory  # noqa: E402
from .plateau import PlateauParams, PlateauReport, detect_plateau  # noqa: E402

__all__ = ["__version__", "PlateauDynError", "EigenSpectrum", "new_spectrum", "parse_spectrum",
           "OrderParameterState", "Trajectory", "PlateauParams", "PlateauReport", "detect_plateau"]
