"""Integer points on rational quadrics approximating boundary directions."""

from .approx import Constant, CuspSpec, Direction, LogPower, PowerLaw, Tabulated, parse_psi
from .forms import HyperbolicBasis, QuadraticForm, hyperbolic_basis

__version__ = "0.1.0"

__all__ = [
    "Constant", "CuspSpec", "Direction", "LogPower", "PowerLaw", "Tabulated", "parse_psi",
    "HyperbolicBasis", "QuadraticForm", "hyperbolic_basis",
]
