"""Structure-preserving representation learning on paired modalities, in numpy."""
from .errors import DataError, MSPLError, NumericalError, ShapeError

__version__ = "0.1.0"
