"""Frame-indifferent minimizing-movement solver and diagnostics for Kelvin-Voigt
viscoelastic second-grade materials."""

__version__ = "0.1.0"

from .densities import MaterialParams  # noqa: E402,F401
from .errors import (  # noqa: E402,F401
    InfeasibleStateError, KvError, PropertyViolation, SingularMatrixError, SolverError, ValidationError,
)
from .field import AdmissibleSet, DeformationField, Grid, LoadField  # noqa: E402,F401
from .mms import MmsConfig, Trajectory  # noqa: E402,F401
