"""Structure-preserving thermal quasi-geostrophic simulation on the sphere.

The sphere is discretized by the Zeitlin truncation: real fields become
skew-hermitian N x N matrices, the Poisson bracket becomes a scaled
commutator, and the dynamics is advanced by a Casimir-preserving midpoint
scheme for the semidirect-product Lie-Poisson structure.
"""

from .errors import (
    ConfigError,
    FormatError,
    InvalidFieldError,
    InvalidSizeError,
    IoError,
    LockedError,
    NumericError,
    StepFailure,
    TqgError,
)
from .integrator import StepReport, integrate, step
from .model import (
    Bathymetry,
    DiagnosticsRecord,
    SimConfig,
    StaticData,
    TqgState,
    assemble_static,
    builtin_bathymetry,
    casimirs,
    hamiltonian,
    helmholtz_filter,
    helmholtz_solve,
    random_initial_state,
    rhs,
    source_current,
)
from .quantization import (
    MatrixHarmonicsBasis,
    build_basis,
    jordan_product,
    laplacian_apply,
    project,
    reconstruct,
    scaled_commutator,
    su2_generators,
)
from .sphere import SphereField, evaluate_on_grid

__version__ = "0.1.0"

__all__ = [
    "Bathymetry", "ConfigError", "DiagnosticsRecord", "FormatError", "InvalidFieldError",
    "InvalidSizeError", "IoError", "LockedError", "MatrixHarmonicsBasis", "NumericError",
    "SimConfig", "SphereField", "StaticData", "StepFailure", "StepReport", "TqgError", "TqgState",
    "assemble_static", "build_basis", "builtin_bathymetry", "casimirs", "evaluate_on_grid",
    "hamiltonian", "helmholtz_filter", "helmholtz_solve", "integrate", "jordan_product",
    "laplacian_apply", "project", "random_initial_state", "reconstruct", "rhs",
    "scaled_commutator", "source_current", "step", "su2_generators",
]
