"""Open-population spatial capture-recapture workflow.

Survey formatting, mesh construction, maximum-likelihood model fitting with
spline covariates, AIC-guided model selection, model-averaged parametric
bootstrap inference, and simulation-based goodness-of-fit testing.
"""

__version__ = "0.1.0"

from .dataset import SCRData
from .design import ModelSpec, build_param_map, expand_params, invlink, link
from .errors import NumericalError, OpenSCRError, ValidationError
from .likelihood import (
    DensitySurface,
    DetectionField,
    Likelihood,
    StateModel,
    derived_density,
    encounter_rate,
    entry_probs,
    individual_loglik,
    occasion_detection,
    primary_weights,
    state_transitions,
)
from .mesh import Mesh, RasterCovariate, attach_categorical, attach_salinity, build_mesh, distance_matrix
from .splines import SplineBasis, tprs_basis
from .survey import (
    CaptureHistories,
    RobustDesign,
    TrapArray,
    build_design,
    build_histories,
    rasterize_effort,
)

__all__ = [
    "SCRData",
    "ModelSpec",
    "build_param_map",
    "expand_params",
    "invlink",
    "link",
    "NumericalError",
    "OpenSCRError",
    "ValidationError",
    "DensitySurface",
    "DetectionField",
    "Likelihood",
    "StateModel",
    "derived_density",
    "encounter_rate",
    "entry_probs",
    "individual_loglik",
    "occasion_detection",
    "primary_weights",
    "state_transitions",
    "Mesh",
    "RasterCovariate",
    "attach_categorical",
    "attach_salinity",
    "build_mesh",
    "distance_matrix",
    "SplineBasis",
    "tprs_basis",
    "CaptureHistories",
    "RobustDesign",
    "TrapArray",
    "build_design",
    "build_histories",
    "rasterize_effort",
]
