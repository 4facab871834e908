"""Particle-optics model of atom focusing by single and double standing-wave light masks."""

__version__ = "0.1.0"

from .core_model import (
    BASELINE,
    BeamConfig,
    MaskConfig,
    potential,
    potential_gradient,
    saturation_parameter,
)
from .errors import (
    AtomaskError,
    ComputeError,
    ConfigError,
    IoError,
    NoFocus,
    RayError,
    SingularEnergy,
    StepLimitExceeded,
)
from .metrics import (
    DensityHistogram,
    LocalizationCurve,
    ThermalQuadrature,
    averaged_localization_factor,
    deposition_density,
    find_linear_focus,
    localization_curve,
    localization_factor,
    thermal_density,
)
from .optimizer import (
    OptimizationResult,
    SearchSpace,
    minimize_localization,
    nelder_mead,
    scan_intensity_ratio,
)
from .ray_tracer import (
    IntegratorConfig,
    RayState,
    Trajectory,
    oracle_propagate_2d,
    propagate,
    propagate_batch,
)
