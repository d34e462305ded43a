"""Gaussian-process motor-current models and residual-based collision
detection for a simulated two-link manipulator."""

from .detector import (
    DetectionEvent,
    MonitoringSignal,
    ThresholdConfig,
    calibrate_threshold,
    detect,
    monitoring_signal,
    residual_signal,
    segment_events,
)
from .dynamics import (
    DEFAULT_VELOCITY_BAND,
    DynamicParams,
    FrictionParams,
    MotorParams,
    PlanarTwoLinkArm,
    forward_dynamics,
    friction_torque,
    regressor_columns,
)
from .estimators import (
    ParametricCurrentModel,
    SemiParametricCurrentModel,
    build_estimator,
    load_estimator,
    nmse,
    save_estimator,
)
from .features import (
    FeatureScaler,
    RegressorRow,
    augmented_features,
    regressor_matrix,
    regressor_row,
    standard_features,
)
from .gp import (
    ExactGPRegressor,
    OptimizerConfig,
    negative_mll,
    optimize_hyperparameters,
    subset_downsample,
)
from .kernels import (
    GatedKernel,
    Kernel,
    LinearKernel,
    RBFKernel,
    SumKernel,
    VelocityGate,
    gram,
    kernel_from_dict,
    pair_value,
)
from .simulate import (
    ControllerParams,
    Plant,
    Reference,
    SimConfig,
    generate_dataset,
    simulate_trajectory,
)
from .trajectory import JointSample, Trajectory

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_VELOCITY_BAND",
    "ControllerParams",
    "DetectionEvent",
    "DynamicParams",
    "ExactGPRegressor",
    "FeatureScaler",
    "FrictionParams",
    "GatedKernel",
    "JointSample",
    "Kernel",
    "LinearKernel",
    "MonitoringSignal",
    "MotorParams",
    "OptimizerConfig",
    "ParametricCurrentModel",
    "PlanarTwoLinkArm",
    "Plant",
    "RBFKernel",
    "Reference",
    "RegressorRow",
    "SemiParametricCurrentModel",
    "SimConfig",
    "SumKernel",
    "ThresholdConfig",
    "Trajectory",
    "VelocityGate",
    "augmented_features",
    "build_estimator",
    "calibrate_threshold",
    "detect",
    "forward_dynamics",
    "friction_torque",
    "generate_dataset",
    "gram",
    "kernel_from_dict",
    "load_estimator",
    "monitoring_signal",
    "negative_mll",
    "nmse",
    "optimize_hyperparameters",
    "pair_value",
    "regressor_columns",
    "regressor_matrix",
    "regressor_row",
    "residual_signal",
    "save_estimator",
    "segment_events",
    "simulate_trajectory",
    "standard_features",
    "subset_downsample",
]
