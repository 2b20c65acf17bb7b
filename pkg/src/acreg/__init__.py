"""Diffeomorphic registration of tissue segmentation maps.

Deformations are parameterized by stationary velocity fields integrated with
scaling and squaring, estimated per pair by gradient descent on a localized
NCC similarity with velocity-gradient and tissue-aware Jacobian regularizers,
and refined over several auto-context iterations whose incremental fields are
composed into one final deformation.
"""

from .autocontext import (
    AutoContextConfig,
    IterationDiagnostics,
    RegistrationResult,
    register_auto_context,
)
from .errors import (
    DivergenceError,
    GridMismatchError,
    InvalidInputError,
    UndefinedMetricError,
    VolumeFormatError,
)
from .estimator import AutoContextRegistration
from .loss import (
    LossBreakdown,
    LossWeights,
    jacobian_reg,
    loss_and_gradient,
    loss_gradient,
    total_loss,
    velocity_reg,
)
from .metrics import (
    TissueJacobianStats,
    dice,
    local_ncc,
    mean_tissue_dice,
    rfp,
    tissue_jacobian_stats,
)
from .nifti import read_volume, write_volume
from .optimizer import OptimizerConfig, TraceEntry, estimate_velocity
from .phantom import PhantomSpec, make_pair, make_phantom_labels, make_synthetic_svf
from .transform import (
    DisplacementField,
    VelocityField,
    compose,
    integrate_svf,
    integrate_svf_euler,
    jacobian_determinant,
    warp_labels,
    warp_scalar,
    warp_soft,
    zero_displacement,
)
from .volume import (
    GridMeta,
    LabelVolume,
    ScalarVolume,
    SoftTissueMap,
    one_hot_soft,
    resample_level,
    sample_nearest,
    sample_trilinear,
)

__version__ = "0.1.0"

__all__ = [
    "AutoContextConfig",
    "AutoContextRegistration",
    "DisplacementField",
    "DivergenceError",
    "GridMeta",
    "GridMismatchError",
    "InvalidInputError",
    "IterationDiagnostics",
    "LabelVolume",
    "LossBreakdown",
    "LossWeights",
    "OptimizerConfig",
    "PhantomSpec",
    "RegistrationResult",
    "ScalarVolume",
    "SoftTissueMap",
    "TissueJacobianStats",
    "TraceEntry",
    "UndefinedMetricError",
    "VelocityField",
    "VolumeFormatError",
    "compose",
    "dice",
    "estimate_velocity",
    "integrate_svf",
    "integrate_svf_euler",
    "jacobian_determinant",
    "jacobian_reg",
    "local_ncc",
    "loss_and_gradient",
    "loss_gradient",
    "make_pair",
    "make_phantom_labels",
    "make_synthetic_svf",
    "mean_tissue_dice",
    "one_hot_soft",
    "read_volume",
    "register_auto_context",
    "resample_level",
    "rfp",
    "sample_nearest",
    "sample_trilinear",
    "tissue_jacobian_stats",
    "total_loss",
    "velocity_reg",
    "warp_labels",
    "warp_scalar",
    "warp_soft",
    "write_volume",
    "zero_displacement",
]
