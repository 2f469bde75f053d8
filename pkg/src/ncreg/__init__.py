"""Neural cortical maps and rigid spherical registration."""

__version__ = "0.1.0"

from .exceptions import (
    DegenerateGeometryError,
    DegenerateParameterError,
    FormatError,
    MeshNotClosedError,
    NCRegError,
    NumericFaultError,
    ShapeError,
    UndefinedStatisticError,
    UnsupportedFormatError,
)
from .fields import MeshField, NeuralField, RotatedField, as_field
from .geometry import (
    FaceLocator,
    SphericalMesh,
    barycentric_interpolate,
    locate_face,
    make_icosphere,
    sample_faces_and_points,
    sample_simplex,
    sample_sphere_uniform,
)
from .metrics import AlignmentReport, dice_score, feature_mse_pcc, transfer_labels
from .neural_field import NeuralCorticalMap, evaluate_fit_fidelity, regression_fidelity
from .registration import (
    EulerGridOracle,
    NCReg,
    RegistrationResult,
    brute_force_oracle,
    energy,
    energy_gradient,
    interp_reg,
    nc_reg,
    sa_reset,
)
from .rotations import Rotation, dist_R, dist_R_deg, make_perturbation, rotate_point_jacobian, sample_rotation, to_rotation
