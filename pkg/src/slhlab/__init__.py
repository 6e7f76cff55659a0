"""slhlab: algebra and simulation for measurement-feedback quantum stochastic models.

Dense operator algebra on truncated Hilbert spaces, SLH-triple composition,
a numeric quantum Ito calculus, record-controlled coefficient builders,
homodyne/photon-counting trajectory ensembles, collision-model dilation
checks of the structural theorems, and the closed-form linear feedback
cavity that serves as the simulator's oracle.
"""

__version__ = "0.1.0"

from .control import (
    AffineCoefficients,
    ControlRecord,
    Convolution,
    GenericCoefficients,
    Nonlinear,
    Pid,
    Proportional,
    coupling_feedback,
    hamiltonian_feedback,
    modulate,
    pid_coefficients,
    static_coefficients,
)
from .dilation import (
    CollisionConfig,
    build_controlled_unitary,
    check_nondemolition,
    check_picture_equivalence,
    check_quadrature_consistency,
)
from .ito import (
    ItoExpr,
    ItoIncrement,
    coisometry_defect,
    generator_from_slh,
    heisenberg_increment,
    isometry_defect,
    ito_product,
)
from .linear import LinearModel, build as build_linear_model
from .operators import (
    HilbertSpace,
    Operator,
    adjoint,
    annihilator,
    coherent_state,
    commutator,
    creation,
    embed,
    expm,
    fock_state,
    identity,
    is_hermitian,
    is_unitary,
    number_op,
    tensor,
    zero,
)
from .slh import (
    SLHTriple,
    concatenate,
    lindbladian,
    output_increment,
    quadrature_output_increment,
    series_product,
    validate,
)
from .trajectories import (
    EnsembleResult,
    SimConfig,
    TrajectoryOutput,
    ensemble,
    simulate_counting,
    simulate_homodyne,
)

__all__ = [
    "AffineCoefficients",
    "CollisionConfig",
    "ControlRecord",
    "Convolution",
    "EnsembleResult",
    "GenericCoefficients",
    "HilbertSpace",
    "ItoExpr",
    "ItoIncrement",
    "LinearModel",
    "Nonlinear",
    "Operator",
    "Pid",
    "Proportional",
    "SLHTriple",
    "SimConfig",
    "TrajectoryOutput",
    "adjoint",
    "annihilator",
    "build_controlled_unitary",
    "build_linear_model",
    "check_nondemolition",
    "check_picture_equivalence",
    "check_quadrature_consistency",
    "coherent_state",
    "coisometry_defect",
    "commutator",
    "concatenate",
    "coupling_feedback",
    "creation",
    "embed",
    "ensemble",
    "expm",
    "fock_state",
    "generator_from_slh",
    "hamiltonian_feedback",
    "heisenberg_increment",
    "identity",
    "is_hermitian",
    "is_unitary",
    "isometry_defect",
    "ito_product",
    "lindbladian",
    "modulate",
    "number_op",
    "output_increment",
    "pid_coefficients",
    "quadrature_output_increment",
    "series_product",
    "simulate_counting",
    "simulate_homodyne",
    "static_coefficients",
    "tensor",
    "validate",
    "zero",
    "__version__",
]
