"""Small-time expansion toolkit for SDEs driven by fractional Brownian motion.

The package computes the expansion

    E[f(X_t^x)] = f(x) + sum_k t^{2kH} (Gamma_k f)(x) + remainder

for SDEs dX = sum_i V_i(X) dB^i driven by d independent fBm coordinates,
and cross-validates every quantity along at least two independent routes:
closed forms vs quadrature vs Monte Carlo for the operator coefficients,
semigroup evaluation vs pathwise simulation for the expectations.
"""

from .errors import (
    CapabilityError,
    DivergenceError,
    DomainError,
    Error,
    NumericalError,
    ResourceError,
    TruncationError,
)
from .expansion import (
    ExpansionReport,
    InvariantResiduals,
    MeasureSpec,
    ValidationConfig,
    default_test_functions,
    density_on_box,
    expansion_coefficients,
    geometric_grid,
    invariant_residual,
    lebesgue_box,
    point_mass,
    sampler_measure,
    uniform_circle,
    validate_expansion,
)
from .fbm import (
    CovarianceKernel,
    FbmGrid,
    Hurst,
    as_hurst,
    refine_brownian,
    sample_fbm,
    sample_fbm_batch,
    write_grid_csv,
)
from .moments import (
    MomentEstimate,
    PairingCoefficients,
    beta_fn,
    expected_iterated_closed_form,
    expected_iterated_interpolated,
    expected_iterated_wick,
    gamma2_coefficients,
    gaussian_product_moment,
    mc_expected_iterated,
    mc_expected_iterated_many,
    mc_simplex_pair_integral,
    scale_moment,
    simplex_pair_integral,
    wick_pairings,
)
from .operators import (
    OperatorPoly,
    VectorField,
    apply_field,
    apply_operator,
    apply_word,
    build_gamma,
    commutative_gamma,
    is_commuting,
    lie_bracket,
    load_fields,
    load_functions,
)
from .sde import (
    SdeSpec,
    SemigroupValue,
    SolveConfig,
    commutative_expectation,
    estimate_ptf,
    feynman_kac_residual,
    flow_exp,
    optimal_truncation_k,
    semigroup_commutative,
    solve_commutative,
    solve_wong_zakai,
    write_estimate_csv,
    write_trajectory_csv,
)
from .signature import (
    PiecewisePath,
    TensorElement,
    check_chen,
    identity_tensor,
    iterated_integral,
    p_variation_control,
    path_signature,
    segment_signature,
    tensor_mul,
    tensor_norm,
)
from .symbolic import Expr, const, distinct_size, parse_expr, var

__all__ = [
    "Error",
    "DomainError",
    "CapabilityError",
    "ResourceError",
    "NumericalError",
    "DivergenceError",
    "TruncationError",
    "Hurst",
    "as_hurst",
    "CovarianceKernel",
    "FbmGrid",
    "sample_fbm",
    "sample_fbm_batch",
    "refine_brownian",
    "write_grid_csv",
    "TensorElement",
    "PiecewisePath",
    "identity_tensor",
    "segment_signature",
    "path_signature",
    "tensor_mul",
    "tensor_norm",
    "iterated_integral",
    "check_chen",
    "p_variation_control",
    "MomentEstimate",
    "PairingCoefficients",
    "beta_fn",
    "gamma2_coefficients",
    "expected_iterated_closed_form",
    "expected_iterated_wick",
    "expected_iterated_interpolated",
    "mc_expected_iterated",
    "mc_expected_iterated_many",
    "mc_simplex_pair_integral",
    "simplex_pair_integral",
    "gaussian_product_moment",
    "wick_pairings",
    "scale_moment",
    "Expr",
    "parse_expr",
    "const",
    "var",
    "distinct_size",
    "VectorField",
    "OperatorPoly",
    "apply_field",
    "apply_word",
    "apply_operator",
    "lie_bracket",
    "is_commuting",
    "build_gamma",
    "commutative_gamma",
    "load_fields",
    "load_functions",
    "SdeSpec",
    "SolveConfig",
    "SemigroupValue",
    "solve_wong_zakai",
    "solve_commutative",
    "flow_exp",
    "estimate_ptf",
    "semigroup_commutative",
    "optimal_truncation_k",
    "commutative_expectation",
    "feynman_kac_residual",
    "write_trajectory_csv",
    "write_estimate_csv",
    "ValidationConfig",
    "ExpansionReport",
    "expansion_coefficients",
    "validate_expansion",
    "geometric_grid",
    "MeasureSpec",
    "density_on_box",
    "lebesgue_box",
    "point_mass",
    "uniform_circle",
    "sampler_measure",
    "default_test_functions",
    "invariant_residual",
    "InvariantResiduals",
]
