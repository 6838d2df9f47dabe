"""Numerical engine for the Ricci flow on homogeneous spaces, phrased as a
flow on Lie-bracket structure constants."""

from .core import (
    BracketTensor,
    ComponentSplit,
    CompatibilityError,
    HomogeneousPoint,
    InvalidPointError,
    MalformedInputError,
    ValidationReport,
    act_gl,
    act_pi,
    bracket_eval,
    bracket_from_json,
    bracket_to_json,
    component_norms,
    component_split,
    jacobi_residual,
    rescale,
    validate_point,
)
from .curvature import (
    CurvatureReport,
    curvature_report,
    delta_adjoint,
    delta_map,
    killing_operator,
    laplacian_op,
    mean_curvature,
    moment_operator,
    ricci_operator,
)
from .flow import (
    BRACKET_NORM,
    RICCI_NORM,
    SCALAR_CURVATURE,
    UNNORMALIZED,
    VOLUME,
    EventConfig,
    FlowTrajectory,
    GaugeRecord,
    MetricState,
    MetricTrajectory,
    Normalization,
    NormalizationError,
    ValidityDriftError,
    bracket_rhs,
    custom_rate,
    equivalence_report,
    integrate,
    integrate_gauge,
    integrate_metric,
    integrate_reduced,
    metric_rhs,
    normalization_rate,
    normalized_rhs,
    reparametrize,
    rescale_to_ricci_norm,
)
from .analysis import (
    AuditReport,
    DerivationBasis,
    InjectivityBound,
    LimitClassification,
    SolitonDecomposition,
    block_derivations,
    classify_limit,
    derivation_algebra,
    identity_audit,
    injectivity_lower_bound,
    soliton_residual,
)
from .families import (
    Berger3,
    CatalogPoint,
    NoRealizationError,
    ReducedFamilyPoint,
    SemisimpleFamily,
    SemisimpleSu2,
    Unimodular3,
    berger3,
    embed,
    get_family,
    semisimple_concrete_su2,
    semisimple_family,
    unimodular3,
)

__version__ = "0.1.0"
