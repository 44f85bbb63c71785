"""equiaudit: measure whether a continuous CNN's features survive 2D linear
transforms of its input, with explicit residuals, tolerances, and
counterexample certificates."""

from .errors import (
    DomainFitError,
    EquiauditError,
    FormatError,
    GeometryMismatchError,
    InvalidModelError,
    NoCounterexampleError,
    ResolutionWarning,
    SingularMapError,
    TransformClassError,
)
from .grid import (
    FeatureStack,
    Grid,
    GridGeometry,
    SupportEstimate,
    distance,
    embed,
    interior_mask,
    make_bump,
    pairwise_sum,
    refine,
    render,
    resample_affine,
    subsample,
    support_estimate,
    translate,
    zeros,
)
from .gridio import load_grid2, load_pgm16, save_grid2, save_pgm16
from .transform import (
    LinearMap2,
    TransformClass,
    alignment_admits_invariance,
    classify,
    iterate,
    parse_transform,
)
from .conv import (
    CnnModel,
    ConvLayer,
    Filter,
    Nonlinearity,
    build_model,
    convolve,
    elliptic_ring_filter,
    embed_filter,
    filter_from_grid,
    gaussian_filter,
    impulse_filter,
    layer_forward,
    load_model,
    model_forward,
    model_forward_stages,
    model_from_json,
    model_to_json,
    n_fold_symmetrize,
    radial_filter,
    random_blob_filter,
    random_radial_filter,
    receptive_radius,
    refine_filter,
    refine_model,
    ring_filter,
    save_model,
    smooth_window,
    transform_filter,
)
from .generator import (
    ContractionStep,
    GeneratorRecord,
    OperatorHandle,
    conjugate_operator,
    constant_operator,
    contraction_sequence,
    convolution_operator,
    estimate_semilocal_radius,
    generator_eval,
    global_average_operator,
    identity_operator,
    is_nonconstant,
    model_channel_operator,
    operator_from_generator,
)
from .audit import (
    AlignmentReport,
    AuditResult,
    AuditSettings,
    CounterexampleCertificate,
    ResidualCurve,
    alignment_residual,
    commutation_check,
    filter_fixed_point_residual,
    fit_rate,
    full_paper_audit,
    generator_invariance_residual,
    glyph,
    make_corpus,
    mollifier_recover_filter,
    naturality_check,
    norot_counterexample,
    tolerance,
)

__version__ = "0.1.0"
