"""wclab: wave cones, laminates, and two-state rigidity experiments for
constant-coefficient differential operators on periodic grids."""

from .operators import (
    DifferentialOperator,
    MultiIndex,
    OperatorSpecError,
    catalog,
    full_symbol,
    parse_operator,
    principal_symbol,
    render_operator,
)
from .wavecone import SphereSearchResult, ellipticity_constant, in_wave_cone, symbol_gap
from .fields import (
    PeriodicField,
    PeriodicGrid,
    convergence_in_measure_metric,
    dist_to_states,
    equiintegrability_profile,
    l1_norm,
    l2_norm,
    laminate_field,
    read_field,
    sobolev_norm,
    snap_to_states,
    state_fraction,
    weak_l1_quasinorm,
    write_field,
)
from .spectral import (
    FrequencyKernelCache,
    afree_project,
    apply_operator,
    commutator,
    commutator_order_probe,
    kernel_cache,
    multiplier_T,
    multiplier_T1,
    multiplier_T2,
    multiplier_T3,
    multiplier_T5,
    residual_negative_norm,
)
from .lab import (
    ExperimentReport,
    TwoStateProblem,
    alternating_projection_run,
    approximate_sequence_check,
    calibrate_thresholds,
    generate_afree_noise,
    reference_problems,
    two_state_objective,
    vanishing_rhs_experiment,
)

__version__ = "0.1.0"
