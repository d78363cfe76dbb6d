"""Observability-gramian PMU placement and dynamic state estimation."""

from .model import (
    InputVector,
    MachineParams,
    ModelOrder,
    PlacementMask,
    SystemCase,
    TerminalConditions,
    Trajectory,
    bundled_case,
    case_hash,
    dynamics_rhs,
    euler_step,
    full_outputs,
    initialize_equilibrium,
    load_case,
    output_map,
    simulate,
)
from .gramian import (
    Gramian,
    LinearSystem,
    PerturbationScheme,
    assemble_gramian,
    bundled_linear_system,
    empirical_gramian,
    gramian_from_outputs,
    per_generator_gramians,
    save_gramian_csv,
)
from .measures import (
    MeasureKind,
    MeasureValue,
    all_measures,
    condition_number,
    evaluate,
    log_det,
    min_eigenvalue,
    recip_condition,
    trace,
)
from .placement import (
    AdaptiveDecision,
    PlacementResult,
    adaptive_placement,
    exhaustive_search,
    greedy_search,
    local_swap_search,
    optimize,
    random_placement,
)
from .dse import (
    EstimationResult,
    NoiseModel,
    Scenario,
    StudyReport,
    avg_rotor_angle_error,
    convergent_angle_count,
    generate_scenario,
    run_validation_study,
    simulate_scenario,
    srukf_run,
)

__version__ = "0.1.0"
