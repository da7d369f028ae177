"""Modeling, control allocation, and flight simulation for rotating-arm multirotors.

The library covers three layers:

- geometry and hover-efficiency analysis of arm configurations,
- per-tick control allocation (warm-started Newton-KKT solver and a
  pseudoinverse baseline) mapping a body wrench to arm throttles and angles,
- a deterministic closed-loop simulator with servo and rigid-body dynamics
  for sweep-trajectory experiments and allocator comparisons.
"""

from .allocation import (
    AllocatorInput,
    AllocatorSolution,
    AllocatorState,
    DroneModel,
    PenaltyWeights,
    SolverError,
    allocation_objective,
    arm_wrench,
    assemble_kkt,
    constraint_residual,
    newton_step,
    penalty_arm_rate,
    penalty_throttle,
    pinv_allocate,
    sqp_allocate,
    step_scale,
    thrust_direction,
    vectored_thrust_matrix,
    wrap_angle,
)
from .efficiency import (
    EfficiencyMap,
    HoverProblem,
    HoverSolution,
    InfeasibleHoverError,
    capacity_fraction,
    fibonacci_sphere,
    solve_hover,
    sweep_orientations,
    upward_fraction,
)
from .geometry import (
    CATALOG_IDS,
    DEFAULT_RADIUS,
    Arm,
    DroneGeometry,
    ForceMap,
    GeometryError,
    ValidationReport,
    build_catalog,
    default_zero_dir,
    force_map,
    load_geometry,
    thrust_plane_basis,
    validate,
)
from .simulation import (
    ErrorStats,
    FlightLog,
    FlipEvent,
    PidController,
    PidGains,
    PoseSetpoint,
    RigidBodyState,
    Scenario,
    ServoState,
    SingularityComparison,
    SweepSpec,
    compare_singularity_handling,
    continuous_roll,
    detect_flip_events,
    max_command_step,
    nearest_rank_p90,
    orientation_sweep,
    position_sweep,
    read_flight_csv,
    rigid_body_step,
    run_flight,
    servo_update,
    summarize,
    sweep_setpoint,
    trapezoid_profile,
)
from .spatial import (
    Quaternion,
    integrate_orientation,
    normalize,
    orientation_error,
    vec3,
)

__version__ = "0.1.0"

__all__ = [
    "AllocatorInput",
    "AllocatorSolution",
    "AllocatorState",
    "Arm",
    "CATALOG_IDS",
    "DEFAULT_RADIUS",
    "DroneGeometry",
    "DroneModel",
    "EfficiencyMap",
    "ErrorStats",
    "FlightLog",
    "FlipEvent",
    "ForceMap",
    "GeometryError",
    "HoverProblem",
    "HoverSolution",
    "InfeasibleHoverError",
    "PenaltyWeights",
    "PidController",
    "PidGains",
    "PoseSetpoint",
    "Quaternion",
    "RigidBodyState",
    "Scenario",
    "ServoState",
    "SingularityComparison",
    "SolverError",
    "SweepSpec",
    "ValidationReport",
    "allocation_objective",
    "arm_wrench",
    "assemble_kkt",
    "build_catalog",
    "capacity_fraction",
    "compare_singularity_handling",
    "constraint_residual",
    "continuous_roll",
    "default_zero_dir",
    "detect_flip_events",
    "fibonacci_sphere",
    "force_map",
    "integrate_orientation",
    "load_geometry",
    "max_command_step",
    "nearest_rank_p90",
    "newton_step",
    "normalize",
    "orientation_error",
    "orientation_sweep",
    "penalty_arm_rate",
    "penalty_throttle",
    "pinv_allocate",
    "position_sweep",
    "read_flight_csv",
    "rigid_body_step",
    "run_flight",
    "servo_update",
    "solve_hover",
    "sqp_allocate",
    "step_scale",
    "summarize",
    "sweep_orientations",
    "sweep_setpoint",
    "thrust_direction",
    "thrust_plane_basis",
    "trapezoid_profile",
    "upward_fraction",
    "validate",
    "vec3",
    "vectored_thrust_matrix",
    "wrap_angle",
]
