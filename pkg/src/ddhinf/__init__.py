"""Data-driven H-infinity predictive control for constrained discrete LTI systems.

From recorded input-state-disturbance data the package synthesizes
stabilizing state-feedback gains with certified disturbance attenuation
via semidefinite programming, runs the dissipation-constrained
moving-horizon controller, and audits every closed-loop guarantee against
model-based oracles.
"""

from .linsys import (
    DataRecord,
    LtiSystem,
    Trajectory,
    batch_reactor,
    collect_data,
    data_consistency_residual,
    disturbance_sequence,
    identify_unique_system,
    sample_bounded_disturbance,
    simulate_closed_loop,
    step,
)
from .conic import ConicProblem, LmiConstraint, SolveReport, residual_check, solve
from .synthesis import (
    DecisionLayout,
    DesignConfig,
    OutputMaps,
    SynthesisResult,
    build_mh_problem,
    build_model_problem,
    build_static_problem,
    extract_solution,
)
from .mhc import ControllerState, ControlError, StepRecord, init, run
from . import lmicore, verify

__version__ = "0.1.0"
