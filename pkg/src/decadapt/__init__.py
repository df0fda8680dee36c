"""Decentralized adaptive control of interconnected nonlinear systems.

Synthesis of certainty-equivalent controllers with proportional-integral
parameter adaptation, fixed-step simulation of coupled closed loops, and
numerical certification of the assumptions and runtime bounds the design
relies on.
"""

from .model import (
    DomainBox,
    GainDescriptor,
    GoalFunction,
    Parametrization,
    PartitionLayout,
    SubsystemSpec,
    TargetShaper,
    goal_drift,
    input_gain,
    lie_derivative,
)
from .controller import ControlLawConfig, ControlSingularityError, control, goal_error_rate
from .adaptation import (
    AdaptiveLoopSpec,
    AuxiliaryPotential,
    build_potential_single_coordinate,
    check_poincare,
    integral_state_rate,
    parameter_estimate,
    virtual_estimate_rate,
    zero_potential,
)
from .interconnect import Coupling, CoupledClosedLoop, augmented_rhs, coupling_channels
from .simulate import (
    Disturbance,
    IntegratorConfig,
    LoopTrajectory,
    Trajectory,
    goal_attainment,
    integrate,
    integrate_loop,
    integrate_virtual,
    write_trajectory_csv,
)
from .certify import (
    CertificateEntry,
    CertificateReport,
    SmallGainProblem,
    check_small_gain,
    monitor_loop_bounds,
    monitor_tail_convergence,
    verify_coupling_bound,
    verify_monotonicity,
)
from .scenario import (
    OscillatorScenario,
    build_oscillator,
    certify_oscillator,
    load_scenario,
    save_scenario,
    small_gain_problem,
)

__version__ = "0.1.0"
