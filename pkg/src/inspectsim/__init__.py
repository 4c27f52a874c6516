"""Vision-based plane estimation and plane-following control for facade inspection.

Modules
-------
geometry    planes, rigid transforms, pinhole projection, synthetic facades
observer    inverse-depth plane observer, excitation diagnostics, frame replay
ekf         EKF baseline for the same parameter
qp          dense convex QP solver used by the controller
controller  receding-horizon plane follower and estimate sampling
scenario    TOML scenario files
simulator   closed-loop and observer-only runs, traces and metrics
cli         ``inspect-sim`` command line
"""
from .controller import (
    InspectionSpec,
    MPCConfig,
    MPCInfeasibleError,
    PlaneFollowingMPC,
    PlatformState,
    SampledEstimate,
    advance_reference,
    build_tracking,
    compensation_control,
    max_feasible_gamma,
    sample_update,
    solve_mpc,
    tracking_matrix,
)
from .ekf import EKFPlaneEstimator, EKFState, ekf_step
from .geometry import (
    CameraModel,
    Feature,
    Plane,
    PlaneExtent,
    RigidTransform,
    canonicalize,
    project_points,
    sample_plane_points,
    transform_plane,
)
from .observer import (
    CameraTwist,
    Frame,
    ObserverState,
    PlaneObserver,
    observer_step,
    pe_gram,
    pe_report,
    plane_estimate,
    read_replay_csv,
    write_replay_csv,
)
from .qp import solve_qp
from .scenario import Scenario, ScenarioError, load_scenario, loads_scenario
from .simulator import SimulationError, Trace, metrics, run, time_to_threshold

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "CameraTwist", "EKFPlaneEstimator", "EKFState", "Feature", "Frame",
    "InspectionSpec", "MPCConfig", "MPCInfeasibleError", "ObserverState", "Plane",
    "PlaneExtent", "PlaneFollowingMPC", "PlaneObserver", "PlatformState", "RigidTransform",
    "SampledEstimate", "Scenario", "ScenarioError", "SimulationError", "Trace",
    "advance_reference", "build_tracking", "canonicalize", "compensation_control", "ekf_step",
    "load_scenario", "loads_scenario", "max_feasible_gamma", "metrics", "observer_step",
    "pe_gram", "pe_report", "plane_estimate", "project_points", "read_replay_csv", "run",
    "sample_plane_points", "sample_update", "solve_mpc", "solve_qp", "time_to_threshold",
    "tracking_matrix", "transform_plane", "write_replay_csv",
]
