"""Closed-loop scenario execution with a synthetic camera.

Each tick, in order: camera pose, rendering, observer ingestion, error
bookkeeping, control (sampling, tracking matrix, boundary check, MPC),
camera twist over the coming interval, observer step, platform step.
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import (
    InspectionSpec,
    MPCInfeasibleError,
    MPCNotConvergedError,
    PlatformState,
    SampledEstimate,
    _shift_warm,
    advance_reference,
    build_tracking,
    max_feasible_gamma,
    orient_towards,
    plane_from_global_chi,
    platform_step,
    sample_update,
    solve_mpc,
    tracking_error,
)
from .ekf import EKFState, ekf_step
from .geometry import (
    Feature,
    Plane,
    RigidTransform,
    angle_between_normals,
    canonicalize,
    project_points,
    sample_plane_points,
    transform_plane,
    yaw_rotation,
)
from .observer import (
    CameraTwist,
    ExcitationWindow,
    Frame,
    ObserverState,
    PlaneAtInfinityError,
    ingest_frame,
    observer_step,
    pe_gram,
    plane_estimate,
)
from .scenario import Scenario

logger = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "tick", "t",
    "px", "py", "pz", "vx", "vy", "vz", "yaw",
    "ux", "uy", "uz",
    "chi_x", "chi_y", "chi_z",
    "chis_x", "chis_y", "chis_z",
    "n_hat_x", "n_hat_y", "n_hat_z", "d_hat",
    "plane", "n_x", "n_y", "n_z", "d",
    "e_n", "e_d",
    "e_1", "e_2", "e_3", "e_sep_true",
    "gamma", "n_a",
    "n_features", "pe_rank", "pe_lambda_min",
    "qp_iterations", "qp_objective", "qp_violation", "qp_slack",
    "ekf_e_n", "ekf_e_d",
)


class SimulationError(RuntimeError):
    """Failure inside the loop; ``tick`` is the index of the failing tick."""

    def __init__(self, tick: int, cause: Exception):
        super().__init__(f"tick {tick}: {type(cause).__name__}: {cause}")
        self.tick = tick
        self.cause = cause

    @property
    def infeasible(self) -> bool:
        return isinstance(self.cause, (MPCInfeasibleError, MPCNotConvergedError))


@dataclass(eq=False)
class Trace:
    """Per-tick records of one run, column-wise (see ``TRACE_COLUMNS``)."""

    data: dict[str, np.ndarray]
    dt: float
    theta_n: float = 0.05
    theta_d: float = 0.1
    events: list[str] = field(default_factory=list)
    frames: list[Frame] | None = None

    def __len__(self) -> int:
        return len(self.data["t"])

    def __getitem__(self, column: str) -> np.ndarray:
        return self.data[column]

    @property
    def t(self) -> np.ndarray:
        return self.data["t"]

    def to_csv(self, fh=None) -> str | None:
        """Write the trace as CSV (``%.17g``); returns the text when ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        out.write(",".join(TRACE_COLUMNS) + "\n")
        if len(self):
            table = np.column_stack([self.data[c] for c in TRACE_COLUMNS])
            np.savetxt(out, table, fmt="%.17g", delimiter=",")
        return out.getvalue() if fh is None else None

    @classmethod
    def read_csv(cls, path, dt: float = 0.1) -> "Trace":
        table = np.genfromtxt(path, delimiter=",", names=True)
        table = np.atleast_1d(table)
        data = {c: np.asarray(table[c], dtype=float) for c in TRACE_COLUMNS}
        return cls(data, dt)


# -- camera ----------------------------------------------------------------------------------

def camera_pose(x: PlatformState, mounting: RigidTransform, yaw: float = 0.0) -> RigidTransform:
    """Global camera pose of a platform at ``x.p`` with heading ``yaw``."""
    return RigidTransform(yaw_rotation(yaw), x.p) @ mounting


def _wrap(angle: float) -> float:
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


def yaw_command(yaw: float, n_hat, policy: str, yaw_rate_max: float, ts: float) -> float:
    """Yaw rate for the coming interval.

    ``align`` slews the optical axis towards ``-n_hat`` projected on the
    horizontal plane, rate-limited; a degenerate projection holds the yaw.
    ``n_hat`` must point from the plane towards the camera.
    """
    if policy == "fixed" or n_hat is None:
        return 0.0
    h = -np.asarray(n_hat, dtype=float)[:2]
    if np.linalg.norm(h) <= 1e-6:
        return 0.0
    diff = _wrap(np.arctan2(h[1], h[0]) - yaw)
    return float(np.clip(diff / ts, -yaw_rate_max, yaw_rate_max))


# -- synthetic world -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class World:
    points: np.ndarray        # (m, 3) global
    ids: np.ndarray           # (m,)
    plane_index: np.ndarray   # (m,)
    planes: tuple[Plane, ...]  # canonical
    front: np.ndarray         # visible side sign per plane


def build_world(sc: Scenario) -> World:
    """Sample the feature points; layouts depend on ``layout_seed`` only.

    A plane is seen from the side holding its ``front`` point (default: the
    initial camera position); points are culled when the camera is behind
    their plane (exact for convex arrangements such as the two-plane corner).
    """
    pts, idx = [], []
    planes = tuple(canonicalize(ps.plane) for ps in sc.planes)
    cam0 = camera_pose(sc.initial, sc.mount, sc.initial_yaw).translation
    front = np.array([
        1.0 if pl.normal @ (cam0 if ps.front is None else ps.front) + pl.distance >= 0 else -1.0
        for pl, ps in zip(planes, sc.planes)
    ])
    for j, ps in enumerate(sc.planes):
        pts.append(sample_plane_points(planes[j], ps.extent, ps.features, seed=[sc.layout_seed, j]))
        idx.append(np.full(ps.features, j))
    points = np.vstack(pts)
    return World(points, np.arange(len(points), dtype=np.int64), np.concatenate(idx), planes, front)


def _select_tracks(ids: np.ndarray, prev_ids: np.ndarray | None, cap: int | None) -> np.ndarray:
    """Mask keeping at most ``cap`` ids: continuing tracks first, then new ones by id."""
    keep = np.ones(len(ids), dtype=bool)
    if cap is None or len(ids) <= cap:
        return keep
    cont = np.isin(ids, prev_ids) if prev_ids is not None else np.zeros(len(ids), dtype=bool)
    order = np.lexsort((ids, ~cont))
    keep[:] = False
    keep[order[:cap]] = True
    return keep


def _render(sc: Scenario, world: World, pose: RigidTransform, tick: int, rng=None, prev_ids=None):
    if rng is None:
        rng = np.random.default_rng([sc.seed, tick])
    c = pose.translation
    side = np.array([(pl.normal @ c + pl.distance) * f > 0 for pl, f in zip(world.planes, world.front)])
    Pc = (world.points - c) @ pose.rotation
    xy, vis = project_points(Pc, sc.camera)
    vis &= side[world.plane_index]
    sel = np.flatnonzero(vis)
    vis[sel[~_select_tracks(world.ids[sel], prev_ids, sc.max_tracks)]] = False
    std = np.sqrt(np.asarray(sc.noise, dtype=float))
    noise = rng.standard_normal((len(world.points), 2)) * std
    counts = np.bincount(world.plane_index[vis], minlength=len(world.planes))
    return world.ids[vis], xy[vis] + noise[vis], counts


def render_measurements(sc: Scenario, camera_pose: RigidTransform, tick: int, rng=None,
                        world: World | None = None, prev_ids=None) -> list[Feature]:
    """Visible features of the scenario from ``camera_pose``; ids are point ids.

    Noise is drawn from ``rng`` (default: a generator seeded by ``(seed, tick)``).
    With ``max_tracks`` set, ids in ``prev_ids`` are kept before new ones.
    """
    world = world or build_world(sc)
    ids, xy, _ = _render(sc, world, camera_pose, tick, rng, prev_ids)
    return [Feature(int(i), (float(p[0]), float(p[1]))) for i, p in zip(ids, xy)]


def _camera_twist(x: PlatformState, u, yaw_rate: float, pose: RigidTransform, sc: Scenario,
                  rng) -> CameraTwist:
    ts = sc.dt
    w_g = np.array([0.0, 0.0, yaw_rate])
    lever = pose.translation - x.p
    v_g = x.v + 0.5 * ts * u + np.cross(w_g, lever)
    R = pose.rotation
    v_c = R.T @ v_g
    if sc.twist_noise > 0:
        v_c = v_c + sc.twist_noise * rng.standard_normal(3)
    return CameraTwist(v_c, R.T @ w_g)


# -- main loop -------------------------------------------------------------------------------

def _plane_errors(true_c: Plane, chi, chi_min) -> tuple[float, float, Plane | None]:
    try:
        est = plane_estimate(chi, chi_min)
    except PlaneAtInfinityError:
        return np.nan, np.nan, None
    return angle_between_normals(true_c.normal, est.normal), true_c.distance - est.distance, est


def run(sc: Scenario, *, record_frames: bool = False) -> Trace:
    """Run a scenario for ``duration * camera_rate`` ticks."""
    dt = sc.dt
    K = sc.n_ticks
    rec = {c: np.full(K, np.nan) for c in TRACE_COLUMNS}
    events: list[str] = []
    frames: list[Frame] | None = [] if record_frames else None
    world = build_world(sc)

    obs = ObserverState.initial(sc.chi0, sc.gain_s, sc.gain_chi)
    ekf = EKFState.initial(sc.chi0, sc.ekf.p0) if sc.ekf else None
    ekf_sigma = None
    if sc.ekf:
        ekf_sigma = sc.ekf.sigma_s if sc.ekf.sigma_s is not None else max(max(sc.noise), 1e-6)
    x = sc.initial
    yaw = sc.initial_yaw
    spec: InspectionSpec | None = sc.spec
    s_est: SampledEstimate | None = None
    warm = None
    x_term = None             # terminal predicted state of the previous solution
    true_idx = 0
    prev_twist = None
    window = ExcitationWindow(sc.pe_window, dt, sc.pe_beta)
    closed = sc.mode == "closed_loop"

    for k in range(K):
        try:
            pose = camera_pose(x, sc.mount, yaw)
            ids, xy, counts = _render(sc, world, pose, k, prev_ids=obs.ids)
            if counts.any():
                true_idx = int(np.argmax(counts))
            obs = ingest_frame(obs, (ids, xy))
            if ekf is not None:
                if prev_twist is None:
                    ekf = replace(ekf, ids=ids, s=xy)
                else:
                    ekf = ekf_step(ekf, (ids, xy), prev_twist, dt, ekf_sigma, sc.ekf.process_noise)

            true_g = world.planes[true_idx]
            true_c = transform_plane(pose.inverse(), true_g)
            e_n, e_d, est_c = _plane_errors(true_c, obs.chi, sc.chi_min)
            est_g = transform_plane(pose, est_c) if est_c is not None else None

            u = np.zeros(3)
            gamma = np.nan
            diag = None
            e = np.full(3, np.nan)
            e_sep = np.nan
            n_hat_ctrl = orient_towards(est_g, pose.translation).normal if est_g is not None else None
            if closed:
                chi_g = est_g.chi if est_g is not None else None
                if s_est is None:
                    if chi_g is None:
                        raise PlaneAtInfinityError("no initial plane estimate")
                    s_est = SampledEstimate(chi_g)
                    gamma = 1.0
                elif k % sc.sample_every == 0 and chi_g is not None:
                    ref = x.lifted if x_term is None else x_term
                    gamma = max_feasible_gamma(s_est, chi_g, ref, spec, dt,
                                               sc.mpc.compensation_sign)
                    if gamma == 0.0:
                        events.append(f"tick {k}: estimate update stalled")
                    s_est = sample_update(s_est, chi_g, gamma)
                plane_ctrl = plane_from_global_chi(s_est.chi_s, x.p)
                n_hat_ctrl = plane_ctrl.normal
                prob = build_tracking(plane_ctrl, spec, sc.mpc)
                new_spec = advance_reference(spec, x.p, prob.n_p)
                if new_spec.n_a != spec.n_a:
                    events.append(f"tick {k}: round {new_spec.n_a}")
                    prob = build_tracking(plane_ctrl, new_spec, sc.mpc)
                spec = new_spec
                sol = solve_mpc(x, prob, (spec.v_max, spec.u_max, spec.norm), warm_start=warm)
                warm = _shift_warm(sol.diagnostics["warm"], prob.horizon)
                u = sol.U[0]
                x_term = np.concatenate([sol.X[-1, :3], [1.0], sol.X[-1, 3:]])
                diag = sol.diagnostics
                e = tracking_error(prob, x)
                e_sep = float(orient_towards(true_g, x.p).residual(x.p)[0] - spec.separation_ref)

            rate = yaw_command(yaw, n_hat_ctrl, sc.yaw_policy, sc.yaw_rate_max, dt)
            twist = _camera_twist(x, u, rate, pose, sc, np.random.default_rng([sc.seed, k, 1]))
            report = window.push(pe_gram(xy, twist.v))
            if frames is not None:
                frames.append(Frame(k * dt, twist, ids, xy))

            r = rec
            r["tick"][k] = k
            r["t"][k] = k * dt
            r["px"][k], r["py"][k], r["pz"][k] = x.p
            r["vx"][k], r["vy"][k], r["vz"][k] = x.v
            r["yaw"][k] = yaw
            r["ux"][k], r["uy"][k], r["uz"][k] = u
            r["chi_x"][k], r["chi_y"][k], r["chi_z"][k] = obs.chi
            if s_est is not None:
                r["chis_x"][k], r["chis_y"][k], r["chis_z"][k] = s_est.chi_s
            if est_g is not None:
                r["n_hat_x"][k], r["n_hat_y"][k], r["n_hat_z"][k] = est_g.normal
                r["d_hat"][k] = est_g.distance
            r["plane"][k] = true_idx
            r["n_x"][k], r["n_y"][k], r["n_z"][k] = true_g.normal
            r["d"][k] = true_g.distance
            r["e_n"][k], r["e_d"][k] = e_n, e_d
            r["e_1"][k], r["e_2"][k], r["e_3"][k] = e
            r["e_sep_true"][k] = e_sep
            r["gamma"][k] = gamma
            r["n_a"][k] = spec.n_a if spec is not None else 0
            r["n_features"][k] = len(ids)
            r["pe_rank"][k] = report.rank
            r["pe_lambda_min"][k] = report.lambda_min
            if diag is not None:
                r["qp_iterations"][k] = diag["iterations"]
                r["qp_objective"][k] = diag["objective"]
                r["qp_violation"][k] = diag["constraint_violation"]
                r["qp_slack"][k] = diag["slack"]
            if ekf is not None:
                ee_n, ee_d, _ = _plane_errors(true_c, ekf.chi, sc.chi_min)
                r["ekf_e_n"][k], r["ekf_e_d"][k] = ee_n, ee_d

            obs = observer_step(obs, twist, dt)
            x = platform_step(x, u, dt)
            yaw = yaw + rate * dt
            prev_twist = twist
        except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise SimulationError(k, exc) from exc

    return Trace(rec, dt, sc.theta_n, sc.theta_d, events, frames)


# -- metrics ---------------------------------------------------------------------------------

def time_to_threshold(t, e_n, e_d, theta_n: float = 0.05, theta_d: float = 0.1) -> float:
    """First time after which ``e_n < theta_n`` and ``|e_d| < theta_d`` hold to the end.

    Returns ``inf`` when the condition fails at the last sample (or the trace
    is empty); undefined errors (NaN) count as failures.
    """
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        ok = (np.asarray(e_n) < theta_n) & (np.abs(np.asarray(e_d)) < theta_d)
    if len(t) == 0 or not ok[-1]:
        return float("inf")
    bad = np.flatnonzero(~ok)
    return float(t[0] if len(bad) == 0 else t[bad[-1] + 1])


def metrics(trace: Trace, theta_n: float | None = None, theta_d: float | None = None) -> dict:
    """Scalar summary of a run."""
    if len(trace) == 0:
        raise ValueError("metrics of an empty trace")
    tn = trace.theta_n if theta_n is None else theta_n
    td = trace.theta_d if theta_d is None else theta_d
    d = trace.data
    U = np.column_stack([d["ux"], d["uy"], d["uz"]])
    V = np.column_stack([d["vx"], d["vy"], d["vz"]])
    E = np.column_stack([d["e_1"], d["e_2"], d["e_3"]])
    tail = slice(int(0.8 * len(trace)), None)
    out = {
        "ticks": len(trace),
        "duration": float(len(trace) * trace.dt),
        "theta_n": tn,
        "theta_d": td,
        "time_to_threshold": time_to_threshold(d["t"], d["e_n"], d["e_d"], tn, td),
        "final_e_n": float(d["e_n"][-1]),
        "final_e_d": float(d["e_d"][-1]),
        "max_abs_u": float(np.max(np.abs(U))),
        "max_abs_v": float(np.max(np.abs(V))),
        "max_constraint_violation": float(np.nanmax(d["qp_violation"])) if np.any(np.isfinite(d["qp_violation"])) else 0.0,
        "steady_state_abs_e": [float(v) if np.isfinite(v) else None for v in np.nanmax(np.abs(E[tail]), axis=0)]
        if np.any(np.isfinite(E)) else None,
        "rounds": int(np.nanmax(d["n_a"])),
        "stalled_updates": sum("stalled" in ev for ev in trace.events),
    }
    if np.any(np.isfinite(d["ekf_e_n"])):
        out["ekf_time_to_threshold"] = time_to_threshold(d["t"], d["ekf_e_n"], d["ekf_e_d"], tn, td)
        out["ekf_final_e_n"] = float(d["ekf_e_n"][-1])
        out["ekf_final_e_d"] = float(d["ekf_e_d"][-1])
    return out


def metrics_json(summary: dict) -> str:
    def fix(v):
        if isinstance(v, float) and not np.isfinite(v):
            return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
        if isinstance(v, list):
            return [fix(i) for i in v]
        return v
    return json.dumps({k: fix(v) for k, v in summary.items()}, indent=2, sort_keys=True) + "\n"


def with_overrides(sc: Scenario, **changes) -> Scenario:
    """Copy of ``sc`` with fields replaced (e.g. ``seed``)."""
    return replace(sc, **changes)


def with_speed(sc: Scenario, speed: float) -> Scenario:
    """Scale the initial velocity to ``speed`` m/s keeping its direction."""
    v = sc.initial.v
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("scenario has zero initial velocity")
    return replace(sc, initial=PlatformState(sc.initial.p, v * (speed / norm)))


def with_feature_count(sc: Scenario, count: int) -> Scenario:
    planes = tuple(replace(ps, features=int(count)) for ps in sc.planes)
    return replace(sc, planes=planes)
