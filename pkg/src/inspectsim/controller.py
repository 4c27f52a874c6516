"""Plane-following receding-horizon control.

The platform is a double integrator sampled at ``ts``.  With the lifted
state ``xbar = [p, 1, v]`` the three inspection goals (stand-off distance,
sweep height, sweep speed) are the rows of ``C @ xbar - c_r``; the
controller minimizes their weighted squares over a horizon subject to box
limits on velocity and acceleration and an ``epsilon`` terminal box.

Estimate changes are fed to the controller through a sampled copy of the
plane parameter whose update step ``gamma`` is limited so that the control
compensating for the change stays within the acceleration limit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_points, as_vector, check_positive
from .geometry import Plane
from .observer import CHI_MIN, PlaneAtInfinityError, plane_estimate
from .qp import INF, QPInfeasibleError, QPMaxIterError, solve_qp

logger = logging.getLogger(__name__)


class DegenerateGeometryError(ValueError):
    """Sweep direction and plane normal are parallel."""


class MPCInfeasibleError(RuntimeError):
    def __init__(self, message: str, constraint: str):
        super().__init__(message)
        self.constraint = constraint


class MPCNotConvergedError(RuntimeError):
    def __init__(self, message: str, prim_res: float, dual_res: float):
        super().__init__(message)
        self.prim_res = prim_res
        self.dual_res = dual_res


class SingularCompensationError(ValueError):
    """``(C + dC) B`` is numerically singular."""


# -- platform model -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlatformState:
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", as_vector(self.p, 3, "p"))
        object.__setattr__(self, "v", as_vector(self.v, 3, "v"))

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])

    @property
    def lifted(self) -> np.ndarray:
        """Homogeneous lift ``[p, 1, v]``."""
        return np.concatenate([self.p, [1.0], self.v])

    @classmethod
    def from_vector(cls, x) -> "PlatformState":
        x = as_vector(x, 6, "x")
        return cls(x[:3], x[3:])


def dynamics(ts: float) -> tuple[np.ndarray, np.ndarray]:
    """``A = [[1, ts], [0, 1]] (x) I3`` and ``B = [0.5 ts^2, ts] (x) I3``."""
    A = np.kron(np.array([[1.0, ts], [0.0, 1.0]]), np.eye(3))
    B = np.kron(np.array([[0.5 * ts * ts], [ts]]), np.eye(3))
    return A, B


def lifted_dynamics(ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Dynamics acting on ``[p, 1, v]``."""
    A = np.eye(7)
    A[:3, 4:] = ts * np.eye(3)
    B = np.zeros((7, 3))
    B[:3] = 0.5 * ts * ts * np.eye(3)
    B[4:] = ts * np.eye(3)
    return A, B


def platform_step(x: PlatformState, u, ts: float) -> PlatformState:
    check_positive(ts, "ts")
    u = as_vector(u, 3, "u")
    return PlatformState(x.p + ts * x.v + 0.5 * ts * ts * u, x.v + ts * u)


# -- inspection references ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InspectionSpec:
    """Inspection preferences and platform limits.

    ``boundary`` is the allowed interval of the sweep coordinate
    ``n_p @ p``; leaving it advances the round counter ``n_a``.  ``armed``
    is hysteresis bookkeeping: after an advance it stays false until the
    platform is back inside the interval shrunk by ``hysteresis``.
    """

    d_s: float
    d_0: float
    d_c: float
    v_r: float
    v_max: float
    u_max: float
    n_c: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    n_a: int = 0
    boundary: tuple[float, float] | None = None
    norm: str = "inf"
    hysteresis: float = 0.5
    d_ref: float | None = None
    armed: bool = True

    def __post_init__(self):
        for name in ("d_s", "d_c", "v_r", "v_max", "u_max"):
            check_positive(getattr(self, name), name)
        check_positive(self.hysteresis, "hysteresis", strict=False)
        n_c = as_vector(self.n_c, 3, "n_c")
        if abs(np.linalg.norm(n_c) - 1.0) > 1e-9:
            raise ValueError("n_c must be a unit vector")
        object.__setattr__(self, "n_c", n_c)
        if int(self.n_a) != self.n_a or self.n_a < 0:
            raise ValueError("n_a must be a non-negative integer")
        if self.norm not in ("inf", "2"):
            raise ValueError(f"norm must be 'inf' or '2', got {self.norm!r}")
        if self.boundary is not None:
            lo, hi = (float(b) for b in self.boundary)
            if hi - lo <= 2.0 * self.hysteresis:
                raise ValueError("boundary interval must be wider than twice the hysteresis")
            object.__setattr__(self, "boundary", (lo, hi))

    @property
    def separation_ref(self) -> float:
        return self.d_s if self.d_ref is None else float(self.d_ref)

    @property
    def z_ref(self) -> float:
        return self.n_a * self.d_c + self.d_0

    @property
    def v_ref(self) -> float:
        return (-1.0) ** self.n_a * self.v_r

    @property
    def limits(self) -> tuple[float, float]:
        """Per-axis box used for velocity and acceleration.

        For the 2-norm the box is the inscribed one, ``bound / sqrt(3)``.
        """
        if self.norm == "inf":
            return self.v_max, self.u_max
        return self.v_max / np.sqrt(3.0), self.u_max / np.sqrt(3.0)


def advance_reference(spec: InspectionSpec, p, n_p) -> InspectionSpec:
    """Advance the inspection round when the sweep coordinate leaves the boundary."""
    if spec.boundary is None:
        return spec
    coord = float(np.dot(as_vector(n_p, 3, "n_p"), as_vector(p, 3, "p")))
    lo, hi = spec.boundary
    h = spec.hysteresis
    if spec.armed and not (lo <= coord <= hi):
        return replace(spec, n_a=spec.n_a + 1, armed=False)
    if not spec.armed and lo + h <= coord <= hi - h:
        return replace(spec, armed=True)
    return spec


# -- tracking problem -----------------------------------------------------------------------

@dataclass(frozen=True)
class MPCConfig:
    horizon: int = 20
    ts: float = 0.1
    q: tuple[float, float, float] = (10.0, 10.0, 5.0)
    r: tuple[float, float, float] = (1.0, 1.0, 1.0)
    terminal_radius: float = 0.05
    terminal_weight: float = 1e4
    tol: float = 1e-8
    max_iter: int = 10000
    compensation_sign: str = "negated"

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        check_positive(self.ts, "ts")
        check_positive(self.terminal_radius, "terminal_radius", strict=False)
        check_positive(self.terminal_weight, "terminal_weight")
        if min(self.r) <= 0 or min(self.q) < 0:
            raise ValueError("weights must satisfy Q >= 0 and R > 0")
        if self.compensation_sign not in ("negated", "direct"):
            raise ValueError("compensation_sign must be 'negated' or 'direct'")


@dataclass(frozen=True, eq=False)
class TrackingProblem:
    C: np.ndarray
    c_r: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    horizon: int
    ts: float
    terminal_radius: float
    terminal_weight: float
    n_p: np.ndarray
    tol: float = 1e-8
    max_iter: int = 10000


def orient_towards(plane: Plane, point) -> Plane:
    """Flip ``(n, d)`` so that ``point`` lies on the positive side."""
    if plane.normal @ as_vector(point, 3, "point") + plane.distance < 0.0:
        return Plane(-plane.normal, -plane.distance)
    return plane


def sweep_direction(n_o, n_c) -> np.ndarray:
    cross = np.cross(n_c, n_o)
    norm = np.linalg.norm(cross)
    if norm < 1e-9:
        raise DegenerateGeometryError("sweep direction n_c is parallel to the plane normal")
    return cross / norm


def tracking_matrix(plane_g: Plane, spec: InspectionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(C, n_p)`` for a global plane already oriented towards the platform."""
    n_o = np.asarray(plane_g.normal)
    n_p = sweep_direction(n_o, spec.n_c)
    C = np.zeros((3, 7))
    C[0, :3] = n_o
    C[0, 3] = plane_g.distance
    C[1, :3] = spec.n_c
    C[2, 4:] = n_p
    return C, n_p


def build_tracking(plane_g: Plane, spec: InspectionSpec, config: MPCConfig | None = None) -> TrackingProblem:
    """Tracking problem for following ``plane_g`` (oriented towards the platform)."""
    config = config or MPCConfig()
    C, n_p = tracking_matrix(plane_g, spec)
    c_r = np.array([spec.separation_ref, spec.z_ref, spec.v_ref])
    return TrackingProblem(
        C=C, c_r=c_r, Q=np.diag(config.q), R=np.diag(config.r), horizon=int(config.horizon),
        ts=float(config.ts), terminal_radius=float(config.terminal_radius),
        terminal_weight=float(config.terminal_weight), n_p=n_p, tol=config.tol,
        max_iter=config.max_iter,
    )


def tracking_error(prob: TrackingProblem, x: PlatformState) -> np.ndarray:
    """``C @ xbar - c_r``: separation (m), sweep height (m), sweep speed (m/s)."""
    return prob.C @ x.lifted - prob.c_r


# -- MPC ------------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MPCSolution:
    U: np.ndarray
    X: np.ndarray
    diagnostics: dict


def _prediction_matrices(ts: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """``X = Phi x0 + Gamma U`` for the stacked states ``x_1 .. x_N``."""
    A, B = dynamics(ts)
    Phi = np.zeros((6 * N, 6))
    Gamma = np.zeros((6 * N, 3 * N))
    Ak = np.eye(6)
    powers = [np.eye(6)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    for t in range(N):
        Ak = powers[t + 1]
        Phi[6 * t:6 * t + 6] = Ak
        for j in range(t + 1):
            Gamma[6 * t:6 * t + 6, 3 * j:3 * j + 3] = powers[t - j] @ B
    return Phi, Gamma


_PRED_CACHE: dict[tuple[float, int], tuple[np.ndarray, np.ndarray]] = {}


def prediction_matrices(ts: float, N: int):
    key = (float(ts), int(N))
    if key not in _PRED_CACHE:
        _PRED_CACHE[key] = _prediction_matrices(ts, N)
    return _PRED_CACHE[key]


@dataclass
class CondensedQP:
    P: np.ndarray
    q: np.ndarray
    const: float
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    Phi: np.ndarray
    Gamma: np.ndarray


def condense(x: PlatformState, prob: TrackingProblem, bounds: tuple[float, float, str]) -> CondensedQP:
    """Dense QP over ``z = [u_0 .. u_{N-1}, slack]``.

    ``bounds = (v_max, u_max, norm)``; the 2-norm is replaced by the inscribed box.
    """
    v_max, u_max, norm = bounds
    if norm in ("2", 2):
        v_box, u_box = v_max / np.sqrt(3.0), u_max / np.sqrt(3.0)
    else:
        v_box, u_box = v_max, u_max
    N = prob.horizon
    Phi, Gamma = prediction_matrices(prob.ts, N)
    C6 = prob.C[:, [0, 1, 2, 4, 5, 6]]
    c_off = prob.C[:, 3] - prob.c_r
    Cbar = np.kron(np.eye(N), C6)
    Qbar = np.kron(np.eye(N), prob.Q)
    Rbar = np.kron(np.eye(N), prob.R)
    e_free = Cbar @ (Phi @ x.x) + np.tile(c_off, N)
    G = Cbar @ Gamma
    nu = 3 * N
    P = np.zeros((nu + 3, nu + 3))
    P[:nu, :nu] = 2.0 * (G.T @ Qbar @ G + Rbar)
    P[nu:, nu:] = 2.0 * prob.terminal_weight * np.eye(3)
    P = 0.5 * (P + P.T)
    q = np.zeros(nu + 3)
    q[:nu] = 2.0 * G.T @ (Qbar @ e_free)
    const = float(e_free @ Qbar @ e_free)

    vel_rows = np.concatenate([np.arange(6 * t + 3, 6 * t + 6) for t in range(N)])
    Gv = Gamma[vel_rows]
    v_free = (Phi @ x.x)[vel_rows]
    G_N = G[-3:]
    eN = e_free[-3:]
    eps = prob.terminal_radius
    rows = [
        np.hstack([np.eye(nu), np.zeros((nu, 3))]),
        np.hstack([Gv, np.zeros((nu, 3))]),
        np.hstack([G_N, -np.eye(3)]),
        np.hstack([G_N, np.eye(3)]),
        np.hstack([np.zeros((3, nu)), np.eye(3)]),
    ]
    lo = [
        np.full(nu, -u_box),
        -v_box - v_free,
        np.full(3, -INF),
        -eps - eN,
        np.zeros(3),
    ]
    hi = [
        np.full(nu, u_box),
        v_box - v_free,
        eps - eN,
        np.full(3, INF),
        np.full(3, INF),
    ]
    return CondensedQP(P, q, const, np.vstack(rows), np.concatenate(lo), np.concatenate(hi), Phi, Gamma)


def solve_mpc(x: PlatformState, prob: TrackingProblem, bounds: tuple[float, float, str],
              warm_start: tuple[np.ndarray, np.ndarray] | None = None) -> MPCSolution:
    """Solve the constrained tracking problem from state ``x``.

    Returns the control sequence ``U`` (N, 3), the predicted states ``X``
    (N, 6) and solver diagnostics (objective, iterations, constraint
    violation, terminal slack).
    """
    v_max, u_max, norm = bounds
    v_box = v_max / np.sqrt(3.0) if norm in ("2", 2) else v_max
    u_box = u_max / np.sqrt(3.0) if norm in ("2", 2) else u_max
    over = np.abs(x.v) - (v_box + prob.ts * u_box)
    if np.any(over > 1e-9):
        axis = int(np.argmax(over))
        raise MPCInfeasibleError(
            f"velocity component {axis} = {x.v[axis]:.4g} cannot be brought within "
            f"+/-{v_box:.4g} in one step", constraint=f"velocity[{axis}]",
        )
    qp = condense(x, prob, bounds)
    x0 = y0 = None
    if warm_start is not None:
        x0, y0 = warm_start
        if x0 is not None and len(x0) != len(qp.q):
            x0 = y0 = None
    try:
        res = solve_qp(qp.P, qp.q, qp.A, qp.l, qp.u, eps_abs=prob.tol, max_iter=prob.max_iter,
                       polish_tol=max(prob.tol, 1e-9), x0=x0, y0=y0)
    except QPInfeasibleError as exc:
        raise MPCInfeasibleError(str(exc), constraint=f"row[{exc.row}]") from exc
    except QPMaxIterError as exc:
        raise MPCNotConvergedError(str(exc), exc.prim_res, exc.dual_res) from exc
    N = prob.horizon
    U = res.x[:3 * N].reshape(N, 3)
    X = (qp.Phi @ x.x + qp.Gamma @ res.x[:3 * N]).reshape(N, 6)
    slack = res.x[3 * N:]
    diag = {
        "objective": res.objective + qp.const,
        "iterations": res.iterations,
        "constraint_violation": res.prim_res,
        "dual_residual": res.dual_res,
        "slack": float(np.max(np.abs(slack))),
        "polished": res.polished,
        "status": res.status,
        "warm": (res.x, res.y),
    }
    return MPCSolution(U, X, diag)


# -- estimate sampling ----------------------------------------------------------------------

def compensation_control(C_hat, dC, xbar, ts: float = 0.1, sign: str = "negated") -> np.ndarray:
    """Control that absorbs a change ``dC`` of the tracking matrix in one step.

    ``sign='negated'`` gives ``(C + dC)(A xbar + B u) = C A xbar``; ``'direct'``
    keeps the opposite sign.  The magnitude is the same for both.
    """
    A, B = lifted_dynamics(ts)
    M = (np.asarray(C_hat) + np.asarray(dC)) @ B
    if abs(np.linalg.det(M)) < 1e-10:
        raise SingularCompensationError("(C + dC) B is singular")
    u = np.linalg.solve(M, np.asarray(dC) @ (A @ np.asarray(xbar, dtype=float)))
    return -u if sign == "negated" else u


@dataclass(frozen=True, eq=False)
class SampledEstimate:
    """Plane parameter handed to the controller (global frame ``chi``)."""

    chi_s: np.ndarray
    last_gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "chi_s", as_vector(self.chi_s, 3, "chi_s"))
        if not 0.0 <= self.last_gamma <= 1.0:
            raise ValueError("last_gamma must lie in [0, 1]")


def sample_update(s_est: SampledEstimate, chi_new, gamma: float) -> SampledEstimate:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    chi_new = as_vector(chi_new, 3, "chi_new")
    if gamma == 1.0:
        return SampledEstimate(chi_new.copy(), 1.0)
    return SampledEstimate(s_est.chi_s + gamma * (chi_new - s_est.chi_s), float(gamma))


def plane_from_global_chi(chi_g, towards) -> Plane:
    return orient_towards(plane_estimate(chi_g), towards)


def compensation_norms(C_old, chis, xbar, spec: InspectionSpec, ts: float = 0.1,
                       sign: str = "negated") -> np.ndarray:
    """Compensation-control norms for a batch of candidate global ``chi`` rows.

    Degenerate candidates (plane at infinity, sweep direction undefined,
    singular compensation system) get ``inf``.  The sign option does not
    change the magnitude.
    """
    A, B = lifted_dynamics(ts)
    xbar = np.asarray(xbar, dtype=float)
    return _compensation_norms(np.asarray(C_old, dtype=float), np.atleast_2d(chis), xbar,
                               A @ xbar, B, np.asarray(spec.n_c, dtype=float), spec.norm)


def _compensation_norms(C_old, chis, xbar, Ax, B, n_c, norm) -> np.ndarray:
    chis = np.asarray(chis, dtype=float)
    out = np.full(len(chis), np.inf)
    nrm = np.sqrt(np.einsum("ij,ij->i", chis, chis))
    ok = nrm >= CHI_MIN
    n = -chis[ok] / nrm[ok, None]
    d = 1.0 / nrm[ok]
    flip = n @ xbar[:3] + d < 0.0
    n[flip] *= -1.0
    d[flip] *= -1.0
    cross = np.stack([n_c[1] * n[:, 2] - n_c[2] * n[:, 1],
                      n_c[2] * n[:, 0] - n_c[0] * n[:, 2],
                      n_c[0] * n[:, 1] - n_c[1] * n[:, 0]], axis=1)
    cn = np.sqrt(np.einsum("ij,ij->i", cross, cross))
    good = cn >= 1e-9
    idx = np.flatnonzero(ok)[good]
    C_new = np.zeros((len(idx), 3, 7))
    C_new[:, 0, :3] = n[good]
    C_new[:, 0, 3] = d[good]
    C_new[:, 1, :3] = n_c
    C_new[:, 2, 4:] = cross[good] / cn[good, None]
    M = C_new @ B
    rhs = (C_new - C_old) @ Ax
    solvable = np.abs(np.linalg.det(M)) >= 1e-10
    if solvable.any():
        u = np.linalg.solve(M[solvable], rhs[solvable][..., None])[..., 0]
        mag = np.max(np.abs(u), axis=1) if norm == "inf" else np.linalg.norm(u, axis=1)
        out[idx[solvable]] = mag
    return out


def compensation_norm(C_old, chi_g, xbar, spec: InspectionSpec, ts: float, sign: str) -> float:
    plane = plane_from_global_chi(chi_g, xbar[:3])
    C_new, _ = tracking_matrix(plane, spec)
    u = compensation_control(C_old, C_new - C_old, xbar, ts, sign)
    return float(np.max(np.abs(u))) if spec.norm == "inf" else float(np.linalg.norm(u))


GAMMA_FLOOR = 1e-4


def max_feasible_gamma(s_est: SampledEstimate, chi_new, xbar, spec: InspectionSpec,
                       ts: float = 0.1, sign: str = "negated", grid: int = 64,
                       tol: float = 1e-10) -> float:
    """Largest update step whose compensation control respects the acceleration bound.

    The predicate is not assumed monotone in ``gamma``: the largest feasible
    point of a uniform grid is refined towards its infeasible neighbour by
    repeated grid search on the bracketing interval, down to width ``tol``.
    """
    check_positive(tol, "tol")
    chi_new = as_vector(chi_new, 3, "chi_new")
    xbar = as_vector(xbar, 7, "xbar")
    delta = chi_new - s_est.chi_s
    if not np.any(delta):
        return 1.0
    u_lim = spec.u_max
    old_plane = plane_from_global_chi(s_est.chi_s, xbar[:3])
    C_old, _ = tracking_matrix(old_plane, spec)

    A, B = lifted_dynamics(ts)
    Ax = A @ xbar
    n_c = np.asarray(spec.n_c, dtype=float)

    def feasible_many(gs) -> np.ndarray:
        gs = np.asarray(gs, dtype=float)
        chis = s_est.chi_s + gs[:, None] * delta
        return _compensation_norms(C_old, chis, xbar, Ax, B, n_c, spec.norm) <= u_lim

    def feasible(g: float) -> bool:
        return bool(feasible_many([g])[0])

    if feasible(1.0):
        return 1.0
    if not feasible(GAMMA_FLOOR):
        logger.info("estimate update stalled: no feasible gamma above %g", GAMMA_FLOOR)
        return 0.0
    pts = np.linspace(0.0, 1.0, grid)
    inner = pts[1:-1]
    ok = inner[feasible_many(inner)]
    lo = max(GAMMA_FLOOR, float(ok.max()) if len(ok) else 0.0)
    hi = pts[np.searchsorted(pts, lo, side="right")] if lo < pts[-1] else 1.0
    for _ in range(32):
        if hi - lo <= tol:
            break
        sub = np.linspace(lo, hi, grid + 1)[1:-1]
        ok = sub[feasible_many(sub)]
        if len(ok):
            lo = float(ok.max())
        hi = float(sub[np.searchsorted(sub, lo, side="right")]) if lo < sub[-1] else hi
    return float(lo)


# -- estimator API --------------------------------------------------------------------------

class PlaneFollowingMPC(BaseEstimator):
    """Receding-horizon plane follower.

    ``fit(plane, spec)`` builds the tracking problem for a global plane;
    ``predict(X)`` returns the first control for each platform state row
    ``[px, py, pz, vx, vy, vz]``.

    Parameters
    ----------
    horizon : int
    ts : float
        Sampling time in seconds.
    q, r : tuple of 3 floats
        Diagonal tracking and control weights.
    terminal_radius, terminal_weight : float
        Half-width of the terminal box and weight of its slack.
    tol, max_iter :
        QP solver settings.
    warm_start : bool
        Reuse the previous solution as the initial iterate.
    """

    def __init__(self, horizon=20, ts=0.1, q=(10.0, 10.0, 5.0), r=(1.0, 1.0, 1.0),
                 terminal_radius=0.05, terminal_weight=1e4, tol=1e-8, max_iter=10000,
                 warm_start=True):
        self.horizon = horizon
        self.ts = ts
        self.q = q
        self.r = r
        self.terminal_radius = terminal_radius
        self.terminal_weight = terminal_weight
        self.tol = tol
        self.max_iter = max_iter
        self.warm_start = warm_start

    @property
    def config(self) -> MPCConfig:
        return MPCConfig(horizon=self.horizon, ts=self.ts, q=tuple(self.q), r=tuple(self.r),
                         terminal_radius=self.terminal_radius, terminal_weight=self.terminal_weight,
                         tol=self.tol, max_iter=self.max_iter)

    def fit(self, plane: Plane, spec: InspectionSpec):
        self.spec_ = spec
        self.problem_ = build_tracking(plane, spec, self.config)
        self._warm = None
        return self

    def solve(self, state: PlatformState) -> MPCSolution:
        check_is_fitted(self, "problem_")
        sol = solve_mpc(state, self.problem_, (self.spec_.v_max, self.spec_.u_max, self.spec_.norm),
                        warm_start=self._warm if self.warm_start else None)
        self._warm = _shift_warm(sol.diagnostics["warm"], self.horizon)
        return sol

    def predict(self, X) -> np.ndarray:
        X = as_points(X, 6, "X")
        return np.array([self.solve(PlatformState.from_vector(row)).U[0] for row in X])

    def score(self, X, y=None) -> float:
        """Negative mean squared tracking error of the given states."""
        check_is_fitted(self, "problem_")
        X = as_points(X, 6, "X")
        errs = [tracking_error(self.problem_, PlatformState.from_vector(row)) for row in X]
        return -float(np.mean(np.square(errs)))


def _shift_warm(warm, N):
    z, y = warm
    z = z.copy()
    z[:3 * (N - 1)] = z[3:3 * N]
    z[3 * (N - 1):3 * N] = 0.0
    return z, None
