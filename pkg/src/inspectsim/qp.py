"""Small dense convex QP solver (ADMM with active-set polishing).

Solves

    minimize    0.5 x^T P x + q^T x
    subject to  l <= A x <= u

with the operator-splitting iteration popularized by OSQP: a fixed KKT
factorization per penalty value, over-relaxation, and residual-balancing
penalty updates.  Once the iterates are close, the active set read off the
duals is solved exactly ("polishing"), which gives machine-precision
solutions whenever the guessed set is right; otherwise iteration resumes.
Everything is deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

INF = 1e20


class QPError(RuntimeError):
    pass


class QPInfeasibleError(QPError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class QPMaxIterError(QPError):
    def __init__(self, message: str, prim_res: float, dual_res: float):
        super().__init__(message)
        self.prim_res = prim_res
        self.dual_res = dual_res


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray
    objective: float
    iterations: int
    prim_res: float
    dual_res: float
    polished: bool
    status: str


def _residuals(P, q, A, l, u, x, y):
    Ax = A @ x
    viol = np.maximum(Ax - u, 0.0) + np.maximum(l - Ax, 0.0)
    prim = float(np.max(viol)) if len(viol) else 0.0
    dual = float(np.max(np.abs(P @ x + q + A.T @ y)))
    return prim, dual


def _polish(P, q, A, l, u, z, y, tol):
    lower = (z - l < -y) & (l > -INF)
    upper = (u - z < y) & (u < INF)
    lower &= ~upper
    act = np.flatnonzero(lower | upper)
    n = P.shape[0]
    b = np.where(upper, u, l)[act]
    Aa = A[act]
    K = np.zeros((n + len(act), n + len(act)))
    K[:n, :n] = P
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    rhs = np.concatenate([-q, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x = sol[:n]
    y_new = np.zeros_like(y)
    y_new[act] = sol[n:]
    # Dual signs: y < 0 on lower-active rows, y > 0 on upper-active rows.
    ya = y_new[act]
    sign_ok = np.all(ya[lower[act]] <= tol) and np.all(ya[upper[act]] >= -tol)
    prim, dual = _residuals(P, q, A, l, u, x, y_new)
    kkt_ok = np.allclose(K @ sol, rhs, atol=1e-9 * max(1.0, np.max(np.abs(rhs))))
    if sign_ok and kkt_ok and prim <= tol and dual <= tol:
        return x, y_new, prim, dual
    return None


def solve_qp(P, q, A, l, u, *, eps_abs: float = 1e-8, max_iter: int = 10000,
             rho: float = 0.1, sigma: float = 1e-6, alpha: float = 1.6,
             polish_tol: float = 1e-8, x0=None, y0=None, check_every: int = 25) -> QPResult:
    """Solve the QP; raises :class:`QPMaxIterError` when ``max_iter`` is exhausted."""
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, len(q))
    l = np.clip(np.asarray(l, dtype=float), -INF, INF)
    u = np.clip(np.asarray(u, dtype=float), -INF, INF)
    if np.any(l > u):
        row = int(np.flatnonzero(l > u)[0])
        raise QPInfeasibleError(f"constraint row {row} has l > u", row)
    n, m = len(q), len(l)

    eq = np.abs(u - l) < 1e-10
    free = (l <= -INF) & (u >= INF)

    def rho_vector(r):
        rv = np.full(m, r)
        rv[eq] = 1e3 * r
        rv[free] = 1e-6
        return rv

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    y = np.zeros(m) if y0 is None else np.array(y0, dtype=float)
    z = np.clip(A @ x, l, u)
    rv = rho_vector(rho)
    fac = cho_factor(P + sigma * np.eye(n) + A.T @ (rv[:, None] * A))

    prim = dual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        rhs = sigma * x - q + A.T @ (rv * z - y)
        x_t = cho_solve(fac, rhs)
        z_t = A @ x_t
        x = alpha * x_t + (1.0 - alpha) * x
        z_relax = alpha * z_t + (1.0 - alpha) * z
        z_new = np.clip(z_relax + y / rv, l, u)
        y = y + rv * (z_relax - z_new)
        z = z_new

        if it % check_every and it != max_iter:
            continue
        Ax = A @ x
        prim = float(np.max(np.abs(Ax - z))) if m else 0.0
        Px = P @ x
        Aty = A.T @ y
        dual = float(np.max(np.abs(Px + q + Aty)))
        if prim <= 1e-5 and dual <= 1e-5 or it % (4 * check_every) == 0:
            polished = _polish(P, q, A, l, u, z, y, polish_tol)
            if polished is not None:
                xp, yp, pr, du = polished
                obj = float(0.5 * xp @ P @ xp + q @ xp)
                return QPResult(xp, yp, obj, it, pr, du, True, "solved")
        if prim <= eps_abs and dual <= eps_abs:
            obj = float(0.5 * x @ P @ x + q @ x)
            pr, du = _residuals(P, q, A, l, u, x, y)
            return QPResult(x, y, obj, it, pr, du, False, "solved")
        # Residual balancing of the penalty.
        scale_p = max(np.max(np.abs(Ax)), np.max(np.abs(z)), 1e-12) if m else 1.0
        scale_d = max(np.max(np.abs(Px)), np.max(np.abs(Aty)), np.max(np.abs(q)), 1e-12)
        ratio = np.sqrt((prim / scale_p + 1e-16) / (dual / scale_d + 1e-16))
        new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
        if new_rho > 5.0 * rho or new_rho < rho / 5.0:
            rho = new_rho
            rv = rho_vector(rho)
            fac = cho_factor(P + sigma * np.eye(n) + A.T @ (rv[:, None] * A))

    raise QPMaxIterError(
        f"QP did not converge in {max_iter} iterations (prim={prim:.2e}, dual={dual:.2e})",
        prim, dual,
    )
