"""Extended Kalman filter baseline for the inverse-depth plane parameter.

State is ``chi`` alone.  The measurement of each feature tracked across two
consecutive frames is its finite-difference image velocity with the rotation
part removed, which is linear in ``chi``:

    (s_k - s_{k-1}) / dt - flow_prior(s_{k-1}, w) = Omega(s_{k-1}, v)^T chi + noise

with noise covariance ``2 * Sigma_s / dt**2`` per feature.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import as_vector, check_finite_array, check_positive
from .geometry import skew
from .observer import (
    CHI_MIN,
    CameraTwist,
    Frame,
    _FrameEstimator,
    _alphas,
    _detections_arrays,
    _flow_prior_rows,
    _sbar,
    propagate_chi,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EKFState:
    chi: np.ndarray
    P: np.ndarray
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    s: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    skipped_updates: int = 0

    @classmethod
    def initial(cls, chi0, p0: float = 0.01) -> "EKFState":
        return cls(as_vector(chi0, 3, "chi0"), np.eye(3) * float(p0))


def _process_jacobian(chi, twist: CameraTwist, dt: float) -> np.ndarray:
    v, w = twist.v, twist.w
    return np.eye(3) + dt * ((chi @ v) * np.eye(3) + np.outer(chi, v) - skew(w))


def ekf_step(
    state: EKFState,
    detections,
    twist: CameraTwist,
    dt: float,
    sigma_s,
    process_noise: float = 1e-8,
) -> EKFState:
    """Update with the flow of features seen in both frames, then predict.

    ``twist`` is the camera twist over the interval since the previous frame
    and ``sigma_s`` the per-axis variance of a feature position measurement.
    """
    check_positive(dt, "dt")
    sig = np.broadcast_to(np.asarray(sigma_s, dtype=float), (2,))
    ids, s = _detections_arrays(detections)
    chi, P = state.chi, state.P
    skipped = state.skipped_updates

    _, cur_idx, prev_idx = np.intersect1d(ids, state.ids, assume_unique=True, return_indices=True)
    if len(cur_idx):
        s_prev = state.s[prev_idx]
        a = _alphas(s_prev, twist.v)
        sbar = _sbar(s_prev)
        # Stacked rows of Omega_i^T: [a_x * sbar; a_y * sbar] per feature.
        H = np.empty((2 * len(cur_idx), 3))
        H[0::2] = a[:, :1] * sbar
        H[1::2] = a[:, 1:] * sbar
        flow = (s[cur_idx] - s_prev) / dt - _flow_prior_rows(s_prev, twist.w)
        z = flow.reshape(-1)
        r = np.tile(2.0 * sig / dt**2, len(cur_idx))
        innov = z - H @ chi
        if np.all(r > 0):
            # Information form; algebraically the standard gain with S = H P H^T + R.
            info = np.linalg.inv(P) + H.T @ (H / r[:, None])
            try:
                P_post = np.linalg.inv(info)
            except np.linalg.LinAlgError:
                P_post = None
            if P_post is not None:
                chi = chi + P_post @ (H.T @ (innov / r))
                P = P_post
        else:
            S = H @ P @ H.T + np.diag(r)
            if np.linalg.matrix_rank(S) < len(S):
                P_post = None
            else:
                K = np.linalg.solve(S, H @ P).T
                chi = chi + K @ innov
                ImKH = np.eye(3) - K @ H
                P_post = ImKH @ P @ ImKH.T + K @ np.diag(r) @ K.T
                P = P_post
        if P_post is None:
            skipped += 1
            logger.warning("EKF innovation covariance singular; update skipped")
        P = 0.5 * (P + P.T)

    F = _process_jacobian(chi, twist, dt)
    chi = propagate_chi(chi, twist, dt)
    P = F @ P @ F.T + process_noise * np.eye(3)
    P = 0.5 * (P + P.T)
    check_finite_array(chi, "chi")
    return replace(state, chi=chi, P=P, ids=ids, s=s, skipped_updates=skipped)


class EKFPlaneEstimator(_FrameEstimator):
    """Streaming EKF counterpart of :class:`~inspectsim.observer.PlaneObserver`.

    Parameters
    ----------
    chi_init : array-like of shape (3,)
    p0 : float
        Initial covariance scale, ``P0 = p0 * I``.
    sigma_s : float or array-like of shape (2,)
        Feature position variance assumed by the filter.
    process_noise : float
        Additive process noise per step.
    """

    def __init__(self, chi_init=(0.0, 0.0, 0.2), p0=0.01, sigma_s=1e-3, process_noise=1e-8,
                 chi_min=CHI_MIN):
        self.chi_init = chi_init
        self.p0 = p0
        self.sigma_s = sigma_s
        self.process_noise = process_noise
        self.chi_min = chi_min

    def _reset(self):
        self.state_ = EKFState.initial(self.chi_init, self.p0)
        self.chi_ = self.state_.chi
        self.n_frames_ = 0
        self._last_frame = None

    def _advance(self, frame: Frame, dt):
        if dt is None:
            # First frame only seeds the feature memory.
            self.state_ = replace(self.state_, ids=frame.ids, s=frame.xy)
        else:
            self.state_ = ekf_step(self.state_, (frame.ids, frame.xy), self._last_frame.twist,
                                   dt, self.sigma_s, self.process_noise)
        self.chi_ = self.state_.chi
