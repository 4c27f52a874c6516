"""Adaptive inverse-depth plane observer and excitation analysis.

The plane is carried as ``chi = -n/d`` in the camera frame.  A feature at
normalized coordinates ``s = (x, y)`` with ``sbar = [x, y, 1]`` then moves as

    s_dot = flow_prior(s, w) + Omega(s, v).T @ chi
    chi_dot = chi chi^T v - w x chi

and the observer runs a copy of these dynamics driven by the image error
``xi = s - s_hat``.
"""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import NonFiniteInputError, as_vector, check_finite_array, check_positive
from .geometry import Feature, Plane

logger = logging.getLogger(__name__)

#: Smallest ``|chi|`` accepted by :func:`plane_estimate` (planes beyond 10 km).
CHI_MIN = 1e-4


class PlaneAtInfinityError(ValueError):
    """``|chi|`` is too small to recover a finite plane."""


class DuplicateFeatureError(ValueError):
    """A frame carries the same feature id twice."""


@dataclass(frozen=True)
class CameraTwist:
    """Camera-frame translational (m/s) and angular (rad/s) velocity."""

    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "v", as_vector(self.v, 3, "v"))
        object.__setattr__(self, "w", as_vector(self.w, 3, "w"))


@dataclass(frozen=True)
class TrackedFeature:
    id: int
    s: np.ndarray
    s_hat: np.ndarray
    age: int

    @property
    def xi(self) -> np.ndarray:
        return self.s - self.s_hat


@dataclass(frozen=True, eq=False)
class ObserverState:
    """Inverse-depth estimate plus the tracked feature set.

    Tracks are stored column-wise, sorted by id: ``ids`` (m,), measured ``s``
    (m, 2), estimated ``s_hat`` (m, 2) and ``age`` in frames (m,).
    """

    chi: np.ndarray
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    s: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    s_hat: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    age: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    gain_s: float = 12.0
    gain_chi: float = 0.95

    @classmethod
    def initial(cls, chi0, gain_s: float = 12.0, gain_chi: float = 0.95) -> "ObserverState":
        check_positive(gain_s, "gain_s", strict=False)
        check_positive(gain_chi, "gain_chi", strict=False)
        return cls(chi=as_vector(chi0, 3, "chi0"), gain_s=float(gain_s), gain_chi=float(gain_chi))

    @property
    def xi(self) -> np.ndarray:
        return self.s - self.s_hat

    @property
    def tracks(self) -> dict[int, TrackedFeature]:
        return {
            int(i): TrackedFeature(int(i), self.s[k], self.s_hat[k], int(self.age[k]))
            for k, i in enumerate(self.ids)
        }

    def __len__(self):
        return len(self.ids)


def _sbar(s: np.ndarray) -> np.ndarray:
    return np.column_stack([s, np.ones(len(s))])


def _alphas(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-feature row ``[x v_z - v_x, y v_z - v_y]``, shape (m, 2)."""
    return s * v[2] - v[:2]


def omega(f: Feature, v_c) -> np.ndarray:
    """3x2 regressor ``Omega = [x, y, 1]^T [x v_z - v_x, y v_z - v_y]``."""
    v = as_vector(v_c, 3, "v_c")
    s = np.asarray(f.s, dtype=float).reshape(1, 2)
    return np.outer(_sbar(s)[0], _alphas(s, v)[0])


def _flow_prior_rows(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    x, y = s[:, 0], s[:, 1]
    fx = x * y * w[0] - (1.0 + x * x) * w[1] + y * w[2]
    fy = (1.0 + y * y) * w[0] - x * y * w[1] - x * w[2]
    return np.column_stack([fx, fy])


def flow_prior(f: Feature, w_c) -> np.ndarray:
    """Rotation-induced image velocity of one feature."""
    w = as_vector(w_c, 3, "w_c")
    return _flow_prior_rows(np.asarray(f.s, dtype=float).reshape(1, 2), w)[0]


def chi_rate(chi: np.ndarray, twist: CameraTwist) -> np.ndarray:
    return chi * (chi @ twist.v) - np.cross(twist.w, chi)


def propagate_chi(chi, twist: CameraTwist, dt: float) -> np.ndarray:
    """One forward-Euler step of the plane-parameter kinematics."""
    check_positive(dt, "dt")
    chi = as_vector(chi, 3, "chi")
    return chi + dt * chi_rate(chi, twist)


def observer_step(st: ObserverState, twist: CameraTwist, dt: float) -> ObserverState:
    """Advance the observer by ``dt`` using the current image errors.

    With no tracked features the correction vanishes and ``chi`` follows the
    open-loop prediction.
    """
    check_positive(dt, "dt")
    v, w = twist.v, twist.w
    chi = st.chi
    if len(st.ids):
        s = st.s
        xi = st.xi
        a = _alphas(s, v)
        sbar = _sbar(s)
        depth_term = (sbar @ chi)[:, None] * a               # Omega_i^T chi
        s_hat = st.s_hat + dt * (_flow_prior_rows(s, w) + depth_term + st.gain_s * xi)
        correction = sbar.T @ np.einsum("ij,ij->i", a, xi)    # sum_i Omega_i xi_i
        check_finite_array(s_hat, "s_hat")
    else:
        s_hat = st.s_hat
        correction = np.zeros(3)
    chi_new = chi + dt * (chi_rate(chi, twist) + st.gain_chi * correction)
    check_finite_array(chi_new, "chi")
    return replace(st, chi=chi_new, s_hat=s_hat)


def _detections_arrays(detections) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(detections, tuple) and len(detections) == 2 and isinstance(detections[0], np.ndarray):
        ids, s = detections
        ids = np.asarray(ids, dtype=np.int64)
        s = np.asarray(s, dtype=float).reshape(-1, 2)
    else:
        detections = list(detections)
        ids = np.array([f.id for f in detections], dtype=np.int64)
        s = np.array([f.s for f in detections], dtype=float).reshape(-1, 2)
    if len(ids) != len(s):
        raise ValueError("ids and coordinates differ in length")
    if not np.all(np.isfinite(s)):
        raise NonFiniteInputError("detections contain non-finite coordinates")
    order = np.argsort(ids, kind="stable")
    ids, s = ids[order], s[order]
    if len(ids) > 1 and np.any(ids[1:] == ids[:-1]):
        dup = ids[1:][ids[1:] == ids[:-1]][0]
        raise DuplicateFeatureError(f"feature id {dup} appears more than once in a frame")
    return ids, s


def ingest_frame(st: ObserverState, detections) -> ObserverState:
    """Replace the track set by a new frame.

    Matched ids keep their ``s_hat``; new ids start with ``s_hat = s``;
    ids missing from the frame are dropped.  ``chi`` is untouched.
    ``detections`` is a sequence of :class:`Feature` or an ``(ids, xy)`` pair.
    """
    ids, s = _detections_arrays(detections)
    s_hat = s.copy()
    age = np.zeros(len(ids), dtype=np.int64)
    if len(st.ids) and len(ids):
        _, new_idx, old_idx = np.intersect1d(ids, st.ids, assume_unique=True, return_indices=True)
        s_hat[new_idx] = st.s_hat[old_idx]
        age[new_idx] = st.age[old_idx] + 1
    return replace(st, ids=ids, s=s, s_hat=s_hat, age=age)


def plane_estimate(chi, chi_min: float = CHI_MIN) -> Plane:
    """Canonical plane with ``-n/d == chi``: ``d = 1/|chi|``, ``n = -chi/|chi|``."""
    chi = as_vector(chi, 3, "chi")
    norm = float(np.linalg.norm(chi))
    if not np.isfinite(norm):
        raise FloatingPointError("chi overflowed; the estimate diverged")
    if norm < chi_min:
        raise PlaneAtInfinityError(f"|chi| = {norm:.3g} is below {chi_min:g}")
    return Plane(-chi / norm, 1.0 / norm)


# -- persistency of excitation ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PEReport:
    gram: np.ndarray
    rank: int
    lambda_min: float
    satisfied: bool


def _as_xy(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return features.reshape(-1, 2).astype(float)
    return np.array([f.s for f in features], dtype=float).reshape(-1, 2)


def pe_gram(features, v_c) -> np.ndarray:
    """``sum_i Omega_i Omega_i^T = sum_i alpha_i^2 sbar_i sbar_i^T``."""
    v = as_vector(v_c, 3, "v_c")
    s = _as_xy(features)
    if len(s) == 0:
        return np.zeros((3, 3))
    a = _alphas(s, v)
    alpha2 = np.einsum("ij,ij->i", a, a)
    sbar = _sbar(s)
    gram = (sbar * alpha2[:, None]).T @ sbar
    return 0.5 * (gram + gram.T)


def _report_from_gram(gram: np.ndarray, beta_threshold: float) -> PEReport:
    eig = np.linalg.eigvalsh(gram)
    lam_max = float(eig[-1])
    if lam_max <= 0.0:
        rank = 0
    else:
        rank = int(np.sum(eig > 1e-8 * lam_max))
    lam_min = max(float(eig[0]), 0.0)
    return PEReport(gram, rank, lam_min, lam_min >= beta_threshold)


def pe_report(features, v_c, beta_threshold: float = 1e-3) -> PEReport:
    """Instantaneous excitation report of one frame."""
    check_positive(beta_threshold, "beta_threshold")
    return _report_from_gram(pe_gram(features, v_c), beta_threshold)


class ExcitationWindow:
    """Sliding approximation of the excitation integral over a window ``T``.

    The window holds ``ceil(T/dt)`` frames and sums ``gram * dt``.
    """

    def __init__(self, window: float = 1.0, dt: float = 0.1, beta_threshold: float = 1e-3):
        self.dt = check_positive(dt, "dt")
        self.beta_threshold = check_positive(beta_threshold, "beta_threshold")
        self.size = max(1, int(np.ceil(check_positive(window, "window") / dt - 1e-9)))
        self._grams: deque[np.ndarray] = deque(maxlen=self.size)

    def push(self, gram: np.ndarray) -> PEReport:
        self._grams.append(gram)
        total = self.dt * np.sum(self._grams, axis=0)
        return _report_from_gram(total, self.beta_threshold)


# -- estimator API ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Frame:
    """One camera frame: time, the twist held until the next frame, detections."""

    t: float
    twist: CameraTwist
    ids: np.ndarray
    xy: np.ndarray

    @classmethod
    def from_features(cls, t: float, twist: CameraTwist, features: Sequence[Feature]) -> "Frame":
        ids, xy = _detections_arrays(features)
        return cls(float(t), twist, ids, xy)

    @property
    def features(self) -> list[Feature]:
        return [Feature(int(i), (float(p[0]), float(p[1]))) for i, p in zip(self.ids, self.xy)]


class _FrameEstimator(BaseEstimator):
    """Shared frame bookkeeping for the streaming plane estimators."""

    def _reset(self):
        raise NotImplementedError

    def _advance(self, frame: Frame, dt: float | None):
        raise NotImplementedError

    def partial_fit(self, frame: Frame):
        """Consume one frame (steps over the interval since the previous one)."""
        if not hasattr(self, "chi_"):
            self._reset()
        last = getattr(self, "_last_frame", None)
        dt = None
        if last is not None:
            dt = frame.t - last.t
            if dt <= 0:
                raise ValueError(f"frame times must increase (got dt={dt})")
        self._advance(frame, dt)
        self._last_frame = frame
        self.n_frames_ += 1
        return self

    def fit(self, frames: Iterable[Frame], y=None):
        self._reset()
        for frame in frames:
            self.partial_fit(frame)
        return self

    def transform(self, frames: Iterable[Frame]) -> np.ndarray:
        """Continue on ``frames``; return the estimate after each one, shape (n, 3)."""
        out = []
        for frame in frames:
            self.partial_fit(frame)
            out.append(self.chi_.copy())
        return np.array(out).reshape(-1, 3)

    def fit_transform(self, frames, y=None, **fit_params):
        self._reset()
        return self.transform(frames)

    def predict(self, X=None) -> Plane:
        """Current camera-frame plane estimate."""
        check_is_fitted(self, "chi_")
        return plane_estimate(self.chi_, self.chi_min)


class PlaneObserver(_FrameEstimator):
    """Streaming plane observer over tracked image features.

    Parameters
    ----------
    gain_s : float
        Image-error feedback gain (identity-scaled).
    gain_chi : float
        Adaptation gain of the plane parameter.
    chi_init : array-like of shape (3,)
        Initial inverse-depth parameter in the camera frame.
    chi_min : float
        Floor on ``|chi|`` when converting to a plane.
    """

    def __init__(self, gain_s=12.0, gain_chi=0.95, chi_init=(0.0, 0.0, 0.2), chi_min=CHI_MIN):
        self.gain_s = gain_s
        self.gain_chi = gain_chi
        self.chi_init = chi_init
        self.chi_min = chi_min

    def _reset(self):
        self.state_ = ObserverState.initial(self.chi_init, self.gain_s, self.gain_chi)
        self.chi_ = self.state_.chi
        self.n_frames_ = 0
        self._last_frame = None

    def _advance(self, frame, dt):
        if dt is not None:
            self.state_ = observer_step(self.state_, self._last_frame.twist, dt)
        self.state_ = ingest_frame(self.state_, (frame.ids, frame.xy))
        self.chi_ = self.state_.chi


# -- track replay ------------------------------------------------------------------------------

REPLAY_COLUMNS = ("t", "vx", "vy", "vz", "wx", "wy", "wz", "id", "x", "y")


def write_replay_csv(frames: Iterable[Frame], fh) -> None:
    """Write frames as CSV, one row per feature.

    A frame without features is kept as a single row with empty ``id, x, y``.
    """
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REPLAY_COLUMNS)
    for fr in frames:
        head = [repr(float(fr.t))] + [repr(float(c)) for c in (*fr.twist.v, *fr.twist.w)]
        if len(fr.ids) == 0:
            writer.writerow(head + ["", "", ""])
        for i, (x, y) in zip(fr.ids, fr.xy):
            writer.writerow(head + [str(int(i)), repr(float(x)), repr(float(y))])


def read_replay_csv(fh) -> list[Frame]:
    """Inverse of :func:`write_replay_csv`; rows of one frame must be contiguous."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header) != REPLAY_COLUMNS:
        raise ValueError(f"replay header must be {','.join(REPLAY_COLUMNS)}")
    frames: list[Frame] = []
    key = None
    ids: list[int] = []
    xy: list[tuple[float, float]] = []

    def flush():
        if key is not None:
            t, tw = key
            frames.append(Frame(t, CameraTwist(tw[:3], tw[3:]), np.array(ids, dtype=np.int64),
                                np.array(xy, dtype=float).reshape(-1, 2)))

    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(REPLAY_COLUMNS):
            raise ValueError(f"line {lineno}: expected {len(REPLAY_COLUMNS)} fields")
        try:
            t = float(row[0])
            tw = tuple(float(c) for c in row[1:7])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed number") from None
        if key is None or key[0] != t:
            if key is not None and t < key[0]:
                raise ValueError(f"line {lineno}: time goes backwards")
            flush()
            key, ids, xy = (t, tw), [], []
        if row[7] != "":
            ids.append(int(row[7]))
            xy.append((float(row[8]), float(row[9])))
    flush()
    return [Frame.from_features(f.t, f.twist, f.features) for f in frames]
