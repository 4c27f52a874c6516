"""Planes, rigid transforms, the pinhole camera and synthetic feature fields.

Conventions
-----------
* A plane ``(n, d)`` holds the points ``p`` with ``n @ p + d == 0``; ``n`` is
  unit length.  The canonical sign has ``d > 0`` (``d == 0`` ties are broken
  by making the first nonzero normal component positive).
* :class:`RigidTransform` maps camera-frame points to global-frame points,
  ``p_g = R @ p_c + t``.
* Image coordinates are normalized (metric pinhole): ``(x, y) = (X/Z, Y/Z)``
  with ``+z`` along the optical axis, ``+x`` right and ``+y`` down.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_points, as_vector, readonly

#: Points closer than this along the optical axis are never visible.
Z_MIN = 1e-6

_UP = np.array([0.0, 0.0, 1.0])


class InvalidPlaneError(ValueError):
    """The plane normal is zero or otherwise unusable."""


class DegeneratePlaneError(ValueError):
    """The plane passes through the camera center."""


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane ``n @ p + d = 0``.

    The constructor rescales ``(n, d)`` so that ``n`` is unit length; it does
    not change the sign.  Use :func:`canonicalize` for the canonical gauge.
    """

    normal: np.ndarray
    distance: float

    def __post_init__(self):
        n = as_vector(self.normal, 3, "normal")
        norm = float(np.linalg.norm(n))
        if norm <= 1e-300:
            raise InvalidPlaneError("plane normal must be nonzero")
        d = float(self.distance)
        if not np.isfinite(d):
            raise InvalidPlaneError("plane distance must be finite")
        object.__setattr__(self, "normal", readonly(n / norm))
        object.__setattr__(self, "distance", d / norm)

    @property
    def homogeneous(self) -> np.ndarray:
        """Stacked coefficients ``[n, d]``."""
        return np.append(self.normal, self.distance)

    @property
    def chi(self) -> np.ndarray:
        """Inverse-depth parameter ``-n / d``."""
        if self.distance == 0.0:
            raise DegeneratePlaneError("plane passes through the origin")
        return -self.normal / self.distance

    def residual(self, points) -> np.ndarray:
        pts = as_points(points, 3)
        return pts @ self.normal + self.distance

    def is_close(self, other: "Plane", atol: float = 1e-9) -> bool:
        a, b = canonicalize(self), canonicalize(other)
        return bool(
            np.allclose(a.normal, b.normal, atol=atol) and abs(a.distance - b.distance) <= atol
        )

    def __repr__(self):
        n = np.array2string(np.asarray(self.normal), precision=6)
        return f"Plane(normal={n}, distance={self.distance:.6g})"


def canonicalize(plane: Plane) -> Plane:
    """Return the same plane with ``d > 0`` (or the zero-``d`` tie-break)."""
    n = np.asarray(plane.normal, dtype=float)
    d = plane.distance
    if d < 0.0:
        flip = True
    elif d == 0.0:
        first = n[np.flatnonzero(n)[0]]
        flip = first < 0.0
    else:
        flip = False
    if flip:
        return Plane(-n, -d)
    return Plane(n, d)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3) mapping camera-frame points into the global frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = as_matrix(self.rotation, (3, 3), "rotation")
        t = as_vector(self.translation, 3, "translation")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must have det = +1")
        object.__setattr__(self, "rotation", readonly(R))
        object.__setattr__(self, "translation", readonly(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        M = as_matrix(matrix, (4, 4), "matrix")
        if not np.allclose(M[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("last row of a homogeneous transform must be [0, 0, 0, 1]")
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        pts = as_points(points, 3)
        out = pts @ self.rotation.T + self.translation
        return out[0] if np.ndim(points) == 1 else out

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: ``(self @ other).apply(p) == self.apply(other.apply(p))``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def transform_plane(M: RigidTransform, plane: Plane) -> Plane:
    """Map a plane through ``M``: ``[n'; d'] = M^{-T} [n; d]``, canonicalized."""
    n_new = M.rotation @ plane.normal
    d_new = plane.distance - n_new @ M.translation
    return canonicalize(Plane(n_new, d_new))


@dataclass(frozen=True)
class Feature:
    id: int
    s: tuple[float, float]

    @property
    def x(self) -> float:
        return self.s[0]

    @property
    def y(self) -> float:
        return self.s[1]


@dataclass(frozen=True)
class CameraModel:
    """Visibility frustum given by the full horizontal and vertical FOV in radians."""

    hfov: float
    vfov: float

    def __post_init__(self):
        for name in ("hfov", "vfov"):
            val = float(getattr(self, name))
            if not 0.0 < val < np.pi:
                raise ValueError(f"{name} must lie in (0, pi), got {val}")
            object.__setattr__(self, name, val)

    @classmethod
    def from_degrees(cls, hfov_deg: float, vfov_deg: float) -> "CameraModel":
        return cls(np.radians(hfov_deg), np.radians(vfov_deg))

    @property
    def half_tangents(self) -> tuple[float, float]:
        return float(np.tan(self.hfov / 2.0)), float(np.tan(self.vfov / 2.0))


def project_points(points_camera, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pinhole projection.

    Returns
    -------
    xy : ndarray of shape (n, 2)
        Normalized coordinates; rows of invisible points are NaN.
    visible : ndarray of bool, shape (n,)
    """
    P = as_points(points_camera, 3)
    Z = P[:, 2]
    in_front = Z > Z_MIN
    xy = np.full((len(P), 2), np.nan)
    xy[in_front] = P[in_front, :2] / Z[in_front, None]
    tx, ty = cam.half_tangents
    with np.errstate(invalid="ignore"):
        visible = in_front & (np.abs(xy[:, 0]) <= tx) & (np.abs(xy[:, 1]) <= ty)
    xy[~visible] = np.nan
    return xy, visible


def project(point_camera, cam: CameraModel, feature_id: int = 0) -> Feature | None:
    """Project one camera-frame point; ``None`` when it is not visible."""
    xy, visible = project_points(as_vector(point_camera, 3, "point_camera"), cam)
    if not visible[0]:
        return None
    return Feature(feature_id, (float(xy[0, 0]), float(xy[0, 1])))


def inverse_depth(plane_c: Plane, f: Feature) -> float:
    """``1/Z`` of the plane point seen along the ray through ``f``."""
    if plane_c.distance == 0.0:
        raise DegeneratePlaneError("plane passes through the camera center")
    sbar = np.array([f.s[0], f.s[1], 1.0])
    return float(plane_c.chi @ sbar)


@dataclass(frozen=True)
class PlaneExtent:
    """Axis-aligned rectangle in the plane's own 2-D chart (see :func:`plane_basis`)."""

    u: tuple[float, float]
    v: tuple[float, float]

    def __post_init__(self):
        for name in ("u", "v"):
            lo, hi = (float(x) for x in getattr(self, name))
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise ValueError(f"degenerate extent along {name}: [{lo}, {hi}]")
            object.__setattr__(self, name, (lo, hi))


def plane_basis(plane: Plane) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chart ``p = origin + a*u_axis + b*v_axis`` of a plane.

    ``origin`` is the foot of the perpendicular from the global origin,
    ``u_axis`` is horizontal (``up x n``) and ``v_axis = n x u_axis`` points
    as close to global up as the plane allows.  Horizontal planes use ``+x``
    as ``u_axis``.
    """
    n = np.asarray(plane.normal)
    u = np.cross(_UP, n)
    if np.linalg.norm(u) < 1e-9:
        u = np.array([1.0, 0.0, 0.0]) - n[0] * n
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return -plane.distance * n, u, v


def plane_chart_coords(plane: Plane, points) -> np.ndarray:
    origin, u, v = plane_basis(plane)
    rel = as_points(points, 3) - origin
    return np.column_stack([rel @ u, rel @ v])


def sample_plane_points(plane_g: Plane, extent: PlaneExtent, count: int, seed: int) -> np.ndarray:
    """Uniformly sample ``count`` points on a rectangle of ``plane_g``.

    Draws are made point by point, so for a fixed seed the first ``k`` points
    do not depend on ``count``: smaller layouts are subsets of larger ones.
    """
    if int(count) != count or count < 1:
        raise ValueError(f"count must be a positive integer, got {count}")
    rng = np.random.default_rng(seed)
    r = rng.random((int(count), 2))
    a = extent.u[0] + (extent.u[1] - extent.u[0]) * r[:, 0]
    b = extent.v[0] + (extent.v[1] - extent.v[0]) * r[:, 1]
    origin, u, v = plane_basis(plane_g)
    pts = origin + a[:, None] * u + b[:, None] * v
    # Re-project onto the plane to remove accumulated rounding.
    pts -= np.outer(pts @ plane_g.normal + plane_g.distance, plane_g.normal)
    return pts


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


#: Body (x forward, y left, z up) to camera (z forward, x right, y down).
FORWARD_CAMERA_MOUNT = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def angle_between_normals(a, b) -> float:
    """``arccos(a @ b)`` for unit vectors, clipped against rounding."""
    return float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))
