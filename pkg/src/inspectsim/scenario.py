"""Scenario description and its TOML file format (``schema = 1``).

A scenario file is a TOML document::

    schema = 1
    name = "fig3"
    mode = "observer"            # or "closed_loop"
    duration = 40.0              # s
    seed = 0                     # measurement noise
    layout_seed = 0              # feature positions
    camera_rate = 10.0           # Hz; the control loop runs at the same rate
    sample_interval = 0.1        # s, estimate sampling period of the controller
    yaw_policy = "fixed"         # or "align"
    yaw_rate_max = 0.3           # rad/s, align mode only
    noise = [0.0, 0.0]           # diagonal of the feature noise covariance
    ekf = false                  # also run the EKF baseline on the same frames

    [camera]   hfov_deg, vfov_deg, mount (3x3), mount_offset, max_tracks
    [initial]  position, velocity, yaw_deg, chi
    [observer] gain_s, gain_chi, chi_min
    [ekf_config] p0, sigma_s, process_noise
    [metrics]  theta_n, theta_d, pe_window, pe_beta
    [spec]     d_s, d_0, d_c, v_r, v_max, u_max, n_c, n_a, boundary, norm, hysteresis, d_ref
    [mpc]      horizon, q, r, terminal_radius, terminal_weight, tol, max_iter, compensation_sign

    [[planes]] normal, distance, extent_u, extent_v, features, front

Plane extents are in the plane's own chart (see
:func:`inspectsim.geometry.plane_basis`); ``front`` is a point on the side
the plane is seen from (default: the initial camera position).  ``max_tracks``
caps the number of features handed to the estimators per frame.  In observer
mode the platform keeps its initial velocity; in closed-loop mode ``[spec]``
is required.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .controller import InspectionSpec, MPCConfig, PlatformState
from .geometry import FORWARD_CAMERA_MOUNT, CameraModel, Plane, PlaneExtent, RigidTransform

SCHEMA_VERSION = 1
FIGURE_TAGS = ("fig3", "fig4", "fig5", "fig6-9", "compare")


class ScenarioError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass(frozen=True, eq=False)
class PlaneSpec:
    plane: Plane
    extent: PlaneExtent
    features: int
    front: np.ndarray | None = None   # a point on the visible side; None: initial camera


@dataclass(frozen=True, eq=False)
class EKFConfig:
    p0: float = 0.01
    sigma_s: float | None = None     # None: use the scenario noise (floored at 1e-6)
    process_noise: float = 1e-8


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    planes: tuple[PlaneSpec, ...]
    initial: PlatformState
    duration: float
    mode: str = "observer"
    seed: int = 0
    layout_seed: int = 0
    noise: tuple[float, float] = (0.0, 0.0)
    twist_noise: float = 0.0
    camera: CameraModel = field(default_factory=lambda: CameraModel.from_degrees(46.0, 38.0))
    mount: RigidTransform = field(default_factory=lambda: RigidTransform(FORWARD_CAMERA_MOUNT))
    max_tracks: int | None = None
    camera_rate: float = 10.0
    sample_interval: float = 0.1
    initial_yaw: float = 0.0
    chi0: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.2]))
    gain_s: float = 12.0
    gain_chi: float = 0.95
    chi_min: float = 1e-4
    yaw_policy: str = "fixed"
    yaw_rate_max: float = 0.3
    spec: InspectionSpec | None = None
    mpc: MPCConfig = field(default_factory=MPCConfig)
    ekf: EKFConfig | None = None
    theta_n: float = 0.05
    theta_d: float = 0.1
    pe_window: float = 1.0
    pe_beta: float = 1e-3

    def __post_init__(self):
        if not self.planes:
            raise ScenarioError("planes", "at least one plane is required")
        if not self.duration >= 0.0:
            raise ScenarioError("duration", "must be >= 0")
        if self.camera_rate <= 0:
            raise ScenarioError("camera_rate", "must be > 0")
        if self.mode not in ("observer", "closed_loop"):
            raise ScenarioError("mode", "must be 'observer' or 'closed_loop'")
        if self.mode == "closed_loop" and self.spec is None:
            raise ScenarioError("spec", "required in closed_loop mode")
        if self.yaw_policy not in ("fixed", "align"):
            raise ScenarioError("yaw_policy", "must be 'fixed' or 'align'")
        ratio = self.sample_interval / self.dt
        if self.sample_interval <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ScenarioError("sample_interval", "must be a positive multiple of 1/camera_rate")
        if min(self.noise) < 0:
            raise ScenarioError("noise", "variances must be >= 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.camera_rate

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.camera_rate))

    @property
    def sample_every(self) -> int:
        return int(round(self.sample_interval / self.dt))


# -- parsing ---------------------------------------------------------------------------------

_TOP_KEYS = {
    "schema", "name", "mode", "duration", "seed", "layout_seed", "camera_rate", "control_rate",
    "sample_interval", "yaw_policy", "yaw_rate_max", "noise", "twist_noise", "ekf",
    "camera", "initial", "observer", "ekf_config", "metrics", "spec", "mpc", "planes",
}


def _num(d: dict, key: str, path: str, default=None, *, positive=False, nonneg=False, integer=False):
    if key not in d:
        if default is None:
            raise ScenarioError(f"{path}{key}", "missing required field")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(f"{path}{key}", f"expected a number, got {type(val).__name__}")
    if integer and int(val) != val:
        raise ScenarioError(f"{path}{key}", "expected an integer")
    if not np.isfinite(val):
        raise ScenarioError(f"{path}{key}", "must be finite")
    if positive and val <= 0:
        raise ScenarioError(f"{path}{key}", "must be > 0")
    if nonneg and val < 0:
        raise ScenarioError(f"{path}{key}", "must be >= 0")
    return int(val) if integer else float(val)


def _vec(d: dict, key: str, path: str, size: int, default=None) -> np.ndarray:
    if key not in d:
        if default is None:
            raise ScenarioError(f"{path}{key}", "missing required field")
        return np.array(default, dtype=float)
    val = d[key]
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}{key}", "expected a list of numbers") from None
    if arr.shape != (size,):
        raise ScenarioError(f"{path}{key}", f"expected {size} numbers, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{path}{key}", "must be finite")
    return arr


def _str(d: dict, key: str, path: str, default: str, choices=None) -> str:
    val = d.get(key, default)
    if not isinstance(val, str):
        raise ScenarioError(f"{path}{key}", "expected a string")
    if choices is not None and val not in choices:
        raise ScenarioError(f"{path}{key}", f"must be one of {', '.join(choices)}")
    return val


def _table(d: dict, key: str, required=False) -> dict:
    if key not in d:
        if required:
            raise ScenarioError(key, "missing required table")
        return {}
    if not isinstance(d[key], dict):
        raise ScenarioError(key, "expected a table")
    return d[key]


def _check_keys(d: dict, allowed: set, path: str):
    for key in d:
        if key not in allowed:
            raise ScenarioError(f"{path}{key}", "unknown field")


def _planes(doc: dict) -> tuple[PlaneSpec, ...]:
    raw = doc.get("planes")
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("planes", "expected a non-empty array of tables")
    out = []
    for i, p in enumerate(raw):
        path = f"planes[{i}]."
        if not isinstance(p, dict):
            raise ScenarioError(f"planes[{i}]", "expected a table")
        _check_keys(p, {"normal", "distance", "extent_u", "extent_v", "features", "front"}, path)
        n = _vec(p, "normal", path, 3)
        if np.linalg.norm(n) < 1e-9:
            raise ScenarioError(f"{path}normal", "must be nonzero")
        try:
            extent = PlaneExtent(tuple(_vec(p, "extent_u", path, 2)), tuple(_vec(p, "extent_v", path, 2)))
        except ValueError as exc:
            raise ScenarioError(f"{path}extent", str(exc)) from None
        count = _num(p, "features", path, integer=True, positive=True)
        front = _vec(p, "front", path, 3) if "front" in p else None
        plane = Plane(n, _num(p, "distance", path))
        if front is not None and abs(plane.normal @ front + plane.distance) < 1e-9:
            raise ScenarioError(f"{path}front", "point lies on the plane")
        out.append(PlaneSpec(plane, extent, count, front))
    return tuple(out)


def _spec(t: dict) -> InspectionSpec:
    path = "spec."
    _check_keys(t, {"d_s", "d_0", "d_c", "v_r", "v_max", "u_max", "n_c", "n_a", "boundary",
                    "norm", "hysteresis", "d_ref"}, path)
    boundary = tuple(_vec(t, "boundary", path, 2)) if "boundary" in t else None
    kwargs = dict(
        d_s=_num(t, "d_s", path, positive=True),
        d_0=_num(t, "d_0", path),
        d_c=_num(t, "d_c", path, positive=True),
        v_r=_num(t, "v_r", path, positive=True),
        v_max=_num(t, "v_max", path, positive=True),
        u_max=_num(t, "u_max", path, positive=True),
        n_c=_vec(t, "n_c", path, 3, default=[0.0, 0.0, 1.0]),
        n_a=_num(t, "n_a", path, 0, integer=True, nonneg=True),
        boundary=boundary,
        norm=_str(t, "norm", path, "inf", ("inf", "2")),
        hysteresis=_num(t, "hysteresis", path, 0.5, nonneg=True),
        d_ref=_num(t, "d_ref", path) if "d_ref" in t else None,
    )
    try:
        return InspectionSpec(**kwargs)
    except ValueError as exc:
        raise ScenarioError("spec", str(exc)) from None


def _mpc(t: dict, ts: float) -> MPCConfig:
    path = "mpc."
    _check_keys(t, {"horizon", "q", "r", "terminal_radius", "terminal_weight", "tol",
                    "max_iter", "compensation_sign"}, path)
    try:
        return MPCConfig(
            horizon=_num(t, "horizon", path, 20, integer=True, positive=True),
            ts=ts,
            q=tuple(_vec(t, "q", path, 3, default=[10.0, 10.0, 5.0])),
            r=tuple(_vec(t, "r", path, 3, default=[1.0, 1.0, 1.0])),
            terminal_radius=_num(t, "terminal_radius", path, 0.05, nonneg=True),
            terminal_weight=_num(t, "terminal_weight", path, 1e4, positive=True),
            tol=_num(t, "tol", path, 1e-8, positive=True),
            max_iter=_num(t, "max_iter", path, 10000, integer=True, positive=True),
            compensation_sign=_str(t, "compensation_sign", path, "negated", ("negated", "direct")),
        )
    except ValueError as exc:
        raise ScenarioError("mpc", str(exc)) from None


def parse_scenario(doc: dict) -> Scenario:
    """Validate a decoded scenario document and build the :class:`Scenario`."""
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "expected a table")
    if "schema" not in doc:
        raise ScenarioError("schema", "missing required field")
    if doc["schema"] != SCHEMA_VERSION:
        raise ScenarioError("schema", f"unsupported schema version {doc['schema']!r}")
    _check_keys(doc, _TOP_KEYS, "")
    rate = _num(doc, "camera_rate", "", 10.0, positive=True)
    if "control_rate" in doc and _num(doc, "control_rate", "", positive=True) != rate:
        raise ScenarioError("control_rate", "must equal camera_rate")
    ts = 1.0 / rate

    cam = _table(doc, "camera")
    _check_keys(cam, {"hfov_deg", "vfov_deg", "mount", "mount_offset", "max_tracks"}, "camera.")
    try:
        camera = CameraModel.from_degrees(_num(cam, "hfov_deg", "camera.", 46.0),
                                          _num(cam, "vfov_deg", "camera.", 38.0))
    except ValueError as exc:
        raise ScenarioError("camera", str(exc)) from None
    mount_r = np.array(cam.get("mount", FORWARD_CAMERA_MOUNT), dtype=float)
    if mount_r.shape != (3, 3):
        raise ScenarioError("camera.mount", "expected a 3x3 matrix")
    try:
        mount = RigidTransform(mount_r, _vec(cam, "mount_offset", "camera.", 3, default=[0, 0, 0]))
    except ValueError as exc:
        raise ScenarioError("camera.mount", str(exc)) from None

    ini = _table(doc, "initial", required=True)
    _check_keys(ini, {"position", "velocity", "yaw_deg", "chi"}, "initial.")
    obs = _table(doc, "observer")
    _check_keys(obs, {"gain_s", "gain_chi", "chi_min"}, "observer.")
    met = _table(doc, "metrics")
    _check_keys(met, {"theta_n", "theta_d", "pe_window", "pe_beta"}, "metrics.")

    ekf = None
    use_ekf = doc.get("ekf", False)
    if not isinstance(use_ekf, bool):
        raise ScenarioError("ekf", "expected true or false")
    if use_ekf:
        et = _table(doc, "ekf_config")
        _check_keys(et, {"p0", "sigma_s", "process_noise"}, "ekf_config.")
        ekf = EKFConfig(
            p0=_num(et, "p0", "ekf_config.", 0.01, positive=True),
            sigma_s=_num(et, "sigma_s", "ekf_config.", positive=True) if "sigma_s" in et else None,
            process_noise=_num(et, "process_noise", "ekf_config.", 1e-8, nonneg=True),
        )

    mode = _str(doc, "mode", "", "observer", ("observer", "closed_loop"))
    spec = _spec(_table(doc, "spec")) if "spec" in doc else None
    if mode == "closed_loop" and spec is None:
        raise ScenarioError("spec", "required in closed_loop mode")
    name = doc.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError("name", "expected a string")

    return Scenario(
        name=name,
        planes=_planes(doc),
        initial=PlatformState(_vec(ini, "position", "initial.", 3),
                              _vec(ini, "velocity", "initial.", 3, default=[0, 0, 0])),
        duration=_num(doc, "duration", "", nonneg=True),
        mode=mode,
        seed=_num(doc, "seed", "", 0, integer=True, nonneg=True),
        layout_seed=_num(doc, "layout_seed", "", 0, integer=True, nonneg=True),
        noise=tuple(_vec(doc, "noise", "", 2, default=[0.0, 0.0])),
        twist_noise=_num(doc, "twist_noise", "", 0.0, nonneg=True),
        camera=camera,
        mount=mount,
        max_tracks=_num(cam, "max_tracks", "camera.", integer=True, positive=True)
        if "max_tracks" in cam else None,
        camera_rate=rate,
        sample_interval=_num(doc, "sample_interval", "", ts, positive=True),
        initial_yaw=float(np.radians(_num(ini, "yaw_deg", "initial.", 0.0))),
        chi0=_vec(ini, "chi", "initial.", 3, default=[0.0, 0.0, 0.2]),
        gain_s=_num(obs, "gain_s", "observer.", 12.0, nonneg=True),
        gain_chi=_num(obs, "gain_chi", "observer.", 0.95, nonneg=True),
        chi_min=_num(obs, "chi_min", "observer.", 1e-4, positive=True),
        yaw_policy=_str(doc, "yaw_policy", "", "fixed", ("fixed", "align")),
        yaw_rate_max=_num(doc, "yaw_rate_max", "", 0.3, positive=True),
        spec=spec,
        mpc=_mpc(_table(doc, "mpc"), ts),
        ekf=ekf,
        theta_n=_num(met, "theta_n", "metrics.", 0.05, positive=True),
        theta_d=_num(met, "theta_d", "metrics.", 0.1, positive=True),
        pe_window=_num(met, "pe_window", "metrics.", 1.0, positive=True),
        pe_beta=_num(met, "pe_beta", "metrics.", 1e-3, positive=True),
    )


def loads_scenario(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError("<file>", f"not valid TOML: {exc}") from None
    return parse_scenario(doc)


def bundled_path(tag: str) -> Path:
    if tag not in FIGURE_TAGS:
        raise ScenarioError("<scenario>", f"unknown figure tag {tag!r}")
    return Path(str(resources.files("inspectsim") / "scenarios" / f"{tag}.toml"))


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a file path or a bundled figure tag."""
    if isinstance(source, str) and source in FIGURE_TAGS:
        source = bundled_path(source)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {path}: {exc.strerror or exc}") from None
    return loads_scenario(text)
