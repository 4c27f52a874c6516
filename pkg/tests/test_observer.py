import io

import numpy as np
import pytest
from sklearn.base import clone

from inspectsim.geometry import Feature, Plane, PlaneExtent, sample_plane_points
from inspectsim.observer import (
    CameraTwist,
    DuplicateFeatureError,
    ExcitationWindow,
    Frame,
    ObserverState,
    PlaneAtInfinityError,
    PlaneObserver,
    chi_rate,
    flow_prior,
    ingest_frame,
    observer_step,
    omega,
    pe_gram,
    pe_report,
    plane_estimate,
    propagate_chi,
    read_replay_csv,
    write_replay_csv,
)


def f(x, y, i=0):
    return Feature(i, (x, y))


# -- regressor and flow ----------------------------------------------------------------------

def test_omega_substitutions():
    np.testing.assert_allclose(omega(f(0, 0), [1, 0, 0]), [[0, 0], [0, 0], [-1, 0]])
    np.testing.assert_allclose(omega(f(1, 1), [0, 0, 1]), np.ones((3, 2)))


def test_omega_linear_in_velocity():
    rng = np.random.default_rng(0)
    for _ in range(10):
        ft = f(*rng.uniform(-0.4, 0.4, 2))
        v = rng.normal(size=3)
        c = rng.normal()
        np.testing.assert_allclose(omega(ft, c * v), c * omega(ft, v), atol=1e-15)


def test_flow_prior_values():
    np.testing.assert_allclose(flow_prior(f(0.3, -0.2), [0, 0, 0]), [0, 0])
    np.testing.assert_allclose(flow_prior(f(0, 0), [0, 1, 0]), [-1, 0])
    np.testing.assert_allclose(flow_prior(f(0, 0), [1, 0, 0]), [0, 1])


def test_image_motion_model_matches_projection():
    # finite-difference flow of a real point against flow_prior + Omega^T chi
    rng = np.random.default_rng(1)
    plane = Plane([0.2, -0.1, -1.0], 6.0)
    P = sample_plane_points(plane, PlaneExtent((-1, 1), (-1, 1)), 1, seed=2)[0]
    v, w = rng.normal(size=3) * 0.3, rng.normal(size=3) * 0.1
    h = 1e-6
    # camera motion: point velocity in the camera frame is -v - w x P
    P2 = P + h * (-v - np.cross(w, P))
    s1, s2 = P[:2] / P[2], P2[:2] / P2[2]
    ft = f(*s1)
    model = flow_prior(ft, w) + omega(ft, v).T @ plane.chi
    np.testing.assert_allclose((s2 - s1) / h, model, rtol=1e-4, atol=1e-6)


# -- observer step ---------------------------------------------------------------------------

def test_observer_step_fixed_point():
    st = ObserverState.initial([0.01, 0.0, 0.1])
    st = ingest_frame(st, [f(0.1, 0.1, 1), f(-0.2, 0.05, 2)])
    out = observer_step(st, CameraTwist(), 0.1)
    np.testing.assert_array_equal(out.chi, st.chi)
    np.testing.assert_array_equal(out.s_hat, st.s_hat)


def test_observer_step_by_hand():
    # s = (0.01, 0), s_hat = (0, 0), chi = [0, 0, 0.2], v = [1, 0, 0], w = 0
    # alpha = [x vz - vx, y vz - vy] = [-1, 0]; sbar = [0.01, 0, 1]; Omega^T chi = [-0.2, 0]
    # s_hat' = 0.1 * ([-0.2, 0] + 12 * [0.01, 0]) = [-0.008, 0]
    # sum Omega xi = sbar * (alpha . xi) = [-1e-4, 0, -0.01]; chi chi^T v = 0
    # chi' = [0, 0, 0.2] + 0.1 * 0.95 * [-1e-4, 0, -0.01]
    st = ObserverState(chi=np.array([0.0, 0.0, 0.2]), ids=np.array([0]),
                       s=np.array([[0.01, 0.0]]), s_hat=np.array([[0.0, 0.0]]),
                       age=np.array([0]), gain_s=12.0, gain_chi=0.95)
    out = observer_step(st, CameraTwist([1, 0, 0], [0, 0, 0]), 0.1)
    np.testing.assert_allclose(out.s_hat, [[-0.008, 0.0]], atol=1e-15)
    np.testing.assert_allclose(out.chi, [-9.5e-6, 0.0, 0.19905], atol=1e-15)


def test_observer_step_rejects_nonfinite():
    st = ObserverState.initial([0, 0, 0.2])
    st = ingest_frame(st, [f(0.1, 0.1)])
    with pytest.raises(ValueError):
        observer_step(st, CameraTwist([np.nan, 0, 0]), 0.1)
    with pytest.raises(ValueError):
        observer_step(st, CameraTwist(), 0.0)


def test_observer_step_without_tracks_is_prediction():
    st = ObserverState.initial([0.02, -0.01, 0.2])
    tw = CameraTwist([0.3, 0.1, 0.5], [0.01, 0.02, -0.03])
    out = observer_step(st, tw, 0.1)
    np.testing.assert_allclose(out.chi, propagate_chi(st.chi, tw, 0.1), atol=1e-15)


# -- chi kinematics --------------------------------------------------------------------------

def test_chi_rate_approach():
    # d = 5 shrinking at 1 m/s: d(1/d)/dt = 1/25
    np.testing.assert_allclose(chi_rate(np.array([0, 0, 0.2]), CameraTwist([0, 0, 1])), [0, 0, 0.04])
    np.testing.assert_allclose(propagate_chi([0, 0, 0.2], CameraTwist([0, 0, 1]), 1.0), [0, 0, 0.24])


def test_propagate_chi_stationary():
    chi = np.array([0.1, -0.2, 0.3])
    np.testing.assert_array_equal(propagate_chi(chi, CameraTwist(), 0.1), chi)


def test_propagate_chi_rotation_norm_second_order():
    chi = np.array([0.1, -0.2, 0.3])
    w = np.array([0.3, -0.5, 0.2])
    for dt in (1e-2, 1e-3):
        out = propagate_chi(chi, CameraTwist(np.zeros(3), w), dt)
        assert abs(np.linalg.norm(out) - np.linalg.norm(chi)) <= np.linalg.norm(w) ** 2 * dt ** 2


# -- plane recovery --------------------------------------------------------------------------

def test_plane_estimate_facade():
    p = plane_estimate([0.025, 0.1, 0.0])
    np.testing.assert_allclose(p.normal, [-0.2425, -0.9701, 0.0], atol=1e-4)
    assert p.distance == pytest.approx(9.7011, abs=1e-3)


def test_plane_estimate_axis():
    p = plane_estimate([0, 0, 0.2])
    np.testing.assert_allclose(p.normal, [0, 0, -1])
    assert p.distance == pytest.approx(5.0)


def test_plane_estimate_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        plane = Plane(rng.normal(size=3), rng.uniform(0.5, 50))
        p = plane_estimate(plane.chi)
        np.testing.assert_allclose(p.normal, plane.normal, atol=1e-12)
        assert p.distance == pytest.approx(plane.distance, rel=1e-12)
        np.testing.assert_allclose(p.chi, plane.chi, rtol=1e-12)


def test_plane_estimate_at_infinity():
    with pytest.raises(PlaneAtInfinityError):
        plane_estimate([0, 0, 1e-5])
    with pytest.raises(ValueError):
        plane_estimate([np.inf, 0, 0])
    with pytest.raises(FloatingPointError):
        plane_estimate([1e200, 1e200, 0.0])


# -- excitation ------------------------------------------------------------------------------

def test_pe_gram_single_feature():
    np.testing.assert_allclose(pe_gram([f(0, 0)], [1, 0, 0]), np.diag([0, 0, 1.0]))


def test_pe_gram_equals_sum_of_omega_products():
    rng = np.random.default_rng(4)
    feats = [f(*rng.uniform(-0.4, 0.4, 2), i) for i in range(12)]
    v = rng.normal(size=3)
    ref = sum(omega(ft, v) @ omega(ft, v).T for ft in feats)
    np.testing.assert_allclose(pe_gram(feats, v), ref, atol=1e-12)


def test_pe_stationary_camera():
    feats = [f(0.1, 0.2), f(-0.3, 0.1, 1), f(0.2, -0.2, 2), f(0.0, 0.3, 3)]
    rep = pe_report(feats, [0, 0, 0])
    assert rep.rank == 0 and not rep.satisfied
    np.testing.assert_array_equal(rep.gram, np.zeros((3, 3)))


def test_pe_empty_set():
    np.testing.assert_array_equal(pe_gram([], [1, 0, 0]), np.zeros((3, 3)))


def test_pe_rank_conditions():
    v = [0.5, 0, 0]
    assert pe_report([f(0.1, 0.2)], v).rank <= 1
    collinear = [f(0.0, 0.0), f(0.1, 0.1, 1), f(0.2, 0.2, 2)]
    assert pe_report(collinear, [0.3, -0.2, 0.4]).rank <= 2
    four = [f(0.1, 0.1), f(-0.2, 0.15, 1), f(0.05, -0.3, 2), f(0.3, 0.25, 3)]
    rep = pe_report(four, v, beta_threshold=1e-6)
    assert rep.rank == 3 and rep.satisfied


def test_pe_three_generic_points_suffice():
    # three non-collinear points with nonzero alpha already give full rank
    three = [f(0.1, 0.1), f(-0.2, 0.15, 1), f(0.05, -0.3, 2)]
    assert pe_report(three, [0.5, 0, 0]).rank == 3


def test_excitation_window_sums_frames():
    win = ExcitationWindow(window=1.0, dt=0.1)
    g = np.eye(3)
    for _ in range(15):
        rep = win.push(g)
    np.testing.assert_allclose(rep.gram, np.eye(3) * 1.0)
    assert rep.satisfied


# -- frame ingestion -------------------------------------------------------------------------

def test_ingest_carries_estimates():
    st = ObserverState.initial([0, 0, 0.2])
    st = ingest_frame(st, [f(0.1, 0.1, 1), f(0.2, 0.2, 2)])
    st = observer_step(st, CameraTwist([0.5, 0, 0]), 0.1)
    s_hat_before = st.tracks
    st2 = ingest_frame(st, [f(0.15, 0.1, 1), f(0.25, 0.2, 2)])
    for i in (1, 2):
        np.testing.assert_array_equal(st2.tracks[i].s_hat, s_hat_before[i].s_hat)
        assert st2.tracks[i].age == 1
    np.testing.assert_allclose(st2.tracks[1].s, [0.15, 0.1])
    np.testing.assert_array_equal(st2.chi, st.chi)


def test_ingest_new_ids_start_with_zero_error():
    st = ObserverState.initial([0, 0, 0.2])
    st = ingest_frame(st, [f(0.1, 0.1, 1)])
    st = ingest_frame(st, [f(0.3, 0.1, 5), f(-0.1, 0.2, 6)])
    np.testing.assert_array_equal(st.xi, np.zeros((2, 2)))
    assert list(st.ids) == [5, 6]


def test_ingest_empty_then_prediction():
    st = ObserverState.initial([0.01, 0, 0.2])
    st = ingest_frame(st, [f(0.1, 0.1, 1)])
    st = ingest_frame(st, [])
    assert len(st) == 0
    tw = CameraTwist([0.5, 0, 0])
    np.testing.assert_allclose(observer_step(st, tw, 0.1).chi, propagate_chi(st.chi, tw, 0.1))


def test_ingest_duplicate_ids():
    st = ObserverState.initial([0, 0, 0.2])
    with pytest.raises(DuplicateFeatureError):
        ingest_frame(st, [f(0.1, 0.1, 3), f(0.2, 0.1, 3)])


# -- estimator API and replay ----------------------------------------------------------------

def synthetic_frames(n=60, dt=0.1):
    """Frontal facade 8 m ahead, camera translating sideways at 0.5 m/s."""
    plane_pts = np.column_stack([np.linspace(-3, 3, 25), np.tile([-1.0, 0.0, 1.0, 0.5, -0.5], 5),
                                 np.full(25, 8.0)])
    v = np.array([0.5, 0.0, 0.1])
    frames = []
    for k in range(n):
        c = k * dt * v
        P = plane_pts - c
        xy = P[:, :2] / P[:, 2:]
        vis = np.all(np.abs(xy) < 0.5, axis=1)
        frames.append(Frame(k * dt, CameraTwist(v, np.zeros(3)), np.flatnonzero(vis), xy[vis]))
    return frames


def test_plane_observer_estimator_api():
    obs = PlaneObserver(gain_s=12.0, gain_chi=0.95, chi_init=(0.0, 0.0, 0.2))
    params = obs.get_params()
    assert params["gain_s"] == 12.0 and params["chi_init"] == (0.0, 0.0, 0.2)
    copy = clone(obs).set_params(gain_chi=2.0)
    assert copy.gain_chi == 2.0 and obs.gain_chi == 0.95
    frames = synthetic_frames()
    path = obs.fit_transform(frames)
    assert path.shape == (len(frames), 3)
    plane = obs.predict()
    assert plane.normal[2] < -0.9
    # start 5 m; by the last frame the facade is 8 - 0.59 m ahead
    truth = 8.0 - 0.1 * 5.9
    assert abs(plane.distance - truth) < abs(5.0 - truth)


def test_plane_observer_matches_functional_loop():
    frames = synthetic_frames(30)
    obs = PlaneObserver().fit(frames)
    st = ObserverState.initial((0.0, 0.0, 0.2))
    st = ingest_frame(st, (frames[0].ids, frames[0].xy))
    for prev, fr in zip(frames, frames[1:]):
        st = observer_step(st, prev.twist, fr.t - prev.t)
        st = ingest_frame(st, (fr.ids, fr.xy))
    np.testing.assert_array_equal(obs.chi_, st.chi)


def test_plane_observer_rejects_time_reversal():
    frames = synthetic_frames(3)
    obs = PlaneObserver().fit(frames)
    with pytest.raises(ValueError):
        obs.partial_fit(frames[0])


def test_replay_round_trip():
    frames = synthetic_frames(10)
    frames.insert(5, Frame(0.45, CameraTwist(), np.zeros(0, dtype=np.int64), np.zeros((0, 2))))
    frames.sort(key=lambda fr: fr.t)
    buf = io.StringIO()
    write_replay_csv(frames, buf)
    back = read_replay_csv(io.StringIO(buf.getvalue()))
    assert len(back) == len(frames)
    for a, b in zip(frames, back):
        assert a.t == b.t
        np.testing.assert_array_equal(a.twist.v, b.twist.v)
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.xy, b.xy)
    # replaying gives the same estimate bit for bit
    np.testing.assert_array_equal(PlaneObserver().fit(frames).chi_, PlaneObserver().fit(back).chi_)


def test_replay_rejects_bad_header():
    with pytest.raises(ValueError):
        read_replay_csv(io.StringIO("a,b\n1,2\n"))
