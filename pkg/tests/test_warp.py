import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from egosphere.geom import (Intrinsics, Pose6, Transform, invert, polar_to_cartesian,
                            pose_to_transform)
from egosphere.scene import Primitive, Scene, render_projective
from egosphere.state import EsmConfig, ProjectiveFrame, new_state
from egosphere.warp import (
    ScatteredPoints,
    camera_to_agent,
    propagate_variance,
    state_points,
    unproject,
    warp_omni,
    warp_projective,
    warp_scattered,
)

CFG = EsmConfig(h_s=90, w_s=180, n=1)


def single_pixel_frame(depth, intr=None, pose=Pose6(), pose_cov=None):
    intr = intr or Intrinsics(10.0, 10.0, 2.0, 2.0, 5, 5)
    d = np.zeros((5, 5))
    d[2, 2] = depth
    var = np.full((5, 5, 2), 1e4)
    var[2, 2] = [0.04, 0.01]
    return ProjectiveFrame(d, np.full((5, 5, 1), 0.5), var, intr, pose,
                           np.zeros((6, 6)) if pose_cov is None else pose_cov, prior_var=1e4)


def test_unproject_examples():
    intr = Intrinsics(10.0, 20.0, 2.0, 1.0, 5, 4)
    depth = np.zeros((4, 5))
    depth[1, 2] = 2.0      # principal point
    depth[1, 4] = 1.0
    fr = ProjectiveFrame(depth, np.zeros((4, 5, 0)), np.where(depth[..., None] > 0, 0.1, 1e4),
                         intr, prior_var=1e4)
    pts, valid = unproject(fr)
    assert np.array_equal(pts[1, 2], [0, 0, 2])
    assert np.allclose(pts[1, 4], [(4 - 2) / 10.0, 0, 1])
    assert valid.sum() == 2


def test_unproject_unit_tangent():
    intr = Intrinsics(2.0, 2.0, 1.0, 1.0, 4, 4)
    depth = np.ones((4, 4))
    fr = ProjectiveFrame(depth, np.zeros((4, 4, 1)), np.full((4, 4, 2), 0.1), intr)
    pts, _ = unproject(fr)
    assert np.allclose(pts[1, 3], [1, 0, 1])  # u = cx + fx


def test_unproject_matches_scalar_loop():
    rng = np.random.default_rng(3)
    intr = Intrinsics(3.0, 4.0, 1.5, 1.2, 4, 4)
    depth = rng.uniform(0.5, 3, (4, 4))
    fr = ProjectiveFrame(depth, np.zeros((4, 4, 1)), np.full((4, 4, 2), 0.1), intr)
    pts, _ = unproject(fr)
    for v in range(4):
        for u in range(4):
            d = float(depth[v, u])
            assert pts[v, u].tolist() == [(u - 1.5) / 3.0 * d, (v - 1.2) / 4.0 * d, d]


def test_centre_pixel_looks_forward():
    pts = warp_projective(single_pixel_frame(3.0), CFG)
    assert len(pts) == 1
    assert np.allclose(pts.polar[0], [math.pi / 2, 0, 3], atol=1e-15)
    assert pts.var[0].tolist() == [0.04, 0.01]
    assert pts.features[0, 0] == 0.5


def test_translation_moves_range():
    # camera mounted 1 m ahead of the agent origin
    pts = warp_projective(single_pixel_frame(2.0, pose=Pose6([1.0, 0, 0], [0, 0, 0])), CFG)
    assert np.allclose(pts.polar[0], [math.pi / 2, 0, 3], atol=1e-15)
    # agent frame stepping back by 1 m
    pts = warp_projective(single_pixel_frame(2.0), CFG)
    moved = warp_scattered(pts, pose_to_transform(Pose6([-1.0, 0, 0], [0, 0, 0])), CFG)
    assert np.allclose(moved.polar[0], [math.pi / 2, 0, 3], atol=1e-15)


def test_camera_to_agent_axes():
    T = camera_to_agent(Pose6())
    assert np.allclose(T.apply(np.array([[0, 0, 1.0], [1.0, 0, 0], [0, 1.0, 0]])),
                       [[1, 0, 0], [0, -1, 0], [0, 0, -1]])


def test_identity_omni_lands_on_centres():
    cfg = EsmConfig(h_s=20, w_s=40, n=1)
    s = new_state(cfg)
    s.mean[..., 2] = 2.0
    s.var[...] = 0.1
    pts = warp_omni(s, Transform.identity(), cfg)
    assert len(pts) == 800
    assert np.array_equal(pts.pix[:, 0], np.repeat(np.arange(20), 40).astype(float))
    assert np.array_equal(pts.pix[:, 1], np.tile(np.arange(40), 20).astype(float))


def test_yaw_shifts_azimuth():
    cfg = EsmConfig(h_s=20, w_s=40, n=1)
    s = new_state(cfg)
    s.mean[..., 2] = np.random.default_rng(0).uniform(1, 3, (20, 40))
    s.var[...] = 0.1
    psi = 0.37
    pts = warp_omni(s, pose_to_transform(Pose6([0, 0, 0], [0, 0, psi])), cfg)
    src = state_points(s, cfg)
    assert np.allclose(pts.polar[:, 0], src.polar[:, 0], atol=1e-12)
    assert np.allclose(pts.polar[:, 2], src.polar[:, 2], atol=1e-12)
    dtheta = np.mod(pts.polar[:, 1] - (src.polar[:, 1] - psi) + math.pi, 2 * math.pi) - math.pi
    assert np.max(np.abs(dtheta)) < 1e-12
    # zero translation and zero covariance: depth variance is preserved
    assert np.allclose(pts.var[:, 0], 0.1, rtol=1e-12)


def test_translation_toward_wall_shortens_range():
    wall = Scene([Primitive("plane", {"point": [4.0, 0, 0], "normal": [-1.0, 0, 0]})])
    fr, _ = render_projective(wall, Pose6(), Pose6(), Intrinsics.from_fov(9, 9, 10.0))
    cfg = EsmConfig(h_s=90, w_s=180, n=3)
    pts = warp_projective(fr, cfg)
    moved = warp_scattered(pts, pose_to_transform(Pose6([0.5, 0, 0], [0, 0, 0])), cfg)
    centre = int(np.flatnonzero(pts.src_index == 4 * 9 + 4)[0])
    assert pts.polar[centre, 2] == pytest.approx(4.0, abs=1e-12)
    assert moved.polar[centre, 2] == pytest.approx(3.5, abs=1e-12)


def test_propagate_variance_identity():
    pts = warp_projective(single_pixel_frame(3.0), CFG)
    assert pts.var[0, 0] == 0.04


def test_pose_covariance_adds_variance():
    cov = np.eye(6) * 1e-3
    a = warp_projective(single_pixel_frame(3.0), CFG)
    b = warp_projective(single_pixel_frame(3.0, pose_cov=cov), CFG)
    assert b.var[0, 0] > a.var[0, 0]
    # straight ahead, only forward translation changes the range
    assert b.var[0, 0] == pytest.approx(0.04 + 1e-3, rel=1e-12)


def test_propagate_variance_quadratic_form():
    g = np.array([[1.0, 2, 0, 0, 0, 1]])
    P = np.diag([1.0, 2, 3, 4, 5, 6])
    assert propagate_variance(np.array([2.0]), g, np.array([0.5]), P)[0] == pytest.approx(4 * 0.5 + 1 + 8 + 6)


@given(st.integers(0, 2 ** 31))
def test_warp_geometric_consistency(seed):
    rng = np.random.default_rng(seed)
    intr = Intrinsics(8.0, 8.0, 3.5, 3.5, 8, 8)
    depth = rng.uniform(0.5, 5.0, (8, 8))
    pose = Pose6(rng.normal(size=3), rng.normal(size=3) * 0.5)
    fr = ProjectiveFrame(depth, rng.random((8, 8, 2)), np.full((8, 8, 3), 0.1), intr, pose)
    cfg = EsmConfig(n=2)
    pts = warp_projective(fr, cfg)
    cam, _ = unproject(fr)
    expected = camera_to_agent(pose).apply(cam.reshape(-1, 3))
    assert np.allclose(polar_to_cartesian(pts.polar), expected, atol=1e-10)
    # features untouched, variances positive and never below j_d^2 var with zero pose cov
    assert np.array_equal(pts.features, fr.features.reshape(-1, 2))
    assert np.all(pts.var > 0)
    # pix consistent with polar
    assert np.allclose(pts.pix[:, 0], pts.polar[:, 0] * cfg.k_ppr - 0.5)
    assert np.allclose(pts.pix[:, 1], (pts.polar[:, 1] + math.pi) * cfg.k_ppr - 0.5)


@given(st.integers(0, 2 ** 31))
def test_omni_warp_geometric_consistency(seed):
    rng = np.random.default_rng(seed)
    cfg = EsmConfig(h_s=10, w_s=20, n=1)
    s = new_state(cfg)
    s.mean[..., 2] = rng.uniform(0.5, 4, (10, 20))
    s.var[...] = rng.uniform(0.01, 0.5, (10, 20, 2))
    T = pose_to_transform(Pose6(rng.normal(size=3) * 0.2, rng.normal(size=3)))
    cov = np.diag(rng.uniform(0, 1e-3, 6))
    pts = warp_omni(s, T, cfg, cov)
    src = state_points(s, cfg)
    keep = src.src_index[np.isin(src.src_index, pts.src_index)]
    x = polar_to_cartesian(s.mean.reshape(-1, 3 + cfg.n)[keep, :3])
    assert np.allclose(polar_to_cartesian(pts.polar), invert(T).apply(x), atol=1e-10)
    assert np.array_equal(pts.features, s.features.reshape(-1, 1)[keep])
    assert np.all(pts.var[:, 0] >= 0)
    base = warp_omni(s, T, cfg)
    assert np.all(pts.var[:, 0] >= base.var[:, 0])


def test_omni_depth_jacobian_matches_finite_difference():
    rng = np.random.default_rng(5)
    cfg = EsmConfig(n=0)
    for _ in range(50):
        polar = np.array([[rng.uniform(0.2, 3.0), rng.uniform(-3, 3), rng.uniform(1, 5)]])
        T = pose_to_transform(Pose6(rng.normal(size=3) * 0.3, rng.normal(size=3)))
        pts = ScatteredPoints(polar, np.zeros((1, 0)), np.ones((1, 1)), np.zeros(1, np.int64), np.zeros((1, 2)))
        analytic = math.sqrt(warp_scattered(pts, T, cfg).var[0, 0])
        h = 1e-6

        def rng_at(d):
            p = ScatteredPoints(np.array([[polar[0, 0], polar[0, 1], d]]), np.zeros((1, 0)), np.ones((1, 1)),
                                np.zeros(1, np.int64), np.zeros((1, 2)))
            return warp_scattered(p, T, cfg).polar[0, 2]

        fd = (rng_at(polar[0, 2] + h) - rng_at(polar[0, 2] - h)) / (2 * h)
        assert analytic == pytest.approx(abs(fd), rel=1e-6)


def test_scattered_concatenate_and_empty():
    e = ScatteredPoints.empty(2)
    assert len(e) == 0
    assert len(ScatteredPoints.concatenate([], 2)) == 0
    both = ScatteredPoints.concatenate([e, e], 2)
    assert both.var.shape == (0, 3)


def test_projective_matches_oracle_with_rotated_camera():
    intr = Intrinsics(6.0, 5.0, 2.0, 2.5, 5, 6)
    rng = np.random.default_rng(9)
    depth = rng.uniform(0.5, 4, (6, 5))
    pose = Pose6([0.2, -0.1, 1.0], [0.3, -0.2, 2.5])
    fr = ProjectiveFrame(depth, np.zeros((6, 5, 0)), np.full((6, 5, 1), 0.1), intr, pose)
    pts = warp_projective(fr, EsmConfig(n=0))
    for k, lin in enumerate(pts.src_index.tolist()):
        v, u = divmod(lin, 5)
        ref = oracles.warp_pixel(u, v, float(depth[v, u]), 6.0, 5.0, 2.0, 2.5, pose.t.tolist(), pose.r.tolist())
        assert np.allclose(pts.polar[k], ref, atol=1e-12)
