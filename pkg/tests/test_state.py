import numpy as np
import pytest

from egosphere.geom import Intrinsics, sphere_grid
from egosphere.state import EsmConfig, ProjectiveFrame, apply_mask, new_state
from egosphere.warp import warp_projective


def flat_frame(h=4, w=4, n=3, depth=2.0, prior_var=1e4):
    return ProjectiveFrame(np.full((h, w), depth), np.random.default_rng(0).random((h, w, n)),
                           np.full((h, w, 1 + n), 0.01), Intrinsics.from_fov(w, h, 60.0),
                           prior_var=prior_var)


def test_new_state_shapes():
    s = new_state(EsmConfig(90, 180, n=3))
    assert s.mean.shape == (90, 180, 6)
    assert s.var.shape == (90, 180, 4)
    s.check()


def test_new_state_deterministic():
    a, b = new_state(EsmConfig()), new_state(EsmConfig())
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.var, b.var)


def test_minimal_state():
    cfg = EsmConfig(h_s=2, w_s=4, n=0)
    s = new_state(cfg)
    assert s.mean.shape == (2, 4, 3)
    assert np.all(s.var == cfg.prior_var) and s.var.size == 8
    phi, theta = sphere_grid(2, 4)
    assert np.array_equal(s.mean[..., 0], phi) and np.array_equal(s.mean[..., 1], theta)


@pytest.mark.parametrize("kwargs", [
    dict(h_s=90, w_s=100), dict(n=-1), dict(prior_var=0.5), dict(dup_var_threshold=0.0),
    dict(rel_depth_threshold=1.0), dict(smooth_patch=2), dict(smooth_patch=0),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EsmConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = EsmConfig(h_s=45, w_s=90, n=2, smooth_patch=5)
    assert EsmConfig.from_dict(cfg.to_dict()) == cfg


def test_check_catches_drifted_angles():
    s = new_state(EsmConfig(4, 8, n=0))
    s.mean[0, 0, 0] += 1e-12
    with pytest.raises(AssertionError):
        s.check()


def test_frame_validation():
    intr = Intrinsics.from_fov(4, 4, 60.0)
    with pytest.raises(ValueError):
        ProjectiveFrame(np.ones((4, 4)), np.zeros((4, 4, 1)), np.zeros((4, 4, 2)), intr)
    with pytest.raises(ValueError):
        ProjectiveFrame(np.ones((4, 5)), np.zeros((4, 5, 1)), np.ones((4, 5, 2)), intr)
    depth = np.ones((4, 4))
    depth[0, 0] = 0
    with pytest.raises(ValueError, match="invalid"):
        ProjectiveFrame(depth, np.zeros((4, 4, 1)), np.ones((4, 4, 2)), intr, prior_var=1e4)
    with pytest.raises(ValueError):
        ProjectiveFrame(np.ones((4, 4)), np.zeros((4, 4, 1)), np.ones((4, 4, 2)), intr,
                        pose_cov=np.arange(36.0).reshape(6, 6))


def test_apply_mask_none_and_all():
    fr = flat_frame()
    same = apply_mask(fr, np.zeros((4, 4), bool), 1e4)
    assert np.array_equal(same.var, fr.var)
    full = apply_mask(fr, np.ones((4, 4), bool), 1e4)
    assert np.all(full.var == 1e4)
    assert np.all(fr.var == 0.01)  # input untouched


def test_apply_mask_shape_mismatch():
    with pytest.raises(ValueError):
        apply_mask(flat_frame(), np.zeros((3, 4), bool), 1e4)


def test_masked_pixel_never_reaches_the_buffer():
    cfg = EsmConfig(h_s=90, w_s=180, n=3)
    fr = flat_frame(8, 8)
    mask = np.zeros((8, 8), bool)
    mask[3, 4] = True
    pts = warp_projective(apply_mask(fr, mask, cfg.prior_var), cfg)
    assert 3 * 8 + 4 not in pts.src_index.tolist()
    assert len(pts) == 63
