"""Forward warping of projective frames and ego-sphere beliefs.

Both paths produce :class:`ScatteredPoints`: unordered polar points in the
target agent frame with attached variances.  Depth variance is propagated with
closed-form first-order Jacobians; feature values and variances pass through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import (
    OPTICAL_TO_BODY,
    Pose6,
    Transform,
    cartesian_to_polar,
    compose,
    polar_to_cartesian,
    polar_to_pixel,
    pose_to_transform,
    right_jacobian,
    rotvec_to_matrix,
)
from .state import EgosphereState, EsmConfig, ProjectiveFrame


@dataclass(eq=False)
class ScatteredPoints:
    polar: np.ndarray      # (N, 3) phi, theta, d
    features: np.ndarray   # (N, n)
    var: np.ndarray        # (N, 1 + n)
    src_index: np.ndarray  # (N,) int64, unique per source pixel
    pix: np.ndarray        # (N, 2) continuous (row, col)

    def __len__(self):
        return self.polar.shape[0]

    @classmethod
    def empty(cls, n: int) -> "ScatteredPoints":
        return cls(np.zeros((0, 3)), np.zeros((0, n)), np.zeros((0, 1 + n)),
                   np.zeros(0, dtype=np.int64), np.zeros((0, 2)))

    def subset(self, keep: np.ndarray) -> "ScatteredPoints":
        return ScatteredPoints(self.polar[keep], self.features[keep], self.var[keep],
                               self.src_index[keep], self.pix[keep])

    @classmethod
    def concatenate(cls, parts: list["ScatteredPoints"], n: int) -> "ScatteredPoints":
        if not parts:
            return cls.empty(n)
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("polar", "features", "var", "src_index", "pix")))


def _pixel_coords(polar: np.ndarray, k_ppr: float) -> np.ndarray:
    row, col = polar_to_pixel(polar[:, 0], polar[:, 1], k_ppr)
    return np.stack([row, col], axis=-1)


def camera_to_agent(pose: Pose6) -> Transform:
    """Optical frame -> agent frame for a camera body at ``pose``."""
    return compose(pose_to_transform(pose), OPTICAL_TO_BODY)


def unproject(frame: ProjectiveFrame) -> tuple[np.ndarray, np.ndarray]:
    """Optical-frame points K^-1 (pc * d) per pixel, and the valid-depth mask."""
    pts = frame.intrinsics.rays() * frame.depth[..., None]
    return pts, frame.depth > 0


def propagate_variance(j_d: np.ndarray, g_p: np.ndarray, depth_var: np.ndarray,
                       pose_cov: np.ndarray) -> np.ndarray:
    """Depth variance after warping: j_d^2 var + g_p^T P g_p per point."""
    out = j_d * j_d * depth_var
    if np.any(pose_cov):
        out = out + np.einsum("ni,ij,nj->n", g_p, pose_cov, g_p)
    return out


def projective_jacobians(q_body: np.ndarray, ray_body: np.ndarray,
                         pose: Pose6) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Warped point plus d(range)/d(depth) and d(range)/d(pose 6-vector).

    ``q_body`` are unprojected points in the camera body frame, ``ray_body``
    the same points divided by their z-depth.  The rotation block is the exact
    derivative w.r.t. the rotation vector components, -R [q]x J_r(r).
    """
    R = rotvec_to_matrix(pose.r)
    x = q_body @ R.T + pose.t
    rng = np.sqrt(np.einsum("ni,ni->n", x, x))
    xhat = x / rng[:, None]
    j_d = np.einsum("ni,ni->n", xhat, ray_body @ R.T)
    a = xhat @ R  # R^T xhat
    g_r = -np.cross(a, q_body) @ right_jacobian(pose.r)
    return x, j_d, np.concatenate([xhat, g_r], axis=1)


def warp_projective(frame: ProjectiveFrame, cfg: EsmConfig, index_offset: int = 0) -> ScatteredPoints:
    """Scatter every informative pixel of ``frame`` into the agent ego-sphere."""
    rays = frame.intrinsics.rays()
    valid = (frame.depth > 0) & (frame.var[..., 0] < cfg.prior_var)
    src = np.flatnonzero(valid)
    d = frame.depth.reshape(-1)[src]
    ray_body = rays.reshape(-1, 3)[src] @ OPTICAL_TO_BODY.R.T
    q_body = ray_body * d[:, None]

    x, j_d, g_p = projective_jacobians(q_body, ray_body, frame.pose)
    nonzero = np.any(x != 0, axis=1)
    if not np.all(nonzero):
        src, d, x, j_d, g_p = src[nonzero], d[nonzero], x[nonzero], j_d[nonzero], g_p[nonzero]

    polar = cartesian_to_polar(x) if len(src) else np.zeros((0, 3))
    var = frame.var.reshape(-1, 1 + frame.n)[src].copy()
    var[:, 0] = propagate_variance(j_d, g_p, var[:, 0], frame.pose_cov)
    return ScatteredPoints(
        polar=polar,
        features=frame.features.reshape(frame.depth.size, frame.n)[src],
        var=var,
        src_index=src.astype(np.int64) + index_offset,
        pix=_pixel_coords(polar, cfg.k_ppr),
    )


def warp_scattered(pts: ScatteredPoints, motion: Transform, cfg: EsmConfig,
                   motion_cov: np.ndarray | None = None) -> ScatteredPoints:
    """Re-express points in the agent frame reached by ``motion``.

    ``motion`` maps new-frame coordinates into old-frame coordinates (the pose
    of the new agent frame in the old one), so points move by its inverse.
    The new range |x - t| does not depend on the rotation part, hence only the
    translation block of ``motion_cov`` contributes to depth variance.
    """
    x = polar_to_cartesian(pts.polar)
    rel = x - motion.t
    rng = np.sqrt(np.einsum("ni,ni->n", rel, rel))
    keep = rng > 0
    if not np.all(keep):
        pts, x, rel, rng = pts.subset(keep), x[keep], rel[keep], rng[keep]
    if not np.any(motion.t) and np.array_equal(motion.R, np.eye(3)):
        # identity: skip the trig round trip so points stay on their centres
        polar = pts.polar.copy()
        pix = pts.pix.copy()
    else:
        y = rel @ motion.R  # R^T (x - t)
        polar = cartesian_to_polar(y) if len(pts) else np.zeros((0, 3))
        polar[:, 2] = rng
        pix = _pixel_coords(polar, cfg.k_ppr)

    relhat = rel / rng[:, None]
    j_d = np.einsum("ni,ni->n", relhat, x) / pts.polar[:, 2]
    g_p = np.zeros((len(pts), 6))
    g_p[:, :3] = -relhat
    var = pts.var.copy()
    cov = np.zeros((6, 6)) if motion_cov is None else np.asarray(motion_cov, dtype=np.float64)
    var[:, 0] = propagate_variance(j_d, g_p, var[:, 0], cov)
    return ScatteredPoints(polar, pts.features, var, pts.src_index, pix)


def state_points(state: EgosphereState, cfg: EsmConfig) -> ScatteredPoints:
    """Informative ego-sphere pixels as scattered points at their own centres."""
    informative = state.var[..., 0] < cfg.prior_var
    src = np.flatnonzero(informative)
    mean = state.mean.reshape(-1, state.mean.shape[-1])[src]
    polar = mean[:, :3].copy()
    # these sit exactly on pixel centres, so take integer coordinates directly
    pix = np.stack(np.divmod(src, state.shape[1]), axis=-1).astype(np.float64)
    return ScatteredPoints(polar, mean[:, 3:], state.var.reshape(-1, 1 + state.n)[src],
                           src.astype(np.int64), pix)


def warp_omni(state: EgosphereState, motion: Transform, cfg: EsmConfig,
              motion_cov: np.ndarray | None = None) -> ScatteredPoints:
    """Carry the belief into the agent frame reached by ``motion``."""
    pts = state_points(state, cfg)
    # depth-0 pixels cannot be placed in space
    pts = pts.subset(pts.polar[:, 2] > 0)
    return warp_scattered(pts, motion, cfg, motion_cov)
