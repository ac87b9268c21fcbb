"""Coordinate conventions, rigid transforms, pinhole intrinsics and polar maps.

Frames
------
Agent / world frames are x-forward, y-left, z-up.  Pinhole optical frames are
z-forward, x-right, y-down; ``OPTICAL_TO_BODY`` rotates optical coordinates into
the camera body frame (which follows the agent convention).

Polar coordinates are (phi, theta, d): phi is the polar angle measured from +z
in [0, pi], theta the azimuth atan2(y, x) in [-pi, pi), d the radial distance.

All array functions broadcast over leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for (..., 3) vectors, shape (..., 3, 3)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def canonical_rotvec(r) -> np.ndarray:
    """Return the equivalent rotation vector with magnitude in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    angle = np.linalg.norm(r)
    if angle <= np.pi:
        return r.copy()
    wrapped = np.mod(angle + np.pi, 2.0 * np.pi) - np.pi
    return r * (wrapped / angle)


def rotvec_to_matrix(r) -> np.ndarray:
    """Rodrigues' formula.  Accepts (3,) or (..., 3)."""
    r = np.asarray(r, dtype=np.float64)
    theta2 = np.sum(r * r, axis=-1)[..., None, None]
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    # series to second order below the cutoff
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = skew(r)
    return np.eye(3) + a * K + b * (K @ K)


def matrix_to_rotvec(R) -> np.ndarray:
    """Inverse of :func:`rotvec_to_matrix`, result has magnitude in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-6:
        # R ~ I + [r]x
        return 0.5 * w
    if np.pi - angle < 1e-4:
        # near a half turn the antisymmetric part vanishes; use the symmetric part
        B = (R + R.T) / 2.0 - cos_angle * np.eye(3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        if np.dot(axis, w) < 0:
            axis = -axis
        return canonical_rotvec(axis / np.linalg.norm(axis) * angle)
    return w * (angle / (2.0 * np.sin(angle)))


def right_jacobian(r) -> np.ndarray:
    """Right Jacobian of SO(3): d(R(r) p)/dr = -R(r) [p]x J_r(r)."""
    r = np.asarray(r, dtype=np.float64)
    theta2 = float(r @ r)
    theta = np.sqrt(theta2)
    K = skew(r)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    a = (1.0 - np.cos(theta)) / theta2
    b = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - a * K + b * (K @ K)


@dataclass(eq=False)
class Pose6:
    """Translation (m) plus rotation vector (rad); applies rotation then translation."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.r = np.asarray(self.r, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.r))):
            raise ValueError("pose components must be finite")

    @classmethod
    def from_vector(cls, v) -> "Pose6":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.r])

    def __repr__(self):
        return f"Pose6(t={self.t.tolist()}, r={self.r.tolist()})"


@dataclass(eq=False)
class Transform:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (..., 3) points through the transform."""
        return np.asarray(pts) @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def __matmul__(self, other: "Transform") -> "Transform":
        return compose(self, other)


def compose(a: Transform, b: Transform) -> Transform:
    """``a @ b``: apply b first, then a."""
    return Transform(a.R @ b.R, a.R @ b.t + a.t)


def invert(a: Transform) -> Transform:
    Rt = a.R.T
    return Transform(Rt, -Rt @ a.t)


def pose_to_transform(p: Pose6) -> Transform:
    return Transform(rotvec_to_matrix(p.r), p.t)


def transform_to_pose(T: Transform) -> Pose6:
    return Pose6(T.t, matrix_to_rotvec(T.R))


# optical (z-forward, x-right, y-down) -> body (x-forward, y-left, z-up)
OPTICAL_TO_BODY = Transform(
    np.array([[0.0, 0.0, 1.0],
              [-1.0, 0.0, 0.0],
              [0.0, -1.0, 0.0]]),
    np.zeros(3),
)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        """Square pixels, principal point at the image centre."""
        f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def rays(self) -> np.ndarray:
        """K^-1 [u, v, 1] for every pixel, shape (height, width, 3)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return np.stack([(u - self.cx) / self.fx,
                         (v - self.cy) / self.fy,
                         np.ones_like(u)], axis=-1)


def cartesian_to_polar(p) -> np.ndarray:
    """(..., 3) points -> (..., 3) array of (phi, theta, d).

    theta is 0 on the z axis.  Raises for points at the origin.
    """
    p = np.asarray(p, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    d = np.sqrt(x * x + y * y + z * z)
    if np.any(d == 0):
        raise ValueError("degenerate point at origin")
    phi = np.arccos(np.clip(z / d, -1.0, 1.0))
    theta = np.arctan2(y, x)
    # atan2 may return +pi; fold onto the half-open range
    theta = np.where(theta >= np.pi, theta - 2.0 * np.pi, theta)
    return np.stack([phi, theta, d], axis=-1)


def polar_to_cartesian(pc) -> np.ndarray:
    pc = np.asarray(pc, dtype=np.float64)
    phi, theta, d = pc[..., 0], pc[..., 1], pc[..., 2]
    s = np.sin(phi)
    return np.stack([d * s * np.cos(theta), d * s * np.sin(theta), d * np.cos(phi)], axis=-1)


def pixels_per_radian(h_s: int, w_s: int) -> float:
    if w_s != 2 * h_s:
        raise ValueError("non-uniform angular resolution")
    return h_s / np.pi


def sphere_grid(h_s: int, w_s: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre (phi, theta) images of an equirectangular ego-sphere."""
    k = pixels_per_radian(h_s, w_s)
    phi = (np.arange(h_s) + 0.5) / k
    theta = (np.arange(w_s) + 0.5) / k - np.pi
    return np.broadcast_to(phi[:, None], (h_s, w_s)).copy(), \
        np.broadcast_to(theta[None, :], (h_s, w_s)).copy()


def polar_to_pixel(phi, theta, k_ppr: float) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (row, col) coordinates; pixel centres sit on integers."""
    return phi * k_ppr - 0.5, (theta + np.pi) * k_ppr - 0.5
