"""EKF belief and measurement containers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .geom import Intrinsics, Pose6, pixels_per_radian, sphere_grid


@dataclass(frozen=True)
class EsmConfig:
    h_s: int = 90
    w_s: int = 180
    n: int = 3
    prior_depth: float = 0.0
    prior_var: float = 1e4
    dup_var_threshold: float = 1.0
    rel_depth_threshold: float = 0.05
    smooth_patch: int = 3

    def __post_init__(self):
        if self.h_s < 1 or self.w_s != 2 * self.h_s:
            raise ValueError(f"invalid memory size {self.h_s}x{self.w_s}: width must be 2*height")
        if self.n < 0:
            raise ValueError("feature channel count must be >= 0")
        if not (self.prior_var > self.dup_var_threshold > 0):
            raise ValueError("need prior_var > dup_var_threshold > 0")
        if not (0 < self.rel_depth_threshold < 1):
            raise ValueError("rel_depth_threshold must lie in (0, 1)")
        if self.smooth_patch < 1 or self.smooth_patch % 2 == 0:
            raise ValueError("smooth_patch must be an odd integer >= 1")

    @property
    def k_ppr(self) -> float:
        return pixels_per_radian(self.h_s, self.w_s)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EsmConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(eq=False)
class EgosphereState:
    """Mean image channels are [phi, theta, depth, features...]; var is [depth, features...].

    ``mean`` is the filter posterior that the next step re-projects.
    ``smoothed`` is the same image after inverse-variance hole filling; it is
    recomputed every step and never fed back, so smoothing cannot compound.
    """

    mean: np.ndarray
    var: np.ndarray
    frame_id: int = 0
    smoothed: np.ndarray | None = None

    @property
    def display(self) -> np.ndarray:
        """Hole-filled mean when available, else the posterior mean."""
        return self.mean if self.smoothed is None else self.smoothed

    @property
    def n(self) -> int:
        return self.mean.shape[-1] - 3

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape[:2]

    @property
    def depth(self) -> np.ndarray:
        return self.mean[..., 2]

    @property
    def features(self) -> np.ndarray:
        return self.mean[..., 3:]

    def copy(self) -> "EgosphereState":
        return EgosphereState(self.mean.copy(), self.var.copy(), self.frame_id,
                              None if self.smoothed is None else self.smoothed.copy())

    def check(self) -> None:
        """Raise if any belief invariant is broken."""
        h, w = self.shape
        phi, theta = sphere_grid(h, w)
        if not (np.array_equal(self.mean[..., 0], phi) and np.array_equal(self.mean[..., 1], theta)):
            raise AssertionError("angle channels drifted from the sphere grid")
        if self.var.shape != (h, w, self.n + 1):
            raise AssertionError("variance shape mismatch")
        if not np.all(self.var > 0):
            raise AssertionError("non-positive or NaN variance")
        if not np.all(np.isfinite(self.mean)):
            raise AssertionError("non-finite mean")
        if self.smoothed is not None:
            if self.smoothed.shape != self.mean.shape or not np.all(np.isfinite(self.smoothed)):
                raise AssertionError("smoothed image malformed")
            if not np.array_equal(self.smoothed[..., :2], self.mean[..., :2]):
                raise AssertionError("smoothed angle channels drifted")
        if np.any(self.depth < 0):
            raise AssertionError("negative depth")


def new_state(cfg: EsmConfig) -> EgosphereState:
    phi, theta = sphere_grid(cfg.h_s, cfg.w_s)
    mean = np.zeros((cfg.h_s, cfg.w_s, 3 + cfg.n))
    mean[..., 0] = phi
    mean[..., 1] = theta
    mean[..., 2] = cfg.prior_depth
    var = np.full((cfg.h_s, cfg.w_s, 1 + cfg.n), cfg.prior_var)
    return EgosphereState(mean, var, 0)


@dataclass(eq=False)
class ProjectiveFrame:
    """One depth + feature image from a pinhole camera.

    ``depth`` is z-depth along the optical axis (0 marks an invalid pixel).
    ``pose`` is the camera body in the current agent frame; ``pose_cov`` is
    its 6x6 covariance over (translation, rotation vector).
    """

    depth: np.ndarray
    features: np.ndarray
    var: np.ndarray
    intrinsics: Intrinsics
    pose: Pose6 = field(default_factory=Pose6)
    pose_cov: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))
    prior_var: float | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.depth.shape
        self.features = np.asarray(self.features, dtype=np.float64).reshape(h, w, -1)
        self.var = np.asarray(self.var, dtype=np.float64)
        self.pose_cov = np.asarray(self.pose_cov, dtype=np.float64)
        intr = self.intrinsics
        if (intr.height, intr.width) != (h, w):
            raise ValueError(f"intrinsics {intr.height}x{intr.width} do not match depth {h}x{w}")
        if self.var.shape != (h, w, 1 + self.n):
            raise ValueError(f"variance image must be {(h, w, 1 + self.n)}, got {self.var.shape}")
        if not np.all(self.var > 0):
            raise ValueError("frame variances must be positive")
        if np.any(self.depth < 0) or not np.all(np.isfinite(self.depth)):
            raise ValueError("depth must be finite and non-negative")
        if self.pose_cov.shape != (6, 6) or not np.allclose(self.pose_cov, self.pose_cov.T):
            raise ValueError("pose covariance must be a symmetric 6x6 matrix")
        if self.prior_var is not None:
            bad = (self.depth == 0) & (self.var[..., 0] < self.prior_var)
            if np.any(bad):
                raise ValueError("invalid (zero) depth pixels must carry variance >= prior_var")

    @property
    def n(self) -> int:
        return self.features.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(eq=False)
class PoseIncrement:
    """Motion of the agent from frame t-1 to frame t, expressed in frame t-1."""

    u: Pose6 = field(default_factory=Pose6)
    cov: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.cov.shape != (6, 6) or not np.allclose(self.cov, self.cov.T):
            raise ValueError("increment covariance must be a symmetric 6x6 matrix")


def apply_mask(frame: ProjectiveFrame, mask: np.ndarray, prior_var: float) -> ProjectiveFrame:
    """Raise the variance of masked pixels (e.g. the robot body) to the prior."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.shape:
        raise ValueError(f"mask shape {mask.shape} does not match frame {frame.shape}")
    var = frame.var.copy()
    var[mask] = prior_var
    return replace(frame, var=var)
