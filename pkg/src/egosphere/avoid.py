"""Local obstacle avoidance driven by the ego-sphere depth map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import polar_to_cartesian
from .state import EgosphereState


@dataclass(frozen=True)
class AvoidanceConfig:
    bubble_radius: float = 0.2
    v_max: float = 1.0
    exclusion_center: tuple[float, float, float] | None = None
    exclusion_radius: float = 0.0

    def __post_init__(self):
        if self.bubble_radius <= 0 or self.v_max <= 0:
            raise ValueError("bubble radius and v_max must be positive")
        if self.exclusion_radius < 0:
            raise ValueError("exclusion radius must be >= 0")


def avoidance_speed(d_closest: float, cfg: AvoidanceConfig) -> float:
    """|v_a| = min(1e-3 / max(d - R, 1e-12)^2, v_max)."""
    gap = max(d_closest - cfg.bubble_radius, 1e-12)
    return min(1e-3 / gap ** 2, cfg.v_max)


def avoidance_vector(state: EgosphereState, cfg: AvoidanceConfig,
                     var_threshold: float = 1.0) -> np.ndarray:
    """Velocity (agent frame) pushing directly away from the closest trusted point.

    Pixels count when their depth variance is below ``var_threshold``, their
    depth is positive, and they lie outside the optional exclusion sphere
    (used to let the agent approach a target).
    """
    depth = state.mean[..., 2]
    ok = (state.var[..., 0] < var_threshold) & (depth > 0)
    if not np.any(ok):
        return np.zeros(3)
    pts = polar_to_cartesian(state.mean[..., :3][ok])
    d = depth[ok]
    if cfg.exclusion_center is not None and cfg.exclusion_radius > 0:
        away = np.linalg.norm(pts - np.asarray(cfg.exclusion_center), axis=1) > cfg.exclusion_radius
        pts, d = pts[away], d[away]
        if len(d) == 0:
            return np.zeros(3)
    i = int(np.argmin(d))
    bearing = pts[i] / d[i]
    return -bearing * avoidance_speed(float(d[i]), cfg)
