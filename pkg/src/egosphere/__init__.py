"""Egospheric spatial memory: an EKF over an equirectangular depth + feature image."""

from .avoid import AvoidanceConfig, avoidance_speed, avoidance_vector
from .fuse import esm_step, fuse_pixel, quantize_scatter, smooth
from .geom import Intrinsics, Pose6, Transform, cartesian_to_polar, polar_to_cartesian
from .state import EgosphereState, EsmConfig, PoseIncrement, ProjectiveFrame, apply_mask, new_state
from .warp import warp_omni, warp_projective

__all__ = [
    "AvoidanceConfig", "avoidance_speed", "avoidance_vector",
    "esm_step", "fuse_pixel", "quantize_scatter", "smooth",
    "Intrinsics", "Pose6", "Transform", "cartesian_to_polar", "polar_to_cartesian",
    "EgosphereState", "EsmConfig", "PoseIncrement", "ProjectiveFrame", "apply_mask", "new_state",
    "warp_omni", "warp_projective",
]
__version__ = "0.1.0"
