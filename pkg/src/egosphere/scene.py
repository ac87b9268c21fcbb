"""Analytic scenes with exact ray-cast depth, used as ground truth.

Scene files are YAML documents::

    primitives:
      - kind: box            # inside or outside; the nearest hit is returned
        min: [-3, -2, -1.5]
        max: [3, 2, 2.5]
        color: [0.5, 0.5, 0.5]
        texture: {amplitude: 0.3, period: 2.0}   # optional, smooth sinusoid
      - kind: sphere
        center: [1.5, 0.5, 0.0]
        radius: 0.3
        color: [0.9, 0.1, 0.1]
      - kind: plane
        point: [0, 0, -1]
        normal: [0, 0, 1]
        color: [0.2, 0.8, 0.2]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geom import (
    OPTICAL_TO_BODY,
    Intrinsics,
    Pose6,
    compose,
    invert,
    polar_to_cartesian,
    pose_to_transform,
    sphere_grid,
    transform_to_pose,
)
from .state import EgosphereState, EsmConfig, ProjectiveFrame, new_state

MISS = np.inf

# per-channel texture directions; fixed so textures are reproducible
_TEXTURE_DIRS = np.array([[1.0, 0.3, 0.2], [0.2, 1.0, -0.4], [-0.3, 0.25, 1.0]])
_TEXTURE_DIRS /= np.linalg.norm(_TEXTURE_DIRS, axis=1, keepdims=True)

_REQUIRED = {"sphere": {"center", "radius"}, "box": {"min", "max"}, "plane": {"point", "normal"}}


@dataclass(eq=False)
class Primitive:
    kind: str
    params: dict
    color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    texture: dict | None = None

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        if self.kind not in _REQUIRED:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        missing = _REQUIRED[self.kind] - set(self.params)
        if missing:
            raise ValueError(f"{self.kind} needs {sorted(missing)}")
        p = {k: np.asarray(v, dtype=np.float64) if k != "radius" else float(v)
             for k, v in self.params.items()}
        if self.kind == "sphere":
            if p["radius"] <= 0:
                raise ValueError("sphere radius must be positive")
        elif self.kind == "box":
            if not np.all(p["min"] < p["max"]):
                raise ValueError("box min corner must be below max corner")
        elif abs(np.linalg.norm(p["normal"]) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        self.params = p

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Nearest positive hit distance per ray, MISS where none."""
        if self.kind == "sphere":
            return _hit_sphere(o, d, self.params["center"], self.params["radius"])
        if self.kind == "box":
            return _hit_box(o, d, self.params["min"], self.params["max"])
        return _hit_plane(o, d, self.params["point"], self.params["normal"])

    def colour_at(self, pts: np.ndarray) -> np.ndarray:
        if self.texture is None:
            return np.broadcast_to(self.color, pts.shape).copy()
        amp = float(self.texture.get("amplitude", 0.25))
        period = float(self.texture.get("period", 2.0))
        wave = np.sin(2.0 * np.pi * (pts @ _TEXTURE_DIRS.T) / period)
        return np.clip(self.color + amp * wave, 0.0, 1.0)


def _hit_sphere(o, d, c, r):
    oc = o - c
    b = np.einsum("ni,ni->n", oc, d)
    cc = np.einsum("ni,ni->n", oc, oc) - r * r
    disc = b * b - cc
    out = np.full(len(o), MISS)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 0, t0, t1)
    hit = ok & (t > 0)
    out[hit] = t[hit]
    return out


def _hit_box(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    par = d == 0
    inside_slab = (o >= lo) & (o <= hi)
    ta = np.where(par, np.where(inside_slab, -np.inf, np.inf), ta)
    tb = np.where(par, np.inf, tb)
    tmin = np.minimum(ta, tb).max(axis=1)
    tmax = np.maximum(ta, tb).min(axis=1)
    t = np.where(tmin > 0, tmin, tmax)
    hit = (tmax >= tmin) & (t > 0) & np.isfinite(t)
    return np.where(hit, t, MISS)


def _hit_plane(o, d, p0, nrm):
    denom = d @ nrm
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((p0 - o) @ nrm) / denom
    hit = (denom != 0) & (t > 0)
    return np.where(hit, t, MISS)


@dataclass(eq=False)
class Scene:
    primitives: list[Primitive]

    def cast(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised nearest hit: (depth, colour).  Misses give MISS and zeros."""
        origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
        best = np.full(len(dirs), MISS)
        which = np.full(len(dirs), -1)
        for i, prim in enumerate(self.primitives):
            t = prim.intersect(origins, dirs)
            closer = t < best
            best[closer] = t[closer]
            which[closer] = i
        colour = np.zeros((len(dirs), 3))
        for i, prim in enumerate(self.primitives):
            sel = which == i
            if np.any(sel):
                colour[sel] = prim.colour_at(origins[sel] + best[sel, None] * dirs[sel])
        return best, colour

    @classmethod
    def from_dict(cls, doc: dict) -> "Scene":
        if not isinstance(doc, dict) or "primitives" not in doc:
            raise ValueError("scene document needs a 'primitives' list")
        prims = []
        for entry in doc["primitives"]:
            entry = dict(entry)
            kind = entry.pop("kind", None)
            color = entry.pop("color", [0.5, 0.5, 0.5])
            texture = entry.pop("texture", None)
            prims.append(Primitive(kind, entry, color, texture))
        return cls(prims)

    def to_dict(self) -> dict:
        out = []
        for p in self.primitives:
            d = {"kind": p.kind}
            d.update({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in p.params.items()})
            d["color"] = p.color.tolist()
            if p.texture is not None:
                d["texture"] = dict(p.texture)
            out.append(d)
        return {"primitives": out}


def load_scene(path) -> Scene:
    try:
        doc = yaml.safe_load(Path(path).read_text())
        return Scene.from_dict(doc)
    except (yaml.YAMLError, KeyError, TypeError) as exc:
        raise ValueError(f"invalid scene file {path}: {exc}") from exc


def raycast(scene: Scene, origin, direction) -> float:
    """Depth along one unit ray, or MISS."""
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("ray direction must be unit length")
    t, _ = scene.cast(np.asarray(origin, dtype=np.float64)[None], direction[None])
    return float(t[0])


def textured_box(half=(3.0, 2.5, 2.0), center=(0.0, 0.0, 0.0)) -> Scene:
    """A closed room with a smooth colour texture on its walls."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half, dtype=np.float64)
    return Scene([Primitive("box", {"min": c - h, "max": c + h}, [0.5, 0.5, 0.5],
                            {"amplitude": 0.35, "period": 3.0})])


def render_projective(scene: Scene, agent_pose: Pose6, camera_offset: Pose6, intr: Intrinsics,
                      depth_noise_std: float = 0.0, pose_noise_std: float = 0.0,
                      var_floor: float = 1e-6, prior_var: float = 1e4,
                      rng: np.random.Generator | None = None) -> tuple[ProjectiveFrame, Pose6]:
    """Render a depth + colour frame for a camera mounted at ``camera_offset`` on the agent.

    The returned frame's pose is the (optionally noise-perturbed) camera offset
    with matching covariance; the true offset is returned alongside.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    cam_world = compose(compose(pose_to_transform(agent_pose), pose_to_transform(camera_offset)),
                        OPTICAL_TO_BODY)
    rays = intr.rays().reshape(-1, 3)
    norms = np.linalg.norm(rays, axis=1)
    dirs = (rays / norms[:, None]) @ cam_world.R.T
    rng_dist, colour = scene.cast(cam_world.t, dirs)
    hit = np.isfinite(rng_dist)
    depth = np.where(hit, rng_dist / norms, 0.0)

    depth_var = max(depth_noise_std ** 2, var_floor)
    if depth_noise_std > 0:
        noisy = depth + rng.normal(0.0, depth_noise_std, depth.shape)
        depth = np.where(hit, np.maximum(noisy, 1e-6), 0.0)
    var = np.empty((len(depth), 4))
    var[:, 0] = np.where(hit, depth_var, prior_var)
    var[:, 1:] = np.where(hit[:, None], var_floor, prior_var)

    measured = camera_offset
    pose_cov = np.zeros((6, 6))
    if pose_noise_std > 0:
        measured = Pose6.from_vector(camera_offset.as_vector() + rng.normal(0.0, pose_noise_std, 6))
        pose_cov = np.eye(6) * pose_noise_std ** 2
    h, w = intr.height, intr.width
    frame = ProjectiveFrame(depth.reshape(h, w), colour.reshape(h, w, 3), var.reshape(h, w, 4),
                            intr, measured, pose_cov, prior_var=prior_var)
    return frame, camera_offset


def render_ground_truth_egosphere(scene: Scene, agent_pose: Pose6, cfg: EsmConfig,
                                  var_floor: float = 1e-6) -> EgosphereState:
    """One exact ray per ego-sphere pixel centre; misses stay at the prior."""
    state = new_state(cfg)
    phi, theta = sphere_grid(cfg.h_s, cfg.w_s)
    local = polar_to_cartesian(np.stack([phi, theta, np.ones_like(phi)], axis=-1)).reshape(-1, 3)
    T = pose_to_transform(agent_pose)
    dist, colour = scene.cast(T.t, local @ T.R.T)
    hit = np.isfinite(dist).reshape(cfg.h_s, cfg.w_s)
    depth = state.mean[..., 2]
    depth[hit] = dist.reshape(cfg.h_s, cfg.w_s)[hit]
    feats = np.zeros((cfg.h_s, cfg.w_s, 3))
    feats[hit] = colour.reshape(cfg.h_s, cfg.w_s, 3)[hit]
    nf = min(cfg.n, 3)
    state.mean[..., 3:3 + nf] = feats[..., :nf]
    state.var[hit] = var_floor
    return state


@dataclass(eq=False)
class Trajectory:
    poses: list[Pose6]
    camera_offset: Pose6 = field(default_factory=Pose6)

    def __post_init__(self):
        if not self.poses:
            raise ValueError("trajectory needs at least one pose")

    def __len__(self):
        return len(self.poses)

    def increments(self) -> list[Pose6]:
        """u_t = pose_{t-1}^-1 pose_t, with a zero increment for the first step."""
        out = [Pose6()]
        for a, b in zip(self.poses[:-1], self.poses[1:]):
            out.append(transform_to_pose(compose(invert(pose_to_transform(a)), pose_to_transform(b))))
        return out


def make_trajectory(kind: str, steps: int, params: dict | None = None, seed: int = 0) -> Trajectory:
    """Deterministic agent trajectories.

    spin: in-place yaw of ``step_deg`` per step (default 10).
    orbit: circle of ``radius`` around ``center``, facing the centre.
    walk: bounded random increments within ``bound`` of the start.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    params = dict(params or {})
    centre = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
    offset = Pose6(params.get("camera_t", (0.0, 0.0, 0.0)), params.get("camera_r", (0.0, 0.0, 0.0)))
    poses = []
    if kind == "spin":
        step = np.radians(params.get("step_deg", 10.0))
        for k in range(steps):
            yaw = k * step
            poses.append(Pose6(centre, [0.0, 0.0, np.mod(yaw + np.pi, 2 * np.pi) - np.pi]))
    elif kind == "orbit":
        radius = float(params.get("radius", 0.5))
        step = np.radians(params.get("step_deg", 10.0))
        for k in range(steps):
            a = k * step
            pos = centre + radius * np.array([np.cos(a), np.sin(a), 0.0])
            yaw = np.mod(a + np.pi + np.pi, 2 * np.pi) - np.pi  # face the centre
            poses.append(Pose6(pos, [0.0, 0.0, yaw]))
    elif kind in ("walk", "random-walk"):
        rng = np.random.default_rng(seed)
        bound = float(params.get("bound", 0.5))
        step_t = float(params.get("step_t", 0.05))
        step_r = np.radians(params.get("step_deg", 5.0))
        pos = centre.copy()
        yaw = 0.0
        for _ in range(steps):
            poses.append(Pose6(pos.copy(), [0.0, 0.0, yaw]))
            pos = np.clip(pos + rng.uniform(-step_t, step_t, 3), centre - bound, centre + bound)
            yaw = float(np.mod(yaw + rng.uniform(-step_r, step_r) + np.pi, 2 * np.pi) - np.pi)
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    return Trajectory(poses, offset)
