"""On-disk formats: tensor files, state files, sequences, previews and point clouds.

TensorFile layout::

    ESMTENSOR 1\\n
    {"dtype": "<f4", "shape": [...], "channels": [...], "meta": {...}}\\n
    <little-endian float32 payload, C order>

Sequence directory layout::

    manifest.yaml        cameras, feature count, frame count, noise defaults, ESM config
    trajectory.txt       one line per frame: index tx ty tz rx ry rz (agent in world)
    frames/000000_cam0_depth.esmt   (h, w) z-depth in metres, 0 = invalid
    frames/000000_cam0_feat.esmt    (h, w, n)
    frames/000000_cam0_var.esmt     (h, w, 1 + n), optional
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml
from PIL import Image

from .geom import Intrinsics, Pose6, compose, invert, polar_to_cartesian, pose_to_transform, \
    sphere_grid, transform_to_pose
from .state import EgosphereState, EsmConfig, PoseIncrement, ProjectiveFrame

MAGIC = b"ESMTENSOR 1\n"
SEQUENCE_FORMAT = "esm-sequence/1"
POSE_FORMAT = "index_txyz_rotvec"


class SequenceError(ValueError):
    """Base class for malformed sequence input."""


class ManifestError(SequenceError):
    pass


class MissingFrameError(SequenceError):
    pass


class ShapeMismatchError(SequenceError):
    pass


class NonMonotonicIndexError(SequenceError):
    pass


class TensorFileError(ValueError):
    pass


def write_tensor(path, array: np.ndarray, channels: list[str] | None = None,
                 meta: dict | None = None) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = {"dtype": "<f4", "shape": list(arr.shape), "channels": list(channels or []),
              "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(arr.tobytes(order="C"))


def _read_header(fh, path) -> dict:
    if fh.readline() != MAGIC:
        raise TensorFileError(f"{path}: not a tensor file")
    try:
        header = json.loads(fh.readline())
    except json.JSONDecodeError as exc:
        raise TensorFileError(f"{path}: corrupt header") from exc
    if header.get("dtype") != "<f4":
        raise TensorFileError(f"{path}: unsupported dtype {header.get('dtype')}")
    return header


def read_tensor_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def read_tensor(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        payload = fh.read()
    shape = tuple(header["shape"])
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise TensorFileError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy(), header


def state_channels(n: int, smoothed: bool) -> list[str]:
    feats = [f"f{i}" for i in range(n)]
    names = ["phi", "theta", "depth"] + feats + ["var_depth"] + [f"var_{f}" for f in feats]
    if smoothed:
        names += ["smooth_depth"] + [f"smooth_{f}" for f in feats]
    return names


def save_state(path, state: EgosphereState, cfg: EsmConfig | None = None) -> None:
    parts = [state.mean, state.var]
    if state.smoothed is not None:
        parts.append(state.smoothed[..., 2:])
    meta = {"frame_id": state.frame_id, "n": state.n, "smoothed": state.smoothed is not None}
    if cfg is not None:
        meta["config"] = cfg.to_dict()
    write_tensor(path, np.concatenate(parts, axis=-1), state_channels(state.n, state.smoothed is not None), meta)


def load_state(path) -> tuple[EgosphereState, dict]:
    """Read a state file; angle channels are regenerated from the grid."""
    data, header = read_tensor(path)
    meta = header["meta"]
    n = int(meta["n"])
    data = data.astype(np.float64)
    h, w = data.shape[:2]
    phi, theta = sphere_grid(h, w)
    mean = data[..., :3 + n].copy()
    mean[..., 0] = phi
    mean[..., 1] = theta
    var = data[..., 3 + n:4 + 2 * n].copy()
    smoothed = None
    if meta.get("smoothed"):
        smoothed = mean.copy()
        smoothed[..., 2:] = data[..., 4 + 2 * n:]
    return EgosphereState(mean, var, int(meta.get("frame_id", 0)), smoothed), meta


def state_checksum(state: EgosphereState) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(state.mean).tobytes())
    h.update(np.ascontiguousarray(state.var).tobytes())
    return h.hexdigest()


# -- trajectories -----------------------------------------------------------

def read_trajectory(path) -> tuple[list[int], list[Pose6]]:
    indices, poses = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise SequenceError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise SequenceError(f"{path}:{lineno}: {exc}") from exc
        if indices and idx <= indices[-1]:
            raise NonMonotonicIndexError(f"{path}:{lineno}: index {idx} after {indices[-1]}")
        indices.append(idx)
        poses.append(Pose6(vals[:3], vals[3:]))
    return indices, poses


def write_trajectory(path, indices, poses) -> None:
    lines = ["# index tx ty tz rx ry rz"]
    for i, p in zip(indices, poses):
        lines.append(" ".join([str(i)] + [repr(float(v)) for v in p.as_vector()]))
    Path(path).write_text("\n".join(lines) + "\n")


def quaternion_to_rotvec(qx, qy, qz, qw) -> np.ndarray:
    q = np.array([qx, qy, qz, qw], dtype=np.float64)
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    s = np.linalg.norm(q[:3])
    if s < 1e-12:
        return 2.0 * q[:3]
    angle = 2.0 * np.arctan2(s, q[3])
    return q[:3] / s * angle


def tum_to_trajectory(lines) -> tuple[list[int], list[Pose6]]:
    """Convert 'timestamp tx ty tz qx qy qz qw' lines to indexed rotation-vector poses."""
    indices, poses = [], []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        v = [float(x) for x in line.split()]
        if len(v) != 8:
            raise SequenceError(f"TUM line needs 8 fields: {line!r}")
        indices.append(len(indices))
        poses.append(Pose6(v[1:4], quaternion_to_rotvec(*v[4:8])))
    return indices, poses


def increments(poses: list[Pose6]) -> list[Pose6]:
    """u_t = pose_{t-1}^-1 pose_t; the first increment is zero."""
    out = [Pose6()]
    for a, b in zip(poses[:-1], poses[1:]):
        out.append(transform_to_pose(compose(invert(pose_to_transform(a)), pose_to_transform(b))))
    return out


# -- sequences --------------------------------------------------------------

@dataclass
class CameraSpec:
    name: str
    intrinsics: Intrinsics
    offset: Pose6 = field(default_factory=Pose6)

    def to_dict(self) -> dict:
        i = self.intrinsics
        return {"name": self.name,
                "intrinsics": {"fx": float(i.fx), "fy": float(i.fy), "cx": float(i.cx), "cy": float(i.cy),
                               "width": int(i.width), "height": int(i.height)},
                "offset": [float(v) for v in self.offset.as_vector()]}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSpec":
        i = d["intrinsics"]
        intr = Intrinsics(float(i["fx"]), float(i["fy"]), float(i["cx"]), float(i["cy"]),
                          int(i["width"]), int(i["height"]))
        return cls(str(d["name"]), intr, Pose6.from_vector(d.get("offset", [0.0] * 6)))


@dataclass
class SequenceManifest:
    cameras: list[CameraSpec]
    n: int
    frame_count: int
    esm: EsmConfig
    depth_var: float = 1e-6
    feature_var: float = 1e-6
    pose_var: float = 0.0
    motion_var: float = 0.0
    pose_format: str = POSE_FORMAT

    def to_dict(self) -> dict:
        return {
            "format": SEQUENCE_FORMAT,
            "frame_count": self.frame_count,
            "n": self.n,
            "pose_format": self.pose_format,
            "cameras": [c.to_dict() for c in self.cameras],
            "noise": {"depth_var": self.depth_var, "feature_var": self.feature_var,
                      "pose_var": self.pose_var, "motion_var": self.motion_var},
            "esm": self.esm.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceManifest":
        try:
            if d.get("format") != SEQUENCE_FORMAT:
                raise ManifestError(f"unsupported sequence format {d.get('format')!r}")
            if d.get("pose_format", POSE_FORMAT) != POSE_FORMAT:
                raise ManifestError(f"unsupported pose format {d.get('pose_format')!r}")
            noise = d.get("noise", {})
            return cls(
                cameras=[CameraSpec.from_dict(c) for c in d["cameras"]],
                n=int(d["n"]),
                frame_count=int(d["frame_count"]),
                esm=EsmConfig.from_dict(d.get("esm", {"n": int(d["n"])})),
                depth_var=float(noise.get("depth_var", 1e-6)),
                feature_var=float(noise.get("feature_var", 1e-6)),
                pose_var=float(noise.get("pose_var", 0.0)),
                motion_var=float(noise.get("motion_var", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc


def frame_path(root: Path, index: int, cam: str, kind: str) -> Path:
    return root / "frames" / f"{index:06d}_{cam}_{kind}.esmt"


@dataclass
class SequenceStep:
    index: int
    pose: Pose6
    increment: PoseIncrement
    frames: list[ProjectiveFrame]


@dataclass
class Sequence:
    root: Path
    manifest: SequenceManifest
    indices: list[int]
    poses: list[Pose6]

    def __len__(self):
        return len(self.indices)

    def _frame(self, index: int, cam: CameraSpec) -> ProjectiveFrame:
        m = self.manifest
        depth, _ = read_tensor(frame_path(self.root, index, cam.name, "depth"))
        feat, _ = read_tensor(frame_path(self.root, index, cam.name, "feat"))
        depth = depth.astype(np.float64)
        feat = feat.astype(np.float64).reshape(depth.shape + (m.n,))
        vpath = frame_path(self.root, index, cam.name, "var")
        if vpath.exists():
            var = read_tensor(vpath)[0].astype(np.float64)
        else:
            var = np.empty(depth.shape + (1 + m.n,))
            var[..., 0] = m.depth_var
            var[..., 1:] = m.feature_var
        var[depth == 0] = np.maximum(var[depth == 0], m.esm.prior_var)
        return ProjectiveFrame(depth, feat, var, cam.intrinsics, cam.offset,
                               np.eye(6) * m.pose_var, prior_var=m.esm.prior_var)

    def __iter__(self) -> Iterator[SequenceStep]:
        motion_cov = np.eye(6) * self.manifest.motion_var
        for idx, pose, inc in zip(self.indices, self.poses, increments(self.poses)):
            frames = [self._frame(idx, cam) for cam in self.manifest.cameras]
            yield SequenceStep(idx, pose, PoseIncrement(inc, motion_cov), frames)


def _check_frames(root: Path, manifest: SequenceManifest, indices: list[int]) -> None:
    for idx in indices:
        for cam in manifest.cameras:
            dpath = frame_path(root, idx, cam.name, "depth")
            fpath = frame_path(root, idx, cam.name, "feat")
            for p in (dpath, fpath):
                if not p.exists():
                    raise MissingFrameError(f"missing frame file {p}")
            h, w = cam.intrinsics.height, cam.intrinsics.width
            expect = {dpath: [h, w], fpath: [h, w, manifest.n]}
            vpath = frame_path(root, idx, cam.name, "var")
            if vpath.exists():
                expect[vpath] = [h, w, 1 + manifest.n]
            for p, shape in expect.items():
                got = read_tensor_header(p)["shape"]
                if got != shape and not (p == fpath and manifest.n == 0 and got == [h, w, 0]):
                    raise ShapeMismatchError(f"{p}: shape {got}, manifest implies {shape}")


def load_sequence(path, frame_skip: int = 1) -> Sequence:
    """Validate a sequence directory and return a lazily loading iterator.

    With ``frame_skip`` k only every k-th trajectory entry is kept and the
    increments are taken between kept frames.
    """
    if frame_skip < 1:
        raise ValueError("frame_skip must be >= 1")
    root = Path(path)
    mpath = root / "manifest.yaml"
    if not mpath.exists():
        raise ManifestError(f"no manifest.yaml in {root}")
    try:
        doc = yaml.safe_load(mpath.read_text())
    except yaml.YAMLError as exc:
        raise ManifestError(f"unreadable manifest: {exc}") from exc
    manifest = SequenceManifest.from_dict(doc or {})
    tpath = root / "trajectory.txt"
    if manifest.frame_count == 0 and not tpath.exists():
        indices, poses = [], []
    else:
        if not tpath.exists():
            raise MissingFrameError(f"no trajectory.txt in {root}")
        indices, poses = read_trajectory(tpath)
    if len(indices) != manifest.frame_count:
        raise MissingFrameError(
            f"trajectory has {len(indices)} poses, manifest declares {manifest.frame_count}")
    indices, poses = indices[::frame_skip], poses[::frame_skip]
    _check_frames(root, manifest, indices)
    return Sequence(root, manifest, indices, poses)


def write_sequence(path, manifest: SequenceManifest, indices: list[int], poses: list[Pose6],
                   frames: list[list[ProjectiveFrame]], write_var: bool = True) -> None:
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "manifest.yaml").write_text(yaml.safe_dump(manifest.to_dict(), sort_keys=False))
    write_trajectory(root / "trajectory.txt", indices, poses)
    n = manifest.n
    for idx, per_cam in zip(indices, frames):
        for cam, fr in zip(manifest.cameras, per_cam):
            write_tensor(frame_path(root, idx, cam.name, "depth"), fr.depth, ["depth"])
            write_tensor(frame_path(root, idx, cam.name, "feat"), fr.features,
                         [f"f{i}" for i in range(n)])
            if write_var:
                write_tensor(frame_path(root, idx, cam.name, "var"), fr.var,
                             ["var_depth"] + [f"var_f{i}" for i in range(n)])


# -- visual exports -----------------------------------------------------------

def preview_image(state: EgosphereState, prior_var: float, max_depth: float | None = None) -> Image.Image:
    """Features on top (clamped to [0, 1]), depth in grey below; unknown pixels black."""
    img = state.display
    known = state.var[..., 0] < prior_var
    h, w = state.shape
    n = state.n
    if n >= 3:
        colour = img[..., 3:6]
    elif n >= 1:
        colour = np.repeat(img[..., 3:4], 3, axis=-1)
    else:
        colour = np.zeros((h, w, 3))
    colour = np.where(known[..., None], np.clip(colour, 0.0, 1.0), 0.0)
    depth = img[..., 2]
    if max_depth is None:
        max_depth = float(depth[known].max()) if np.any(known) else 1.0
    grey = np.where(known, np.clip(depth / max(max_depth, 1e-9), 0.0, 1.0), 0.0)
    stacked = np.concatenate([colour, np.repeat(grey[..., None], 3, axis=-1)], axis=0)
    return Image.fromarray(np.round(stacked * 255).astype(np.uint8), mode="RGB")


def write_ply(path, state: EgosphereState, prior_var: float) -> int:
    """ASCII PLY of every informative pixel; returns the vertex count."""
    known = state.var[..., 0] < prior_var
    known &= state.mean[..., 2] > 0
    pts = polar_to_cartesian(state.mean[..., :3][known])
    if state.n >= 3:
        rgb = state.mean[..., 3:6][known]
    else:
        rgb = np.full((len(pts), 3), 0.5)
    rgb = np.round(np.clip(rgb, 0, 1) * 255).astype(int)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue", "end_header"]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}" for p, c in zip(pts, rgb)]
    Path(path).write_text("\n".join(lines) + "\n")
    return len(pts)
