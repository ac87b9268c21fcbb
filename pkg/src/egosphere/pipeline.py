"""Sequence generation and replay."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .fileio import (
    CameraSpec,
    Sequence,
    SequenceManifest,
    save_state,
    state_checksum,
    write_ply,
    write_sequence,
    preview_image,
)
from .fuse import esm_step
from .geom import Intrinsics
from .scene import load_scene, make_trajectory, render_projective
from .state import EgosphereState, EsmConfig, new_state


def synth(scene_file, traj_kind: str, steps: int, out_dir, seed: int = 0,
          traj_params: dict | None = None, width: int = 64, height: int = 64,
          hfov_deg: float = 90.0, depth_noise_std: float = 0.0,
          esm: EsmConfig | None = None) -> SequenceManifest:
    """Render a trajectory through a scene file and write it as a sequence directory."""
    scene = load_scene(scene_file)
    esm = esm or EsmConfig()
    traj = make_trajectory(traj_kind, steps, traj_params, seed)
    intr = Intrinsics.from_fov(width, height, hfov_deg)
    rng = np.random.default_rng(seed)
    frames = []
    for pose in traj.poses:
        fr, _ = render_projective(scene, pose, traj.camera_offset, intr,
                                  depth_noise_std=depth_noise_std, prior_var=esm.prior_var, rng=rng)
        frames.append([fr])
    manifest = SequenceManifest(
        cameras=[CameraSpec("cam0", intr, traj.camera_offset)],
        n=3,
        frame_count=len(traj),
        esm=esm,
        depth_var=max(depth_noise_std ** 2, 1e-6),
    )
    write_sequence(out_dir, manifest, list(range(len(traj))), traj.poses, frames)
    return manifest


def replay(seq: Sequence, cfg: EsmConfig, out_dir, ply: bool = False) -> dict:
    """Run the filter over a sequence, writing one state file and preview per step.

    Step 0 is the prior.  Returns the run report, which is also written to
    ``report.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.n != seq.manifest.n:
        raise ValueError(f"memory has n={cfg.n}, sequence has n={seq.manifest.n}")
    state = new_state(cfg)
    _write_step(out, 0, state, cfg, ply)
    times = []
    for k, step in enumerate(seq, 1):
        t0 = time.perf_counter()
        state = esm_step(state, step.increment, step.frames, cfg)
        times.append(time.perf_counter() - t0)
        _write_step(out, k, state, cfg, ply)
    total = float(sum(times))
    report = {
        "steps": len(times),
        "step_seconds": times,
        "fps": (len(times) / total) if times and total > 0 else None,
        "config": cfg.to_dict(),
        "final_checksum": state_checksum(state),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return report


def _write_step(out: Path, k: int, state: EgosphereState, cfg: EsmConfig, ply: bool) -> None:
    stem = out / f"step_{k:06d}"
    save_state(stem.with_suffix(".esmt"), state, cfg)
    preview_image(state, cfg.prior_var).save(stem.with_suffix(".png"))
    if ply:
        write_ply(stem.with_suffix(".ply"), state, cfg.prior_var)
