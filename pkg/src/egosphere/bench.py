"""Throughput sweep over camera and memory resolutions."""

from __future__ import annotations

import csv
import math
import time

import numpy as np

from .fileio import state_checksum
from .fuse import esm_step
from .geom import Intrinsics
from .scene import Primitive, Scene, make_trajectory, render_projective
from .state import EsmConfig, PoseIncrement, new_state

MONO_RES = [(60, 80), (120, 160), (240, 320), (480, 640), (960, 1280)]
MEM_RES = [(45, 90), (90, 180), (180, 360), (360, 720), (720, 1440), (1440, 2880)]

# reference fps, 8-core CPU, TensorFlow 2 implementation; keyed by (mono, mem)
REFERENCE_FPS = {
    mem: dict(zip(MONO_RES, row))
    for mem, row in zip(MEM_RES, [
        (245.4, 162.6, 83.7, 24.4, 6.3),
        (140.1, 126.5, 70.8, 23.3, 6.1),
        (63.9, 64.0, 47.5, 19.2, 5.8),
        (16.3, 14.3, 14.5, 11.1, 4.7),
        (3.9, 3.7, 3.6, 3.6, 2.7),
        (1.1, 1.1, 1.0, 1.0, 0.9),
    ])
}

FIELDS = ["mono_h", "mono_w", "mem_h", "mem_w", "steps", "fps", "status", "checksum", "reference_fps"]


def bench_scene() -> Scene:
    return Scene([
        Primitive("box", {"min": [-3.0, -2.5, -1.5], "max": [3.0, 2.5, 2.5]}, [0.5, 0.5, 0.5],
                  {"amplitude": 0.35, "period": 3.0}),
        Primitive("sphere", {"center": [1.5, 0.6, 0.0], "radius": 0.4}, [0.9, 0.2, 0.1]),
        Primitive("sphere", {"center": [-1.0, -1.2, 0.3], "radius": 0.6}, [0.1, 0.3, 0.9]),
    ])


def render_frames(mono, steps: int, seed: int = 0, prior_var: float = 1e4):
    """Frames and increments for a short bounded walk, rendered once per camera size."""
    traj = make_trajectory("walk", steps, {"bound": 0.4, "step_t": 0.05, "step_deg": 5.0}, seed)
    intr = Intrinsics.from_fov(mono[1], mono[0], 90.0)
    rng = np.random.default_rng(seed)
    frames = [render_projective(bench_scene(), p, traj.camera_offset, intr, depth_noise_std=0.01,
                                prior_var=prior_var, rng=rng)[0] for p in traj.poses]
    incs = [PoseIncrement(u) for u in traj.increments()]
    return frames, incs


def run_cell(frames, incs, mem) -> tuple[float, str]:
    """Time ``len(frames) - 1`` steps after one untimed warm-up step."""
    cfg = EsmConfig(h_s=mem[0], w_s=mem[1], n=3)
    state = new_state(cfg)
    state = esm_step(state, incs[0], [frames[0]], cfg)
    t0 = time.perf_counter()
    for inc, fr in zip(incs[1:], frames[1:]):
        state = esm_step(state, inc, [fr], cfg)
    elapsed = time.perf_counter() - t0
    return (len(frames) - 1) / elapsed, state_checksum(state)


def bench(mono_res_list=MONO_RES, mem_res_list=MEM_RES, steps: int = 3, out_csv=None,
          seed: int = 0, log=None) -> list[dict]:
    if not mono_res_list or not mem_res_list:
        raise ValueError("resolution lists must be non-empty")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rows = []
    for mono in mono_res_list:
        frames, incs = render_frames(mono, steps + 1, seed)
        for mem in mem_res_list:
            row = {"mono_h": mono[0], "mono_w": mono[1], "mem_h": mem[0], "mem_w": mem[1],
                   "steps": steps, "reference_fps": REFERENCE_FPS.get(tuple(mem), {}).get(tuple(mono), "")}
            try:
                fps, digest = run_cell(frames, incs, mem)
                row.update(fps=fps, status="ok", checksum=digest)
            except MemoryError:
                row.update(fps=math.nan, status="oom", checksum="")
            rows.append(row)
            if log:
                log(f"mono {mono[0]}x{mono[1]} mem {mem[0]}x{mem[1]}: "
                    f"{row['fps']:.2f} fps ({row['status']})")
        del frames
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=FIELDS)
            writer.writeheader()
            writer.writerows(rows)
    return rows


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def format_table(rows: list[dict]) -> str:
    """Memory sizes down, camera sizes across; each cell is 'measured (reference)'."""
    monos = sorted({(int(r["mono_h"]), int(r["mono_w"])) for r in rows})
    mems = sorted({(int(r["mem_h"]), int(r["mem_w"])) for r in rows})
    cell = {((int(r["mono_h"]), int(r["mono_w"])), (int(r["mem_h"]), int(r["mem_w"]))): r for r in rows}
    head = ["memory \\ mono"] + [f"{h}x{w}" for h, w in monos]
    lines = [head]
    for mem in mems:
        line = [f"{mem[0]}x{mem[1]}"]
        for mono in monos:
            r = cell.get((mono, mem))
            if r is None:
                line.append("")
                continue
            if r["status"] != "ok":
                txt = "-"
            else:
                txt = f"{float(r['fps']):.1f}"
            ref = r.get("reference_fps")
            if ref not in ("", None):
                txt += f" ({float(ref):.1f})"
            line.append(txt)
        lines.append(line)
    widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in lines)
