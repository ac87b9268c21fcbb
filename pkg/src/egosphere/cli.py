"""Command line entry point: ``esm replay|synth|bench|avoid|render|tum2traj``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import yaml
from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from .avoid import AvoidanceConfig, avoidance_vector
from .fileio import SequenceError, TensorFileError, load_sequence, load_state, preview_image, \
    tum_to_trajectory, write_ply, write_trajectory
from .pipeline import replay, synth
from .state import EsmConfig

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2


class InputError(Exception):
    pass


def parse_res(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc
    return h, w


def _threads(args) -> int | None:
    env = os.environ.get("ESM_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise InputError(f"ESM_THREADS must be an integer, got {env!r}") from exc
    return getattr(args, "threads", None)


def cmd_replay(args) -> int:
    seq = load_sequence(args.seq, frame_skip=args.frame_skip)
    cfg = seq.manifest.esm
    if args.mem:
        cfg = replace(cfg, h_s=args.mem[0], w_s=args.mem[1])
    report = replay(seq, cfg, args.out, ply=args.ply)
    fps = report["fps"]
    print(f"{report['steps']} steps, " + (f"{fps:.2f} fps" if fps else "no timed steps"))
    return EXIT_OK


def cmd_synth(args) -> int:
    params = {}
    if args.params:
        params = yaml.safe_load(args.params) or {}
        if not isinstance(params, dict):
            raise InputError("--params must be a mapping")
    m = synth(args.scene, args.traj, args.steps, args.out, seed=args.seed, traj_params=params,
              width=args.width, height=args.height, hfov_deg=args.fov,
              depth_noise_std=args.depth_noise)
    print(f"wrote {m.frame_count} frames to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    mono = [parse_res(s) for s in args.mono.split(",")] if args.mono else bench_mod.MONO_RES
    mem = [parse_res(s) for s in args.mem.split(",")] if args.mem else bench_mod.MEM_RES
    log = None if args.quiet else (lambda s: print(s, file=sys.stderr))
    rows = bench_mod.bench(mono, mem, args.steps, args.out, seed=args.seed, log=log)
    print(bench_mod.format_table(rows))
    return EXIT_OK


def cmd_avoid(args) -> int:
    state, _ = load_state(args.state)
    cfg = AvoidanceConfig(args.radius, args.vmax)
    v = avoidance_vector(state, cfg, var_threshold=args.var_threshold)
    print(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    return EXIT_OK


def cmd_render(args) -> int:
    state, meta = load_state(args.state)
    prior_var = EsmConfig.from_dict(meta.get("config", {})).prior_var
    suffix = Path(args.out).suffix.lower()
    if suffix == ".png":
        preview_image(state, prior_var, args.max_depth).save(args.out)
    elif suffix == ".ply":
        write_ply(args.out, state, prior_var)
    else:
        raise InputError("--out must end in .png or .ply")
    return EXIT_OK


def cmd_tum2traj(args) -> int:
    with open(args.tum) as fh:
        indices, poses = tum_to_trajectory(fh)
    write_trajectory(args.out, indices, poses)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esm", description="Egospheric spatial memory tools")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("replay", help="run the filter over a sequence directory")
    r.add_argument("--seq", required=True)
    r.add_argument("--mem", type=parse_res, help="memory size HxW (default: from manifest)")
    r.add_argument("--out", required=True)
    r.add_argument("--frame-skip", type=int, default=1)
    r.add_argument("--ply", action="store_true")
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("synth", help="render a synthetic sequence from a scene file")
    s.add_argument("--scene", required=True)
    s.add_argument("--traj", required=True, choices=["spin", "orbit", "walk"])
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--params", help="trajectory parameters as inline YAML, e.g. '{radius: 0.5}'")
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--fov", type=float, default=90.0)
    s.add_argument("--depth-noise", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="fps sweep over camera and memory sizes")
    b.add_argument("--out", required=True)
    b.add_argument("--steps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--mono", help="comma separated HxW list")
    b.add_argument("--mem", help="comma separated HxW list")
    b.add_argument("--threads", type=int)
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("avoid", help="avoidance velocity for a saved state")
    a.add_argument("--state", required=True)
    a.add_argument("--radius", type=float, default=0.2)
    a.add_argument("--vmax", type=float, default=1.0)
    a.add_argument("--var-threshold", type=float, default=1.0)
    a.set_defaults(func=cmd_avoid)

    v = sub.add_parser("render", help="export a saved state as PNG preview or PLY cloud")
    v.add_argument("--state", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--max-depth", type=float)
    v.set_defaults(func=cmd_render)

    t = sub.add_parser("tum2traj", help="convert a TUM trajectory to the sequence pose format")
    t.add_argument("--tum", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tum2traj)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        threads = _threads(args)
        limit = threadpool_limits(threads) if threads else nullcontext()
        with limit:
            return args.func(args)
    except (InputError, SequenceError, TensorFileError, FileNotFoundError, IsADirectoryError,
            yaml.YAMLError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"esm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"esm: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
