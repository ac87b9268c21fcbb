"""Quantization, depth buffering, per-pixel fusion, smoothing and the full step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import pose_to_transform, sphere_grid
from .state import EgosphereState, EsmConfig, PoseIncrement, ProjectiveFrame
from .warp import ScatteredPoints, warp_omni, warp_projective


@dataclass(eq=False)
class Observation:
    mean: np.ndarray  # (h, w, 3 + n)
    var: np.ndarray   # (h, w, 1 + n)
    hit: np.ndarray   # (h, w) bool
    dpc: np.ndarray   # (h, w, 2) sub-pixel rounding distance (x = column, y = row)


def empty_observation(cfg: EsmConfig) -> Observation:
    h, w, n = cfg.h_s, cfg.w_s, cfg.n
    phi, theta = sphere_grid(h, w)
    mean = np.zeros((h, w, 3 + n))
    mean[..., 0] = phi
    mean[..., 1] = theta
    mean[..., 2] = cfg.prior_depth
    return Observation(mean, np.full((h, w, 1 + n), cfg.prior_var),
                       np.zeros((h, w), dtype=bool), np.zeros((h, w, 2)))


def quantize_scatter(pts: ScatteredPoints, cfg: EsmConfig) -> Observation:
    """Snap points to their nearest pixel and resolve duplicates.

    Per pixel, candidates with depth variance below ``dup_var_threshold`` compete
    on depth (closest wins); if there are none, the lowest variance wins.  Ties
    fall to the lowest ``src_index``, so the result does not depend on order.
    """
    obs = empty_observation(cfg)
    if len(pts) == 0:
        return obs
    h, w = cfg.h_s, cfg.w_s
    ok = (pts.polar[:, 0] >= 0) & (pts.polar[:, 0] <= np.pi)
    if not np.all(ok):
        pts = pts.subset(ok)

    rowf, colf = pts.pix[:, 0], pts.pix[:, 1]
    row = np.floor(rowf + 0.5)
    col = np.floor(colf + 0.5)
    dx = np.abs(colf - col)
    dy = np.abs(rowf - row)
    row = np.clip(row, 0, h - 1).astype(np.int64)
    col = np.mod(col, w).astype(np.int64)
    lin = row * w + col

    dvar = pts.var[:, 0]
    uncertain = dvar >= cfg.dup_var_threshold
    prio = np.where(uncertain, dvar, pts.polar[:, 2])
    order = np.lexsort((pts.src_index, prio, uncertain, lin))
    lin_sorted = lin[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    win = order[first]
    cells = lin[win]

    mean = obs.mean.reshape(h * w, -1)
    var = obs.var.reshape(h * w, -1)
    mean[cells, 2] = pts.polar[win, 2]
    mean[cells, 3:] = pts.features[win]
    var[cells] = pts.var[win]
    obs.hit.reshape(-1)[cells] = True
    dpc = obs.dpc.reshape(h * w, 2)
    dpc[cells, 0] = dx[win]
    dpc[cells, 1] = dy[win]
    return obs


def fuse_pixel(prior_mean, prior_var, obs_mean, obs_var, cfg: EsmConfig):
    """Gated per-channel Kalman update over [depth, features...] vectors.

    Inputs are (..., 1 + n).  Returns (mean, var, gain, fused) where ``gain`` is
    the depth-channel weight given to the observation (1 for a wholesale
    replacement by the observation, 0 when the prior is kept) and ``fused``
    marks pixels that took the Kalman branch.
    """
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    prior_var = np.asarray(prior_var, dtype=np.float64)
    obs_mean = np.asarray(obs_mean, dtype=np.float64)
    obs_var = np.asarray(obs_var, dtype=np.float64)

    d_p, d_o = prior_mean[..., 0], obs_mean[..., 0]
    v_p, v_o = prior_var[..., 0], obs_var[..., 0]
    hole_p = v_p >= cfg.prior_var
    hole_o = v_o >= cfg.prior_var
    in_gate = np.abs(d_p - d_o) <= cfg.rel_depth_threshold * np.maximum(d_p, d_o)
    fused = in_gate & ~hole_p & ~hole_o

    k = prior_var / (prior_var + obs_var)
    k_mean = prior_mean + k * (obs_mean - prior_mean)
    k_var = (1.0 - k) * prior_var

    cert_p = v_p < cfg.dup_var_threshold
    cert_o = v_o < cfg.dup_var_threshold
    take_obs = np.where(cert_o | cert_p,
                        cert_o & (~cert_p | (d_o < d_p)),
                        v_o < v_p)

    f = fused[..., None]
    t = take_obs[..., None]
    mean = np.where(f, k_mean, np.where(t, obs_mean, prior_mean))
    var = np.where(f, k_var, np.where(t, obs_var, prior_var))
    gain = np.where(fused, k[..., 0], take_obs.astype(np.float64))
    return mean, var, gain, fused


def _neighbourhood(img: np.ndarray, N: int):
    """Yield shifted views of ``img`` for each (k, l) of an N x N patch, row-major.

    Rows clamp at the poles, columns wrap across the azimuth seam.
    """
    r = N // 2
    h = img.shape[0]
    padded = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="edge")
    padded = np.pad(padded, ((0, 0), (r, r), (0, 0)), mode="wrap")
    w = img.shape[1]
    for k in range(N):
        for l in range(N):
            yield padded[k:k + h, l:l + w]


def smooth(mean: np.ndarray, var: np.ndarray, N: int) -> np.ndarray:
    """Inverse-variance weighted N x N mean of depth and feature channels.

    Variances are left alone, so holes keep their prior variance.
    """
    if N == 1:
        return mean.copy()
    vals = mean[..., 2:]
    weights = 1.0 / var
    num = np.zeros_like(vals)
    den = np.zeros_like(vals)
    for m, wt in zip(_neighbourhood(vals * weights, N), _neighbourhood(weights, N)):
        num += m
        den += wt
    out = mean.copy()
    out[..., 2:] = num / den
    return out


def image_gradients(mean: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel central differences of channels 2: (wrap in theta, one-sided at poles)."""
    vals = mean[..., 2:]
    gx = (np.roll(vals, -1, axis=1) - np.roll(vals, 1, axis=1)) / 2.0
    if vals.shape[0] > 1:
        gy = np.gradient(vals, axis=0)
    else:
        gy = np.zeros_like(vals)
    return gx, gy


def quantization_noise(smoothed_mean: np.ndarray, var: np.ndarray, dpc: np.ndarray) -> np.ndarray:
    gx, gy = image_gradients(smoothed_mean)
    return var + np.abs(gx) * dpc[..., 0:1] + np.abs(gy) * dpc[..., 1:2]


def predict(state: EgosphereState, inc: PoseIncrement, cfg: EsmConfig) -> Observation:
    return quantize_scatter(warp_omni(state, pose_to_transform(inc.u), cfg, inc.cov), cfg)


def observe(frames: list[ProjectiveFrame], cfg: EsmConfig) -> Observation:
    """Scatter all frames jointly into one depth buffer."""
    parts, offset = [], 0
    for f in frames:
        parts.append(warp_projective(f, cfg, index_offset=offset))
        offset += f.depth.size
    return quantize_scatter(ScatteredPoints.concatenate(parts, cfg.n), cfg)


def esm_step(state: EgosphereState, inc: PoseIncrement, frames: list[ProjectiveFrame],
             cfg: EsmConfig) -> EgosphereState:
    """Motion, observation, update, then smoothing and quantization noise.

    The returned ``mean`` is the filter posterior; ``smoothed`` holds its
    hole-filled version, whose gradients drive the quantization noise.  That
    noise uses the sub-pixel rounding of the motion step, weighted by how much
    of each pixel's posterior came from the prediction.
    """
    if state.n != cfg.n or state.shape != (cfg.h_s, cfg.w_s):
        raise ValueError("state does not match the configuration")
    for f in frames:
        if f.n != cfg.n:
            raise ValueError(f"frame has {f.n} feature channels, memory expects {cfg.n}")

    pred = predict(state, inc, cfg)
    obs = observe(frames, cfg) if frames else empty_observation(cfg)

    mean_f, var, gain, _ = fuse_pixel(pred.mean[..., 2:], pred.var, obs.mean[..., 2:], obs.var, cfg)
    # quantization noise is charged to the share of the posterior that came
    # through re-snapping the carried belief
    dpc = (1.0 - gain[..., None]) * pred.dpc

    mean = pred.mean.copy()
    mean[..., 2:] = mean_f
    smoothed = smooth(mean, var, cfg.smooth_patch)
    var = quantization_noise(smoothed, var, dpc)
    return EgosphereState(mean, var, state.frame_id + 1, smoothed=smoothed)
