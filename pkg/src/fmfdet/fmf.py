"""Temporal aggregation of BEV feature maps across consecutive frames.

Each step fuses the current map with the previous step's map (optionally
warped into the current ego frame by relative odometry) through a shared
concat -> conv -> BN -> ReLU block. The carried state always holds the raw
pre-aggregation map, so the temporal receptive field is exactly two frames.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError, StateError
from .geometry import Pose2D, relative_pose, rot2d
from .layers import BatchNorm, Conv2d, Module

__all__ = ["FMFConfig", "FMFState", "FMFParams", "fmf_base",
           "warp_feature_map", "fmf_step"]


@dataclasses.dataclass(frozen=True)
class FMFConfig:
    enabled: bool = True
    use_odometry: bool = True
    kernel_size: int = 3

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")


@dataclasses.dataclass
class FMFState:
    """Previous step's pre-aggregation map and its ego pose."""

    prev_map: object = None
    prev_pose: Pose2D = None
    initialized: bool = False


class FMFParams(Module):
    """Shared fusion block: conv(2C -> C, k x k, same) + bias, BN."""

    def __init__(self, channels, kernel_size, rng):
        super().__init__()
        self.channels = channels
        self.conv = self.add_child(
            "conv", Conv2d(2 * channels, channels, kernel_size, rng, bias=True))
        self.bn = self.add_child("bn", BatchNorm(channels))


def fmf_base(current, previous, params: FMFParams, mode=None):
    """concat(current, previous) -> conv -> BN -> ReLU; shape-preserving."""
    if current.data.shape != previous.data.shape:
        raise ShapeError(f"fmf_base shape mismatch: {current.data.shape} "
                         f"vs {previous.data.shape}")
    if current.data.shape[1] != params.channels:
        raise ShapeError(f"fmf_base expects {params.channels} channels, "
                         f"got {current.data.shape[1]}")
    if mode is not None:
        params.train(mode == "train")
    x = ad.concat_channels(current, previous)
    return ad.relu(params.bn(params.conv(x)))


def warp_feature_map(feature_map, rel: Pose2D, cell_size_out, origin=None):
    """Resample the previous map into the current ego frame.

    `rel` maps previous-frame coordinates to current-frame coordinates
    (relative_pose(prev, cur)); for every output cell center p the source is
    read at R(-yaw) (p - t) with bilinear interpolation and zero padding.
    `origin` is the world xy of the map's (min, min) corner; by default the
    map is taken as ego-centered.
    """
    n, c, h, w = feature_map.data.shape
    if cell_size_out <= 0:
        raise ConfigError(f"cell_size_out must be positive, got {cell_size_out}")
    if origin is None:
        origin = (-w * cell_size_out / 2.0, -h * cell_size_out / 2.0)
    x_min, y_min = origin
    xs = x_min + (np.arange(w) + 0.5) * cell_size_out
    ys = y_min + (np.arange(h) + 0.5) * cell_size_out
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx - rel.x, gy - rel.y], axis=-1)
    src = pts @ rot2d(rel.yaw)  # row-vector form of R(-yaw) @ p
    sx = (src[..., 0] - x_min) / cell_size_out - 0.5
    sy = (src[..., 1] - y_min) / cell_size_out - 0.5
    grid = np.broadcast_to(np.stack([sx, sy], axis=-1), (n, h, w, 2))
    return ad.bilinear_sample(feature_map, grid)


def fmf_step(current, state: FMFState, params: FMFParams, odometry=None,
             mode=None, cell_size_out=None, origin=None):
    """One recurrence step; returns (fused map, new state).

    `odometry` is an optional (pose at t-1, pose at t) pair; when given, the
    stored previous map is warped by their relative pose before fusion. On
    the first frame the map self-aggregates (previous := current).
    """
    if state is None:
        state = FMFState()
    if not state.initialized:
        previous = current
    else:
        if state.prev_map.data.shape != current.data.shape:
            raise StateError(f"feature map shape changed mid-sequence: "
                             f"{state.prev_map.data.shape} -> {current.data.shape}")
        previous = state.prev_map
        if odometry is not None:
            prev_pose, cur_pose = odometry
            if prev_pose is not None and cur_pose is not None:
                if cell_size_out is None:
                    raise ConfigError("warping by odometry needs cell_size_out")
                rel = relative_pose(prev_pose, cur_pose)
                previous = warp_feature_map(previous, rel, cell_size_out, origin)
    out = fmf_base(current, previous, params, mode)
    cur_pose = odometry[1] if odometry is not None else None
    return out, FMFState(prev_map=current, prev_pose=cur_pose, initialized=True)
