"""Pillar feature network and the multi-scale BEV neck.

The PFN embeds each cell's valid points (padding rows never enter the
computation), max-pools per cell, and scatters to a dense pseudo-image.
The neck runs strided conv stages, resamples every stage back to the output
resolution, concatenates, and fuses to the final channel width.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .layers import BatchNorm, ConvBNReLU, Linear, Module
from .voxelizer import PillarTensor


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclasses.dataclass(frozen=True)
class BackboneConfig:
    """Widths and strides; neck_strides are per-stage downsample factors
    relative to the pseudo-image, and the last one is the output stride."""

    pfn_channels: int = 32
    neck_channels: tuple = (32, 64)
    neck_strides: tuple = (1, 2)
    out_channels: int = 64

    def __post_init__(self):
        if self.pfn_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if len(self.neck_channels) != len(self.neck_strides) or not self.neck_channels:
            raise ConfigError("neck_channels and neck_strides must be equal-length, nonempty")
        if any(c < 1 for c in self.neck_channels):
            raise ConfigError("neck channel counts must be >= 1")
        prev = 1
        for s in self.neck_strides:
            if not _is_pow2(s):
                raise ConfigError(f"neck strides must be powers of two, got {s}")
            if s % prev:
                raise ConfigError("neck strides must be nondecreasing by integer factors")
            prev = s

    @property
    def s_out(self):
        return self.neck_strides[-1]


class PillarFeatureNet(Module):
    """Per-point linear -> BN -> ReLU, masked max per cell, scatter to grid."""

    def __init__(self, in_dim, channels, rng):
        super().__init__()
        self.in_dim = in_dim
        self.channels = channels
        self.linear = self.add_child("linear", Linear(in_dim, channels, rng))
        self.bn = self.add_child("bn", BatchNorm(channels))

    def __call__(self, pillars: PillarTensor):
        w, h = pillars.grid_dims
        p = pillars.num_cells
        if p == 0:
            return ad.Tensor(np.zeros((1, self.channels, h, w)))
        if pillars.features.shape[2] != self.in_dim:
            raise ShapeError(f"pillar feature dim {pillars.features.shape[2]} "
                             f"!= configured {self.in_dim}")
        counts = pillars.point_counts
        valid = np.arange(pillars.features.shape[1])[None, :] < counts[:, None]
        flat = ad.Tensor(pillars.features[valid])
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        embedded = ad.relu(self.bn(self.linear(flat)))
        cell_feats = ad.segment_max(embedded, starts)
        coords = pillars.coords
        if coords.shape[1] == 3:
            # voxel mode: average the per-voxel features over each BEV column
            col_keys = coords[:, 1].astype(np.int64) * w + coords[:, 0]
            order = np.argsort(col_keys, kind="stable")
            sorted_keys = col_keys[order]
            cell_feats = ad.index_rows(cell_feats, order)
            uniq, col_starts = np.unique(sorted_keys, return_index=True)
            cell_feats = ad.segment_mean(cell_feats, col_starts)
            coords = np.stack([uniq % w, uniq // w], axis=1)
        return ad.scatter_to_grid(cell_feats, coords, (w, h))


class Neck(Module):
    def __init__(self, cfg: BackboneConfig, rng):
        super().__init__()
        self.cfg = cfg
        in_c = cfg.pfn_channels
        prev_stride = 1
        self.stages = []
        for i, (c, s) in enumerate(zip(cfg.neck_channels, cfg.neck_strides)):
            rel = s // prev_stride
            stage = [ConvBNReLU(in_c, c, 3, rng, stride=rel),
                     ConvBNReLU(c, c, 3, rng)]
            for j, block in enumerate(stage):
                self.add_child(f"stage{i}.{j}", block)
            self.stages.append(stage)
            in_c = c
            prev_stride = s
        self.resample_convs = []
        for i, c in enumerate(cfg.neck_channels):
            block = self.add_child(f"resample{i}", ConvBNReLU(c, c, 3, rng))
            self.resample_convs.append(block)
        self.fuse = self.add_child(
            "fuse", ConvBNReLU(sum(cfg.neck_channels), cfg.out_channels, 3, rng))

    def __call__(self, x):
        n, c, h, w = x.data.shape
        cfg = self.cfg
        if h % cfg.s_out or w % cfg.s_out:
            raise ShapeError(f"input {h}x{w} not divisible by output stride {cfg.s_out}")
        for s in cfg.neck_strides:
            if h % s or w % s:
                raise ShapeError(f"input {h}x{w} not divisible by stage stride {s}")
        oh, ow = h // cfg.s_out, w // cfg.s_out
        outs = []
        cur = x
        for stage, conv in zip(self.stages, self.resample_convs):
            for block in stage:
                cur = block(cur)
            outs.append(conv(ad.resample_nearest(cur, (oh, ow))))
        cat = outs[0]
        for other in outs[1:]:
            cat = ad.concat_channels(cat, other)
        return self.fuse(cat)


def pillar_feature_net(pillars: PillarTensor, params: PillarFeatureNet):
    """Functional entry point; see PillarFeatureNet."""
    return params(pillars)


def neck_forward(pseudo_image, params: Neck):
    """Functional entry point; see Neck."""
    return params(pseudo_image)
