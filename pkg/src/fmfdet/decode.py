"""Turn head outputs back into scored boxes via heatmap peak picking.

A cell is a peak when it equals its 3x3 neighborhood maximum; among equal
neighbors only the lexicographically-first (row, then column) survives, so
the peak set is deterministic even on plateaus.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ConfigError
from .geometry import MapGeometry
from .heads import HeadOutput
from .scene import Box3D
from . import autodiff as ad


@dataclasses.dataclass(frozen=True)
class MatchConfig:
    """Decode and evaluation knobs shared across the metric stack."""

    distance_thresholds: tuple = (0.5, 1.0, 2.0, 4.0)
    score_threshold: float = 0.1
    top_k: int = 100

    def __post_init__(self):
        t = self.distance_thresholds
        if not t or any(x <= 0 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigError("distance thresholds must be positive and ascending")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError("score_threshold must be in [0, 1]")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")


@dataclasses.dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float
    class_id: int


def find_peaks(heatmap):
    """Boolean [K,h,w] mask of 3x3 local maxima with the lexicographic tie rule."""
    k, h, w = heatmap.shape
    pooled = ad.maxpool2d(heatmap[None], 3, stride=1, padding=1).data[0]
    peaks = heatmap >= pooled
    padded = np.full((k, h + 2, w + 2), -np.inf)
    padded[:, 1:-1, 1:-1] = heatmap
    for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
        neighbor = padded[:, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        peaks &= neighbor != heatmap
    return peaks


def decode(head: HeadOutput, geom: MapGeometry, cfg: MatchConfig):
    """Extract up to top_k scored detections from one frame's head output."""
    hm = head.heatmap.data[0]
    peaks = find_peaks(hm)
    ks, iys, ixs = np.nonzero(peaks)
    scores = hm[ks, iys, ixs]
    keep = scores >= cfg.score_threshold
    ks, iys, ixs, scores = ks[keep], iys[keep], ixs[keep], scores[keep]
    if scores.size > cfg.top_k:
        order = np.lexsort((ixs, iys, ks, -scores))[:cfg.top_k]
        ks, iys, ixs, scores = ks[order], iys[order], ixs[order], scores[order]
    offs = head.offset.data[0]
    heights = head.height.data[0]
    sizes = head.size.data[0]
    rots = head.rotation.data[0]
    vels = head.velocity.data[0]
    dets = []
    for k, iy, ix, score in zip(ks, iys, ixs, scores):
        cx = (ix + offs[0, iy, ix]) * geom.cell + geom.x_min
        cy = (iy + offs[1, iy, ix]) * geom.cell + geom.y_min
        bw, bl, bh = np.exp(sizes[:, iy, ix])
        yaw = math.atan2(rots[0, iy, ix], rots[1, iy, ix])
        box = Box3D(float(cx), float(cy), float(heights[0, iy, ix]),
                    float(bw), float(bl), float(bh), float(yaw),
                    float(vels[0, iy, ix]), float(vels[1, iy, ix]),
                    int(k))
        dets.append(Detection(box, float(score), int(k)))
    dets.sort(key=lambda d: (-d.score, d.class_id, d.box.cx, d.box.cy))
    return dets
