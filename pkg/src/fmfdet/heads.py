"""Center-based multi-task head, Gaussian heatmap targets, and losses.

The head predicts, per BEV cell: a per-class center heatmap plus offset,
height, log-size, (sin, cos) rotation, and velocity regression maps. Targets
render one Gaussian per object onto the class channel (max-combined), with
regression supervised only at the integer center cells.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .geometry import MapGeometry
from .layers import Conv2d, Module

REG_BRANCHES = (("offset", 2), ("height", 1), ("size", 3), ("rotation", 2),
                ("velocity", 2))


@dataclasses.dataclass(frozen=True)
class FocalParams:
    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("focal exponents must be positive")


@dataclasses.dataclass(frozen=True)
class LossWeights:
    offset: float = 1.0
    size: float = 1.0
    height: float = 1.0
    rotation: float = 0.2
    velocity: float = 1.0

    def __post_init__(self):
        if min(self.offset, self.size, self.height, self.rotation, self.velocity) < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclasses.dataclass
class HeadOutput:
    heatmap: object   # [1,K,h,w], post-sigmoid
    offset: object    # [1,2,h,w], cells (dx, dy)
    height: object    # [1,1,h,w], meters
    size: object      # [1,3,h,w], (log w, log l, log h)
    rotation: object  # [1,2,h,w], (sin yaw, cos yaw)
    velocity: object  # [1,2,h,w], m/s


@dataclasses.dataclass
class TargetMaps:
    """Rendered supervision for one frame.

    center_mask lists ((iy, ix), class_id, object_index) for every kept box;
    the regression target rows align with that order.
    """

    heatmap: np.ndarray        # [K,h,w]
    center_mask: list
    offset: np.ndarray         # [N,2]
    height: np.ndarray         # [N,1]
    size: np.ndarray           # [N,3] log-space
    rotation: np.ndarray       # [N,2]
    velocity: np.ndarray       # [N,2]
    num_objects: int


class DetectionHead(Module):
    """Per-branch conv(C->Ch,3x3) -> ReLU -> conv(Ch->out,1x1).

    The heatmap branch ends in a sigmoid; its final conv starts at zero
    weights with bias -log((1-p)/p), p=0.1, so a fresh model predicts 0.1
    everywhere.
    """

    def __init__(self, in_channels, head_channels, num_classes, rng):
        super().__init__()
        if num_classes < 1:
            raise ConfigError("need at least one class")
        self.num_classes = num_classes
        self.branches = {}
        for name, out in (("heatmap", num_classes),) + REG_BRANCHES:
            hidden = self.add_child(f"{name}.hidden",
                                    Conv2d(in_channels, head_channels, 3, rng))
            final = self.add_child(f"{name}.final",
                                   Conv2d(head_channels, out, 1, rng))
            if name == "heatmap":
                final.weight.data[:] = 0.0
                final.bias.data[:] = -math.log((1.0 - 0.1) / 0.1)
            self.branches[name] = (hidden, final)

    def _branch(self, name, x):
        hidden, final = self.branches[name]
        return final(ad.relu(hidden(x)))

    def __call__(self, bev):
        if bev.data.ndim != 4:
            raise ShapeError("head expects a [1,C,h,w] map")
        return HeadOutput(
            heatmap=ad.sigmoid(self._branch("heatmap", bev)),
            offset=self._branch("offset", bev),
            height=self._branch("height", bev),
            size=self._branch("size", bev),
            rotation=self._branch("rotation", bev),
            velocity=self._branch("velocity", bev),
        )


def head_forward(bev, params: DetectionHead) -> HeadOutput:
    """Functional entry point; see DetectionHead."""
    return params(bev)


def gaussian_radius(box, cell_size, min_overlap=0.1):
    """Gaussian spread (in cells) for a box's heatmap blob.

    The radius is the largest integer displacement of the box's axis-aligned
    BEV footprint that still guarantees IoU >= min_overlap (three-case
    quadratic construction), clamped to >= 2 cells; sigma = radius / 3.
    """
    bw = box.w / cell_size
    bl = box.l / cell_size

    a1 = 1.0
    b1 = bl + bw
    c1 = bw * bl * (1.0 - min_overlap) / (1.0 + min_overlap)
    r1 = (b1 + math.sqrt(b1 * b1 - 4.0 * a1 * c1)) / 2.0

    a2 = 4.0
    b2 = 2.0 * (bl + bw)
    c2 = (1.0 - min_overlap) * bw * bl
    r2 = (b2 + math.sqrt(b2 * b2 - 4.0 * a2 * c2)) / 2.0

    a3 = 4.0 * min_overlap
    b3 = -2.0 * min_overlap * (bl + bw)
    c3 = (min_overlap - 1.0) * bw * bl
    r3 = (b3 + math.sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0

    radius = max(2.0, min(r1, r2, r3))
    return radius / 3.0


def render_targets(gt_boxes, geom: MapGeometry, num_classes, min_overlap=0.1):
    """Rasterize boxes into heatmap + per-center regression targets.

    Boxes whose centers fall outside the grid are dropped. Per class, the
    heatmap is the elementwise max over that class's object Gaussians,
    evaluated on integer cell offsets so each center cell is exactly 1.
    """
    h, w = geom.h, geom.w
    heatmap = np.zeros((num_classes, h, w))
    center_mask = []
    rows = {name: [] for name, _ in REG_BRANCHES}
    gy, gx = np.mgrid[0:h, 0:w]
    for obj_idx, box in enumerate(gt_boxes):
        if not (0 <= box.class_id < num_classes):
            raise ConfigError(f"class_id {box.class_id} outside [0, {num_classes})")
        px = (box.cx - geom.x_min) / geom.cell
        py = (box.cy - geom.y_min) / geom.cell
        ix, iy = int(math.floor(px)), int(math.floor(py))
        if not (0 <= ix < w and 0 <= iy < h):
            continue
        sigma = gaussian_radius(box, geom.cell, min_overlap)
        d2 = (gx - ix) ** 2 + (gy - iy) ** 2
        blob = np.exp(-d2 / (2.0 * sigma * sigma))
        np.maximum(heatmap[box.class_id], blob, out=heatmap[box.class_id])
        center_mask.append(((iy, ix), box.class_id, obj_idx))
        rows["offset"].append((px - ix, py - iy))
        rows["height"].append((box.cz,))
        rows["size"].append((math.log(box.w), math.log(box.l), math.log(box.h)))
        rows["rotation"].append((math.sin(box.yaw), math.cos(box.yaw)))
        rows["velocity"].append((box.vx, box.vy))
    n = len(center_mask)

    def arr(name, width):
        return (np.asarray(rows[name], dtype=np.float64) if n
                else np.zeros((0, width)))

    return TargetMaps(heatmap=heatmap, center_mask=center_mask,
                      offset=arr("offset", 2), height=arr("height", 1),
                      size=arr("size", 3), rotation=arr("rotation", 2),
                      velocity=arr("velocity", 2), num_objects=n)


def focal_loss(pred_heatmap, target: TargetMaps, fp: FocalParams):
    """Penalty-reduced pixelwise focal loss, normalized by object count.

    Center pixels (y = 1) contribute (1-z)^alpha log z; all others contribute
    (1-y)^beta z^alpha log(1-z). Predictions are clamped away from {0, 1}.
    """
    y = target.heatmap[None]
    if pred_heatmap.data.shape != y.shape:
        raise ShapeError(f"heatmap shape {pred_heatmap.data.shape} != target "
                         f"{y.shape}")
    z = ad.clip(pred_heatmap, 1e-6, 1.0 - 1e-6)
    pos = (y == 1.0).astype(np.float64)
    neg_w = (1.0 - y) ** fp.beta
    pos_term = ad.mul(ad.mul(ad.pow(1.0 - z, fp.alpha), ad.log(z)), pos)
    neg_term = ad.mul(ad.mul(ad.pow(z, fp.alpha), ad.log(1.0 - z)),
                      (1.0 - pos) * neg_w)
    total = ad.sum(ad.add(pos_term, neg_term))
    return ad.mul(total, -1.0 / max(target.num_objects, 1))


def _gather_centers(maps, target: TargetMaps):
    ys = np.array([c[0][0] for c in target.center_mask], dtype=np.int64)
    xs = np.array([c[0][1] for c in target.center_mask], dtype=np.int64)
    return ad.gather_pixels(maps, ys, xs)


def regression_losses(head: HeadOutput, target: TargetMaps):
    """Mean absolute error at center cells for each regression branch.

    Returns (L_offset, L_size, L_height, L_rotation, L_velocity); all zero
    when the frame has no annotated centers.
    """
    if target.num_objects == 0:
        zero = ad.Tensor(0.0)
        return zero, zero, zero, zero, zero

    def l1(maps, rows):
        return ad.mean(ad.abs(_gather_centers(maps, target) - ad.Tensor(rows)))

    return (l1(head.offset, target.offset),
            l1(head.size, target.size),
            l1(head.height, target.height),
            l1(head.rotation, target.rotation),
            l1(head.velocity, target.velocity))


def total_loss(l_hm, l_offset, l_size, l_height, l_rotation, l_velocity,
               weights: LossWeights):
    """Weighted sum of the six loss components."""
    out = l_hm
    for term, w in ((l_offset, weights.offset), (l_size, weights.size),
                    (l_height, weights.height), (l_rotation, weights.rotation),
                    (l_velocity, weights.velocity)):
        out = ad.add(out, ad.mul(term, w))
    return out
