"""The assembled detector: voxelize -> PFN -> neck -> temporal fusion -> head.

With fusion disabled the temporal block is an identity pass-through of the
current map, which removes exactly the fusion parameters from the model.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .backbone import BackboneConfig, Neck, PillarFeatureNet
from .fmf import FMFConfig, FMFParams, FMFState, fmf_step
from .geometry import MapGeometry
from .heads import DetectionHead
from .layers import Module
from .voxelizer import GridConfig, voxelize


class Detector(Module):
    def __init__(self, grid: GridConfig, backbone: BackboneConfig,
                 fmf_cfg: FMFConfig, num_classes: int, head_channels: int,
                 seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.grid = grid
        self.backbone_cfg = backbone
        self.fmf_cfg = fmf_cfg
        self.num_classes = num_classes
        self.geometry = MapGeometry.from_grid(grid, backbone.s_out)
        self.pfn = self.add_child(
            "pfn", PillarFeatureNet(grid.feature_dim, backbone.pfn_channels, rng))
        self.neck = self.add_child("neck", Neck(backbone, rng))
        self.fmf = None
        if fmf_cfg.enabled:
            self.fmf = self.add_child(
                "fmf", FMFParams(backbone.out_channels, fmf_cfg.kernel_size, rng))
        self.head = self.add_child(
            "head", DetectionHead(backbone.out_channels, head_channels,
                                  num_classes, rng))

    def extract(self, frame, vox_seed=0):
        """Point cloud -> BEV feature map [1, C, h, w]."""
        pillars = voxelize(frame, self.grid, vox_seed)
        return self.neck(self.pfn(pillars))

    def fuse(self, bev, state: FMFState, poses=None):
        """Temporal aggregation step; identity when fusion is disabled."""
        if self.fmf is None:
            return bev, state
        odometry = None
        if self.fmf_cfg.use_odometry and poses is not None:
            odometry = poses
        return fmf_step(bev, state, self.fmf, odometry=odometry,
                        cell_size_out=self.geometry.cell,
                        origin=(self.geometry.x_min, self.geometry.y_min))

    def forward_frame(self, frame, state: FMFState = None, vox_seed=0,
                      prev_pose=None):
        """One sequence step: returns (HeadOutput, new state)."""
        bev = self.extract(frame, vox_seed)
        poses = None
        if prev_pose is not None and frame.ego_pose is not None:
            poses = (prev_pose, frame.ego_pose)
        fused, state = self.fuse(bev, state, poses)
        return self.head(fused), state

    def forward_pair(self, prev_frame, cur_frame, vox_seeds=(0, 0)):
        """Training-style pair forward: features of both frames stay in the
        gradient graph; the head runs on the current frame only."""
        bev_prev = self.extract(prev_frame, vox_seeds[0])
        state = FMFState(prev_map=bev_prev, prev_pose=prev_frame.ego_pose,
                         initialized=True)
        poses = None
        if prev_frame.ego_pose is not None and cur_frame.ego_pose is not None:
            poses = (prev_frame.ego_pose, cur_frame.ego_pose)
        bev_cur = self.extract(cur_frame, vox_seeds[1])
        fused, _ = self.fuse(bev_cur, state, poses)
        return self.head(fused)


def run_inference(model: Detector, sequence, match_cfg):
    """Frame-ordered inference over one sequence; returns per-frame detections."""
    from .decode import decode

    model.eval()
    det_frames = []
    state = None
    prev_pose = None
    with ad.no_grad():
        for frame in sequence.frames:
            out, state = model.forward_frame(frame, state, prev_pose=prev_pose)
            prev_pose = frame.ego_pose
            det_frames.append(decode(out, model.geometry, match_cfg))
    return det_frames
