"""Detection scoring: center-distance AP, true-positive errors, and the
composite detection score, plus detection-file serialization.

Matching follows the center-distance convention: per class, detections in
descending score order greedily claim the nearest unmatched ground-truth box
of the same frame within the threshold. AP is the mean of interpolated
precision over 101 recall points spanning [0.1, 1], clamped to [0, 1].
True-positive errors are computed at the 2 m threshold; classes with ground
truth but no matches score the worst-case 1.0.
"""
from __future__ import annotations

import dataclasses
import json
import math
import pathlib

import numpy as np

from .decode import Detection, MatchConfig
from .errors import ConfigError, DataError
from .geometry import wrap_angle
from .scene import Box3D

TP_ERROR_NAMES = ("ate", "ase", "aoe", "ave")
_TP_THRESHOLD = 2.0
_RECALL_GRID = np.linspace(0.1, 1.0, 101)


def bev_distance(a: Box3D, b: Box3D) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def aligned_size_iou(a: Box3D, b: Box3D) -> float:
    """3D IoU of the two boxes after aligning centers and headings."""
    inter = min(a.w, b.w) * min(a.l, b.l) * min(a.h, b.h)
    union = a.w * a.l * a.h + b.w * b.l * b.h - inter
    return inter / union


def _tp_errors(det: Box3D, gt: Box3D) -> dict:
    return {
        "ate": bev_distance(det, gt),
        "ase": 1.0 - aligned_size_iou(det, gt),
        "aoe": abs(wrap_angle(det.yaw - gt.yaw)),
        "ave": math.hypot(det.vx - gt.vx, det.vy - gt.vy),
    }


def match_and_ap(dets, gts, threshold):
    """Greedy center-distance matching and AP, per class.

    `dets` is a list of (frame_index, Detection), `gts` of (frame_index,
    Box3D). Returns (ap, errors): dicts keyed by class_id covering every
    class present in the ground truth. `errors` holds the mean ate/ase/aoe/
    ave over matched pairs, or 1.0 each when the class has no matches.
    """
    gt_by_class = {}
    for fi, g in gts:
        gt_by_class.setdefault(g.class_id, []).append((fi, g))
    ap = {}
    errors = {}
    for cid, class_gts in sorted(gt_by_class.items()):
        class_dets = sorted((d for d in dets if d[1].class_id == cid),
                            key=lambda fd: (-fd[1].score, fd[1].class_id,
                                            fd[1].box.cx, fd[1].box.cy))
        matched = [False] * len(class_gts)
        tp_flags = []
        pair_errors = []
        for fi, det in class_dets:
            best = -1
            best_dist = float("inf")
            for gi, (gfi, gt) in enumerate(class_gts):
                if matched[gi] or gfi != fi:
                    continue
                dist = bev_distance(det.box, gt)
                if dist < best_dist:
                    best = gi
                    best_dist = dist
            if best >= 0 and best_dist <= threshold:
                matched[best] = True
                tp_flags.append(True)
                pair_errors.append(_tp_errors(det.box, class_gts[best][1]))
            else:
                tp_flags.append(False)
        ap[cid] = _ap_from_flags(tp_flags, len(class_gts))
        if pair_errors:
            errors[cid] = {k: float(np.mean([e[k] for e in pair_errors]))
                           for k in TP_ERROR_NAMES}
        else:
            errors[cid] = {k: 1.0 for k in TP_ERROR_NAMES}
    return ap, errors


def _ap_from_flags(tp_flags, num_gt):
    if num_gt == 0 or not tp_flags:
        return 0.0
    tps = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    n = np.arange(1, len(tp_flags) + 1)
    recall = tps / num_gt
    precision = tps / n
    interp = np.interp(_RECALL_GRID, recall, precision, right=0.0)
    return float(np.clip(interp.mean(), 0.0, 1.0))


def nds(mAP, mATE, mASE, mAOE, mAVE, mAAE):
    """Composite score: (1/10) [5 mAP + sum(1 - min(1, err))] over 5 errors."""
    score = 5.0 * mAP
    for err in (mATE, mASE, mAOE, mAVE, mAAE):
        score += 1.0 - min(1.0, err)
    return score / 10.0


@dataclasses.dataclass
class EvalResult:
    mAP: float
    mATE: float
    mASE: float
    mAOE: float
    mAVE: float
    mAAE: float
    nds: float
    per_class_ap: dict  # class name -> {threshold: AP}

    def to_dict(self):
        return {"mAP": self.mAP, "mATE": self.mATE, "mASE": self.mASE,
                "mAOE": self.mAOE, "mAVE": self.mAVE, "mAAE": self.mAAE,
                "NDS": self.nds,
                "per_class_ap": {c: {str(t): v for t, v in row.items()}
                                 for c, row in self.per_class_ap.items()}}

    def to_table(self):
        lines = ["metric  value",
                 "------  -----"]
        for name, v in (("mAP", self.mAP), ("mATE", self.mATE),
                        ("mASE", self.mASE), ("mAOE", self.mAOE),
                        ("mAVE", self.mAVE), ("mAAE", self.mAAE),
                        ("NDS", self.nds)):
            lines.append(f"{name:<6}  {v:.4f}")
        lines.append("")
        lines.append("class AP by distance threshold (m):")
        for cname, row in self.per_class_ap.items():
            cells = "  ".join(f"{t:g}:{v:.4f}" for t, v in sorted(row.items()))
            lines.append(f"  {cname:<12} {cells}")
        return "\n".join(lines)


def evaluate(det_frames, gt_frames, class_names, cfg: MatchConfig) -> EvalResult:
    """Score per-frame detection lists against per-frame ground truth.

    mAP averages AP over every (class with ground truth) x (distance
    threshold); the attribute error has no labels here and is fixed to 0.
    """
    if len(det_frames) != len(gt_frames):
        raise ConfigError(f"detection frames ({len(det_frames)}) != ground "
                          f"truth frames ({len(gt_frames)})")
    k = len(class_names)
    dets = [(i, d) for i, frame in enumerate(det_frames) for d in frame]
    gts = [(i, g) for i, frame in enumerate(gt_frames) for g in frame]
    for _, d in dets:
        if not (0 <= d.class_id < k):
            raise ConfigError(f"detection class_id {d.class_id} outside [0, {k})")
    for _, g in gts:
        if not (0 <= g.class_id < k):
            raise ConfigError(f"gt class_id {g.class_id} outside [0, {k})")

    classes_with_gt = sorted({g.class_id for _, g in gts})
    per_class_ap = {class_names[c]: {} for c in classes_with_gt}
    ap_values = []
    for thr in cfg.distance_thresholds:
        ap, _ = match_and_ap(dets, gts, thr)
        for c in classes_with_gt:
            per_class_ap[class_names[c]][float(thr)] = ap[c]
            ap_values.append(ap[c])
    mAP = float(np.mean(ap_values)) if ap_values else 0.0

    _, errors = match_and_ap(dets, gts, _TP_THRESHOLD)
    if classes_with_gt:
        means = {name: float(np.mean([errors[c][name] for c in classes_with_gt]))
                 for name in TP_ERROR_NAMES}
    else:
        means = {name: 1.0 for name in TP_ERROR_NAMES}
    mAAE = 0.0
    result = EvalResult(mAP=mAP, mATE=means["ate"], mASE=means["ase"],
                        mAOE=means["aoe"], mAVE=means["ave"], mAAE=mAAE,
                        nds=nds(mAP, means["ate"], means["ase"], means["aoe"],
                                means["ave"], mAAE),
                        per_class_ap=per_class_ap)
    return result


# -- detection file serialization -------------------------------------------

def write_detections(det_frames, class_names, path):
    """Write per-frame detections as line-delimited JSON records."""
    lines = []
    for i, frame in enumerate(det_frames):
        for d in frame:
            b = d.box
            lines.append(json.dumps({
                "frame": i,
                "class": class_names[d.class_id],
                "score": d.score,
                "center": [b.cx, b.cy, b.cz],
                "size": [b.w, b.l, b.h],
                "yaw": b.yaw,
                "velocity": [b.vx, b.vy],
            }))
    pathlib.Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                                  encoding="utf-8")


def read_detections(path, class_names, num_frames):
    """Read a detections file back into per-frame lists."""
    text = pathlib.Path(path).read_text(encoding="utf-8")
    name_to_id = {name: i for i, name in enumerate(class_names)}
    frames = [[] for _ in range(num_frames)]
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{ln}: invalid JSON record: {e}") from e
        try:
            fi = int(rec["frame"])
            cid = name_to_id[rec["class"]]
            cx, cy, cz = rec["center"]
            w, l, h = rec["size"]
            vx, vy = rec["velocity"]
            det = Detection(Box3D(cx, cy, cz, w, l, h, float(rec["yaw"]),
                                  vx, vy, cid),
                            float(rec["score"]), cid)
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"{path}:{ln}: malformed detection record: {e}") from e
        if not 0 <= fi < num_frames:
            raise DataError(f"{path}:{ln}: frame index {fi} outside sequence")
        frames[fi].append(det)
    return frames
