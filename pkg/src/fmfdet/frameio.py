"""Binary frame files and sequence directories.

Frame layout (little-endian):
    magic   8 bytes  "FMFPC1\\0\\0"
    u32     version (= 1)
    f64     timestamp
    u8      has_pose; if 1: f64 tx, f64 ty, f64 yaw
    u32     num_points; then num_points * (4 x f32): x, y, z, intensity
    u32     num_boxes;  then num_boxes  * (9 x f32 + u32 class_id)
            box fields: cx, cy, cz, w, l, h, yaw, vx, vy

Point and box payloads are single precision, so only f32-representable values
round-trip bit-exactly; timestamps and poses are double precision and always
do. A sequence is a directory of frame_%06d.bin files plus manifest.json
holding the class names and frame order.
"""
from __future__ import annotations

import json
import pathlib
import struct

import numpy as np

from .errors import DataError, FormatError
from .geometry import Pose2D
from .scene import Box3D, PointCloudFrame, SceneSequence

MAGIC = b"FMFPC1\x00\x00"
VERSION = 1
MANIFEST_NAME = "manifest.json"

_POINT_DTYPE = np.dtype("<f4")
_BOX_DTYPE = np.dtype([("fields", "<f4", (9,)), ("class_id", "<u4")])


def write_frame(frame: PointCloudFrame, path) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<d", frame.timestamp)
    if frame.ego_pose is not None:
        p = frame.ego_pose
        buf += struct.pack("<B", 1)
        buf += struct.pack("<3d", p.x, p.y, p.yaw)
    else:
        buf += struct.pack("<B", 0)
    pts = np.ascontiguousarray(frame.points, dtype=_POINT_DTYPE)
    buf += struct.pack("<I", pts.shape[0])
    buf += pts.tobytes()
    boxes = frame.gt_boxes
    buf += struct.pack("<I", len(boxes))
    if boxes:
        rec = np.empty(len(boxes), dtype=_BOX_DTYPE)
        for i, b in enumerate(boxes):
            rec[i] = (b.as_array().astype(np.float32), b.class_id)
        buf += rec.tobytes()
    pathlib.Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.data):
            raise DataError(f"{self.path}: truncated (needed {n} bytes at "
                            f"offset {self.off}, have {len(self.data)})")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_frame(path) -> PointCloudFrame:
    data = pathlib.Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(8) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a frame file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (timestamp,) = r.unpack("<d")
    (has_pose,) = r.unpack("<B")
    pose = None
    if has_pose == 1:
        tx, ty, yaw = r.unpack("<3d")
        pose = Pose2D(tx, ty, yaw)
    elif has_pose != 0:
        raise FormatError(f"{path}: invalid pose flag {has_pose}")
    (num_points,) = r.unpack("<I")
    pts = np.frombuffer(r.take(num_points * 16), dtype=_POINT_DTYPE)
    points = pts.reshape(num_points, 4).astype(np.float64)
    (num_boxes,) = r.unpack("<I")
    rec = np.frombuffer(r.take(num_boxes * _BOX_DTYPE.itemsize), dtype=_BOX_DTYPE)
    boxes = [Box3D.from_array(rec["fields"][i].astype(np.float64), rec["class_id"][i])
             for i in range(num_boxes)]
    if r.off != len(data):
        raise FormatError(f"{path}: {len(data) - r.off} trailing bytes")
    return PointCloudFrame(points, timestamp, pose, boxes)


def frame_file_name(index: int) -> str:
    return f"frame_{index:06d}.bin"


def write_sequence(seq: SceneSequence, out_dir) -> None:
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(seq.frames):
        name = frame_file_name(i)
        write_frame(frame, out / name)
        names.append(name)
    manifest = {"format": "fmf-scene", "version": VERSION,
                "class_names": list(seq.class_names), "frames": names}
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n",
                                     encoding="utf-8")


def read_sequence(data_dir) -> SceneSequence:
    root = pathlib.Path(data_dir)
    mpath = root / MANIFEST_NAME
    if not root.is_dir() or not mpath.is_file():
        raise DataError(f"{data_dir}: not a sequence directory (missing {MANIFEST_NAME})")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{mpath}: invalid JSON manifest: {e}") from e
    for key in ("class_names", "frames"):
        if key not in manifest:
            raise FormatError(f"{mpath}: manifest missing '{key}'")
    frames = []
    for name in manifest["frames"]:
        fpath = root / name
        if not fpath.is_file():
            raise DataError(f"{data_dir}: manifest lists missing frame {name}")
        frames.append(read_frame(fpath))
    return SceneSequence(frames, manifest["class_names"])
