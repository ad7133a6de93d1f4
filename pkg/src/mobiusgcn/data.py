"""Synthetic articulated poses seen through a pinhole camera, and the JSON-lines sample format.

Each pose is built by forward kinematics from a rest (T-)pose with rigid bones,
random joint rotations and a random placement in camera space (x right, y down,
z forward, millimetres). The 2D joints are the exact pinhole projection unless
pixel noise is requested.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import SkeletonTopology


class DatasetError(ValueError):
    pass


# Rest-pose offset of every joint from its parent, camera axes, millimetres.
REST_OFFSETS = {
    "Pelvis": (0.0, 0.0, 0.0),
    "RHip": (-130.0, 0.0, 0.0),
    "RKnee": (0.0, 450.0, 0.0),
    "RFoot": (0.0, 440.0, 0.0),
    "LHip": (130.0, 0.0, 0.0),
    "LKnee": (0.0, 450.0, 0.0),
    "LFoot": (0.0, 440.0, 0.0),
    "Spine": (0.0, -230.0, 0.0),
    "Thorax": (0.0, -250.0, 0.0),
    "Head": (0.0, -200.0, 0.0),
    "LShoulder": (150.0, -10.0, 0.0),
    "LElbow": (280.0, 0.0, 0.0),
    "LWrist": (250.0, 0.0, 0.0),
    "RShoulder": (-150.0, -10.0, 0.0),
    "RElbow": (-280.0, 0.0, 0.0),
    "RWrist": (-250.0, 0.0, 0.0),
}
SPINE_JOINTS = frozenset({"Pelvis", "Spine", "Thorax"})


@dataclass
class PoseSample:
    joints2d: np.ndarray  # (N, 2) pixels
    joints3d: np.ndarray  # (N, 3) camera space, mm
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.joints2d = np.asarray(self.joints2d, dtype=np.float64)
        self.joints3d = np.asarray(self.joints3d, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, PoseSample):
            return NotImplemented
        return (
            np.array_equal(self.joints2d, other.joints2d)
            and np.array_equal(self.joints3d, other.joints3d)
            and self.meta == other.meta
        )


@dataclass(frozen=True)
class CameraModel:
    focal: float = 1150.0
    principal: tuple[float, float] = (500.0, 500.0)
    distance_range: tuple[float, float] = (4500.0, 5500.0)
    lateral_range: float = 400.0
    min_depth: float = 100.0

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        lo, hi = self.distance_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad distance range {self.distance_range}")

    def project(self, joints3d) -> np.ndarray:
        p = np.asarray(joints3d, dtype=np.float64)
        cx, cy = self.principal
        return np.stack(
            [self.focal * p[..., 0] / p[..., 2] + cx, self.focal * p[..., 1] / p[..., 2] + cy],
            axis=-1,
        )


@dataclass(frozen=True)
class PoseRanges:
    limb_deg: float = 45.0
    spine_deg: float = 20.0
    yaw_deg: float = 180.0


def rest_offsets(topo: SkeletonTopology) -> np.ndarray:
    try:
        return np.array([REST_OFFSETS[name] for name in topo.joint_names])
    except KeyError as exc:
        raise ValueError(f"no rest offset for joint {exc.args[0]!r}") from None


def canonical_bone_lengths(topo: SkeletonTopology) -> np.ndarray:
    """Per-edge bone lengths of the generator's rest skeleton, in topology edge order."""
    offsets = rest_offsets(topo)
    parent = topo.parents()
    out = []
    for i, j in topo.edges:
        child = j if parent[j] == i else i
        out.append(np.linalg.norm(offsets[child]))
    return np.array(out)


def _pose(topo, offsets, parent, order, rng, ranges: PoseRanges, camera: CameraModel):
    n = topo.num_joints
    rot = [None] * n
    pos = np.zeros((n, 3))
    for j in order:
        name = topo.joint_names[j]
        lim = ranges.spine_deg if name in SPINE_JOINTS else ranges.limb_deg
        local = Rotation.from_euler("xyz", rng.uniform(-lim, lim, size=3), degrees=True)
        if parent[j] < 0:
            yaw = Rotation.from_euler("y", rng.uniform(-ranges.yaw_deg, ranges.yaw_deg), degrees=True)
            rot[j] = (yaw * local).as_matrix()
            pos[j] = 0.0
        else:
            p = parent[j]
            pos[j] = pos[p] + rot[p] @ offsets[j]
            rot[j] = rot[p] @ local.as_matrix()
    root = np.array([
        rng.uniform(-camera.lateral_range, camera.lateral_range),
        rng.uniform(-camera.lateral_range, camera.lateral_range),
        rng.uniform(*camera.distance_range),
    ])
    return pos + root


def generate_synthetic(
    count: int,
    topo: SkeletonTopology,
    camera: CameraModel | None = None,
    seed: int = 0,
    noise_px: float = 0.0,
    ranges: PoseRanges | None = None,
    start: int = 0,
) -> list[PoseSample]:
    """Samples ``start .. start+count-1``; sample i depends only on (seed, i)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    camera = camera or CameraModel()
    ranges = ranges or PoseRanges()
    offsets = rest_offsets(topo)
    parent = topo.parents()
    order = topo.kinematic_order()
    samples = []
    for i in range(start, start + count):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        while True:
            joints3d = _pose(topo, offsets, parent, order, rng, ranges, camera)
            if np.all(joints3d[:, 2] > camera.min_depth):
                break
        joints2d = camera.project(joints3d)
        if noise_px > 0:
            joints2d = joints2d + rng.normal(0.0, noise_px, size=joints2d.shape)
        samples.append(PoseSample(joints2d, joints3d, {"subject": "synthetic", "frame": str(i)}))
    return samples


def _sample_to_json(s: PoseSample) -> str:
    record = {
        "joints2d": s.joints2d.tolist(),
        "joints3d": s.joints3d.tolist(),
        "meta": s.meta,
    }
    return json.dumps(record, allow_nan=False, separators=(",", ":"))


def write_dataset(samples, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(_sample_to_json(s))
            fh.write("\n")


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def _array(value, cols: int, key: str, lineno: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetError(f"line {lineno}: {key} is not a numeric array") from None
    if arr.ndim != 2 or arr.shape[1] != cols:
        raise DatasetError(f"line {lineno}: {key} must have shape (N, {cols}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"line {lineno}: {key} contains non-finite values")
    return arr


def read_dataset(path, topo: SkeletonTopology | None = None) -> list[PoseSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line, parse_constant=_reject_constant)
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: malformed record ({exc})") from None
            if not isinstance(rec, dict) or "joints2d" not in rec or "joints3d" not in rec:
                raise DatasetError(f"line {lineno}: record needs joints2d and joints3d")
            j2 = _array(rec["joints2d"], 2, "joints2d", lineno)
            j3 = _array(rec["joints3d"], 3, "joints3d", lineno)
            if len(j2) != len(j3):
                raise DatasetError(f"line {lineno}: joints2d has {len(j2)} joints, joints3d {len(j3)}")
            if topo is not None and len(j2) != topo.num_joints:
                raise DatasetError(
                    f"line {lineno}: {len(j2)} joints but the topology has {topo.num_joints}"
                )
            meta = rec.get("meta", {})
            if not isinstance(meta, dict):
                raise DatasetError(f"line {lineno}: meta must be an object")
            samples.append(PoseSample(j2, j3, meta))
    return samples


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, 0, 2)), np.zeros((0, 0, 3))
    return np.stack([s.joints2d for s in samples]), np.stack([s.joints3d for s in samples])


def bone_lengths(joints3d, topo: SkeletonTopology) -> np.ndarray:
    """Edge lengths for (..., N, 3) poses, shape (..., E)."""
    p = np.asarray(joints3d, dtype=np.float64)
    i, j = np.array(topo.edges).T
    return np.linalg.norm(p[..., i, :] - p[..., j, :], axis=-1)


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, last ``val_fraction`` of it (rounded) held out; empty hold-out allowed."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(n * val_fraction + 0.5)) if val_fraction > 0 else 0
    n_val = min(n_val, n - 1) if n > 1 else 0
    return np.sort(perm[: n - n_val]), np.sort(perm[n - n_val:])
