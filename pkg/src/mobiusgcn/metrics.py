"""MPJPE (Protocol #1) and 3D PCK at 150 mm, both after root-joint alignment."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

PCK_RADIUS_MM = 150.0


def _aligned_errors(pred, target, root_index: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.shape[-1] != 3:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    pred = pred - pred[..., root_index:root_index + 1, :]
    target = target - target[..., root_index:root_index + 1, :]
    d = pred - target
    # fixed summation order so scalar re-implementations agree bit for bit
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def per_joint_mpjpe(pred, target, root_index: int = 0) -> np.ndarray:
    err = _aligned_errors(pred, target, root_index)
    return err.reshape(-1, err.shape[-1]).mean(axis=0)


def mpjpe(pred, target, root_index: int = 0) -> float:
    """Mean per-joint Euclidean error in mm, averaged over joints then samples."""
    err = _aligned_errors(pred, target, root_index)
    rows = err.reshape(-1, err.shape[-1])
    # exactly rounded sums: the result does not depend on summation order
    return math.fsum(math.fsum(r) / len(r) for r in rows) / len(rows)


def pck_150(pred, target, root_index: int = 0, radius: float = PCK_RADIUS_MM) -> float:
    """Percentage of joints with error strictly below ``radius`` mm."""
    err = _aligned_errors(pred, target, root_index)
    return 100.0 * int(np.count_nonzero(err < radius)) / err.size


@dataclass
class EvalReport:
    mpjpe_mm: float
    pck_percent: float
    per_joint_mpjpe: np.ndarray
    count: int

    def text(self, joint_names=None, per_joint: bool = False) -> str:
        lines = [
            f"samples      {self.count}",
            f"MPJPE (mm)   {self.mpjpe_mm:.4f}",
            f"PCK@150 (%)  {self.pck_percent:.4f}",
        ]
        if per_joint:
            names = joint_names or [f"joint{k}" for k in range(len(self.per_joint_mpjpe))]
            lines.append("per-joint MPJPE (mm):")
            lines += [f"  {n:<12s} {e:.4f}" for n, e in zip(names, self.per_joint_mpjpe)]
        return "\n".join(lines) + "\n"

    def csv(self, joint_names=None, per_joint: bool = False) -> str:
        header = ["samples", "mpjpe_mm", "pck150_percent"]
        row = [str(self.count), f"{self.mpjpe_mm:.17g}", f"{self.pck_percent:.17g}"]
        if per_joint:
            names = joint_names or [f"joint{k}" for k in range(len(self.per_joint_mpjpe))]
            header += [f"mpjpe_{n}" for n in names]
            row += [f"{e:.17g}" for e in self.per_joint_mpjpe]
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        buf.write(",".join(row) + "\n")
        return buf.getvalue()


def evaluate(pred, target, root_index: int = 0) -> EvalReport:
    pred = np.asarray(pred, dtype=np.float64)
    count = 1 if pred.ndim == 2 else int(np.prod(pred.shape[:-2]))
    return EvalReport(
        mpjpe(pred, target, root_index),
        pck_150(pred, target, root_index),
        per_joint_mpjpe(pred, target, root_index),
        count,
    )
