"""Pose error metrics, reported in millimetres.

Poses are stored in metres; every metric multiplies by 1000 exactly once at
the end.  Inputs are :class:`~raylift.geometry.Pose3D` objects or plain
``(..., J, 3)`` arrays, so a whole evaluation set can be scored in one call.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FrameMismatch, JointSetMismatch, UnknownAxis
from .geometry import Frame, Pose3D

SWEEP_AXES = ("focal", "principal", "rotation", "pitch", "translation", "scale", "noise_std")
METRICS = ("mpjpe", "abs_mpjpe", "mrpe")


def _unpack(pred, gt, frame=None):
    root = 0
    if isinstance(pred, Pose3D) or isinstance(gt, Pose3D):
        if not (isinstance(pred, Pose3D) and isinstance(gt, Pose3D)):
            raise TypeError("pass two Pose3D objects or two arrays")
        if pred.frame is not gt.frame:
            raise FrameMismatch(gt.frame.value, pred.frame.value)
        if frame is not None and gt.frame is not Frame(frame):
            raise FrameMismatch(Frame(frame).value, gt.frame.value)
        if pred.root != gt.root:
            raise JointSetMismatch("poses disagree on the root joint")
        root = gt.root
        pred, gt = pred.xyz, gt.xyz
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape[-2:-1] != gt.shape[-2:-1]:
        raise JointSetMismatch(f"{pred.shape[-2]} predicted joints vs {gt.shape[-2]} ground-truth joints")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return pred, gt, root


def mpjpe_per_sample(pred, gt):
    pred, gt, root = _unpack(pred, gt)
    rel_p = pred - pred[..., root : root + 1, :]
    rel_g = gt - gt[..., root : root + 1, :]
    return np.linalg.norm(rel_p - rel_g, axis=-1).mean(axis=-1) * 1000.0


def abs_mpjpe_per_sample(pred, gt):
    pred, gt, _ = _unpack(pred, gt, Frame.WCS)
    return np.linalg.norm(pred - gt, axis=-1).mean(axis=-1) * 1000.0


def mrpe_per_sample(pred_root, gt_root):
    pred_root = np.asarray(pred_root, dtype=np.float64)
    gt_root = np.asarray(gt_root, dtype=np.float64)
    if pred_root.shape != gt_root.shape or pred_root.shape[-1] != 3:
        raise ValueError(f"root shapes {pred_root.shape} and {gt_root.shape} must match and end in 3")
    return np.linalg.norm(pred_root - gt_root, axis=-1) * 1000.0


def mpjpe(pred, gt):
    """Root-relative mean per-joint position error (mm)."""
    return float(np.mean(mpjpe_per_sample(pred, gt)))


def abs_mpjpe(pred, gt):
    """Mean per-joint position error without root alignment (mm)."""
    return float(np.mean(abs_mpjpe_per_sample(pred, gt)))


def mrpe(pred_root, gt_root):
    """Mean root position error (mm)."""
    return float(np.mean(mrpe_per_sample(pred_root, gt_root)))


@dataclass
class EvalReport:
    """Per-sample metric values plus the grouping keys of each sample."""

    per_sample: dict
    keys: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        self.per_sample = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in self.per_sample.items()}
        self.keys = {k: np.asarray(v).ravel() for k, v in self.keys.items()}
        sizes = {len(v) for v in self.per_sample.values()} | {len(v) for v in self.keys.values()}
        if len(sizes) > 1:
            raise ValueError(f"inconsistent sample counts {sorted(sizes)}")

    @property
    def n(self):
        return len(next(iter(self.per_sample.values()))) if self.per_sample else 0

    @property
    def aggregate(self):
        return {k: float(np.mean(v)) for k, v in self.per_sample.items()}

    @classmethod
    def from_predictions(cls, pred_wcs, gt_wcs, root=0, keys=None, label=""):
        """Score absolute WCS predictions against WCS ground truth."""
        pred_wcs = np.asarray(pred_wcs, dtype=np.float64)
        gt_wcs = np.asarray(gt_wcs, dtype=np.float64)
        p = Pose3D(pred_wcs, Frame.WCS, root)
        t = Pose3D(gt_wcs, Frame.WCS, root)
        per = {
            "mpjpe": mpjpe_per_sample(p, t),
            "abs_mpjpe": abs_mpjpe_per_sample(p, t),
            "mrpe": mrpe_per_sample(pred_wcs[..., root, :], gt_wcs[..., root, :]),
        }
        return cls(per, keys or {}, label)

    def to_dict(self):
        return {
            "label": self.label,
            "n": self.n,
            "aggregate_mm": self.aggregate,
            "per_sample_mm": {k: v.tolist() for k, v in self.per_sample.items()},
            "keys": {k: v.tolist() for k, v in self.keys.items()},
        }


def sweep_aggregate(reports, axis):
    """Rows ``(axis_value, metric, mean_mm, n)`` with one bucket per distinct
    axis value; samples from all reports are pooled."""
    if axis not in SWEEP_AXES:
        raise UnknownAxis(axis)
    if isinstance(reports, EvalReport):
        reports = [reports]
    values, metrics = [], {}
    for rep in reports:
        if axis not in rep.keys:
            raise UnknownAxis(f"{axis} (not recorded in report {rep.label!r})")
        values.append(rep.keys[axis])
        for m, v in rep.per_sample.items():
            metrics.setdefault(m, []).append(v)
    values = np.concatenate(values)
    rows = []
    for bucket in np.unique(values):
        mask = values == bucket
        for m in sorted(metrics):
            v = np.concatenate(metrics[m])[mask]
            rows.append({"axis_value": float(bucket), "metric": m, "mean_mm": float(v.mean()), "n": int(mask.sum())})
    return rows


def write_rows_csv(rows, path, extra=None):
    """CSV with columns ``axis_value, metric, mean_mm, n`` (plus ``extra`` constants)."""
    extra = extra or {}
    fields = ["axis_value", "metric", "mean_mm", "n", *extra]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({**r, **extra})


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
