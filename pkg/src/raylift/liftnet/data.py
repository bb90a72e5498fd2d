"""Turning benchmark records into model inputs and targets.

Each input mode works in its own frame: ``ray-ncs`` in NCS, ``ray-ccs`` and
``pixel`` in CCS.  Targets follow the frame of the input, and
:func:`to_world` maps predictions back to WCS with the per-sample camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry as g
from ..errors import ModeMismatch
from ..skeleton import flip_array
from .model import MODES, ModelInput


def normalize_pixels(xy, width, height):
    """Image coordinates scaled to roughly ``[-1, 1]`` using the image size only."""
    xy = np.asarray(xy, dtype=np.float64)
    half = width / 2.0
    return np.stack([(xy[..., 0] - half) / half, (xy[..., 1] - height / 2.0) / half], axis=-1)


def window_inputs(pixels, intr, extr, mode):
    """Model inputs for pixel windows ``(..., T, J, 2)`` seen by one camera."""
    if mode == "pixel":
        return normalize_pixels(pixels, intr.width, intr.height)
    rays = g.decouple_intrinsics(g.Pose2D(pixels), intr)
    if mode == "ray-ccs":
        return rays.directions
    if mode == "ray-ncs":
        return g.camera_to_normalized(rays, g.build_ncs(extr)).directions
    raise ModeMismatch(f"unknown input mode {mode!r}")


def world_to_frame(xyz, extr, mode):
    if mode == "ray-ncs":
        r, t = g.world_to_normalized_transform(extr, g.build_ncs(extr))
    else:
        r, t = extr.r_w2c, extr.t_w2c
    return np.asarray(xyz) @ r.T + t


def frame_to_world(xyz, extr, mode):
    if mode == "ray-ncs":
        r, t = g.world_to_normalized_transform(extr, g.build_ncs(extr))
    else:
        r, t = extr.r_w2c, extr.t_w2c
    return (np.asarray(xyz) - t) @ r


@dataclass
class LiftData:
    mode: str
    frames: np.ndarray
    theta: np.ndarray
    h: np.ndarray
    rel: np.ndarray
    root: np.ndarray
    gt_wcs: np.ndarray
    camera_ids: np.ndarray
    keys: dict

    def __len__(self):
        return self.frames.shape[0]

    def subset(self, idx):
        return LiftData(
            self.mode,
            self.frames[idx],
            self.theta[idx],
            self.h[idx],
            self.rel[idx],
            self.root[idx],
            self.gt_wcs[idx],
            self.camera_ids[idx],
            {k: v[idx] for k, v in self.keys.items()},
        )

    def model_input(self, idx=None):
        if idx is None:
            return ModelInput(self.frames, self.mode, self.theta, self.h)
        return ModelInput(self.frames[idx], self.mode, self.theta[idx], self.h[idx])


def build_lift_data(records, cameras, mode, root=0, from_pixels=False):
    """Stack records into arrays for ``mode``.

    ``cameras`` maps camera id to :class:`~raylift.synthbench.VirtualCamera`
    (a list is accepted too).  Sweep keys come from camera provenance plus
    the record's bone scale.  With ``from_pixels`` NCS rays are rebuilt from
    the stored pixels through ``cameras`` instead of read from the records,
    which is how perturbed cameras are simulated.  ``theta`` and ``h``
    always come from ``cameras``.
    """
    if mode not in MODES:
        raise ModeMismatch(f"unknown input mode {mode!r}")
    if not isinstance(cameras, dict):
        cameras = {c.id: c for c in cameras}
    if not records:
        raise ValueError("no records")
    ids = np.array([r.camera_id for r in records])
    frames, gt_frame, theta, h = [], [], [], []
    order = []
    for cam_id in dict.fromkeys(ids):
        cam = cameras[cam_id]
        sel = np.flatnonzero(ids == cam_id)
        order.append(sel)
        ncs = g.build_ncs(cam.extrinsics)
        theta.append(np.full(len(sel), ncs.theta))
        h.append(np.full(len(sel), ncs.h))
        if mode == "ray-ncs" and not from_pixels:
            frames.append(np.stack([records[i].rays_ncs for i in sel]))
        else:
            px = np.stack([records[i].pixels for i in sel])
            frames.append(window_inputs(px, cam.intrinsics, cam.extrinsics, mode))
        gt = np.stack([records[i].gt_wcs for i in sel])
        gt_frame.append(world_to_frame(gt, cam.extrinsics, mode))
    order = np.concatenate(order)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    frames = np.concatenate(frames)[inv]
    gt_frame = np.concatenate(gt_frame)[inv]
    theta = np.concatenate(theta)[inv]
    h = np.concatenate(h)[inv]
    rootpos = gt_frame[:, root]
    keys = {}
    for axis in ("focal", "principal", "rotation", "pitch", "translation", "noise_std"):
        vals = [cameras[c].provenance.get(axis) for c in ids]
        if all(v is not None for v in vals):
            keys[axis] = np.array(vals, dtype=np.float64)
    keys["scale"] = np.array([r.scale for r in records])
    return LiftData(
        mode,
        frames,
        theta,
        h,
        gt_frame - rootpos[:, None],
        rootpos,
        np.stack([r.gt_wcs for r in records]),
        ids,
        keys,
    )


def flip_batch(frames, rel, root, joint_set):
    """Mirror inputs and targets about the working frame's ``x = 0`` plane."""
    root = root.copy()
    root[..., 0] = -root[..., 0]
    return flip_array(frames, joint_set), flip_array(rel, joint_set), root


def to_world(points, camera_ids, cameras, mode):
    """Map ``(N, J, 3)`` (or ``(N, 3)``) working-frame points to WCS."""
    if not isinstance(cameras, dict):
        cameras = {c.id: c for c in cameras}
    out = np.empty_like(np.asarray(points, dtype=np.float64))
    for cam_id in dict.fromkeys(camera_ids):
        sel = camera_ids == cam_id
        out[sel] = frame_to_world(points[sel], cameras[cam_id].extrinsics, mode)
    return out
