"""End-to-end inference and the fixed-root-height baseline."""

from __future__ import annotations

import numpy as np

from .. import geometry as g
from ..errors import RayParallel
from .data import frame_to_world, to_world, window_inputs
from .train import predict_frame

RFRH_HEIGHT = 0.9395
PARALLEL_TOL = 1e-9


def predict_absolute(model, raw2d_window, intr, extr, flip_tta=True):
    """WCS pose for pixel windows ``(T, J, 2)`` or ``(N, T, J, 2)``.

    The pixels are decoupled, normalised as the model's input mode requires,
    lifted to a root-relative pose plus root, and mapped back to WCS.
    """
    px = np.asarray(raw2d_window, dtype=np.float64)
    single = px.ndim == 3
    if single:
        px = px[None]
    frames = window_inputs(px, intr, extr, model.input_mode)
    ncs = g.build_ncs(extr)
    n = len(frames)
    rel, root = predict_frame(model, frames, np.full(n, ncs.theta), np.full(n, ncs.h), flip_tta=flip_tta)
    world = frame_to_world(rel + root[:, None], extr, model.input_mode)
    return g.Pose3D(world[0] if single else world, g.Frame.WCS, model.joint_set.root)


def predict_dataset(model, data, cameras, flip_tta=True, batch_size=1024):
    """WCS predictions ``(N, J, 3)`` for a :class:`LiftData`."""
    rel, root = predict_frame(model, data.frames, data.theta, data.h, batch_size, flip_tta)
    return to_world(rel + root[:, None], data.camera_ids, cameras, data.mode)


def rfrh_localize(ray_root, assumed_height=RFRH_HEIGHT, joint=None):
    """Root location in NCS from its ray and an assumed height above ground.

    ``ray_root`` is an NCS :class:`~raylift.geometry.RayPose`; with ``joint``
    given its directions are ``(..., J, 3)`` and that joint is used,
    otherwise the last axis holds one direction per ray.  The ray starts at
    the NCS camera centre ``(0, -h, 0)`` and meets the plane
    ``Y_N = -assumed_height``.
    """
    if g.Frame(ray_root.frame) is not g.Frame.NCS:
        raise g.FrameMismatch("NCS", g.Frame(ray_root.frame).value)
    d = ray_root.directions if joint is None else ray_root.directions[..., joint, :]
    dy = d[..., 1]
    if np.any(np.abs(dy) <= PARALLEL_TOL):
        raise RayParallel("root ray is parallel to the fixed-height plane")
    o = ray_root.origin
    t = (-assumed_height - o[1]) / dy
    return o + t[..., None] * d


def rfrh_dataset(records, cameras, assumed_height=RFRH_HEIGHT, root=0):
    """RFRH root predictions in WCS ``(N, 3)`` for benchmark records."""
    if not isinstance(cameras, dict):
        cameras = {c.id: c for c in cameras}
    out = np.empty((len(records), 3))
    for i, r in enumerate(records):
        cam = cameras[r.camera_id]
        ncs = g.build_ncs(cam.extrinsics)
        centre = r.rays_ncs[r.window // 2]
        ray = g.RayPose(centre, g.Frame.NCS, ncs.t_c2n)
        p = rfrh_localize(ray, assumed_height, joint=root)
        out[i] = g.unnormalize(g.Pose3D(p[None], g.Frame.NCS), cam.extrinsics, ncs).xyz[0]
    return out
