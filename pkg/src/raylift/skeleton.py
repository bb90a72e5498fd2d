"""Joint sets, motion sequences, a procedural walker and pose augmentations.

The 17-joint set follows the Human3.6M ordering::

     0 hip (root)   1 r_hip   2 r_knee   3 r_foot   4 l_hip   5 l_knee
     6 l_foot       7 spine   8 thorax   9 neck    10 head   11 l_shoulder
    12 l_elbow     13 l_wrist 14 r_shoulder 15 r_elbow 16 r_wrist

The 14-joint set drops spine, thorax and neck (indices 7, 8, 9); head and
both shoulders are then parented to the root.  The walker keeps the whole
upper body rigid, so those pseudo-bones have constant length too.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import JointSetMismatch, UnknownJointSet
from .geometry import Pose2D, Pose3D, RayPose

GROUP_NAMES = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")


@dataclass(frozen=True)
class JointSet:
    name: str
    names: tuple
    parents: tuple
    root: int
    mirror_pairs: tuple
    groups: tuple

    def __post_init__(self):
        j = len(self.names)
        if len(self.parents) != j:
            raise ValueError("one parent per joint required")
        if self.parents[self.root] != -1:
            raise ValueError("root must have no parent")
        for i in range(j):
            seen, k = set(), i
            while k != self.root:
                if k in seen or not 0 <= self.parents[k] < j:
                    raise ValueError(f"joint {i} is not connected to the root")
                seen.add(k)
                k = self.parents[k]
        flat = [i for pair in self.mirror_pairs for i in pair]
        if len(set(flat)) != len(flat) or any(a == b for a, b in self.mirror_pairs):
            raise ValueError("mirror pairs must be disjoint")
        cover = sorted(i for grp in self.groups for i in grp)
        if cover != list(range(j)) or len(self.groups) != len(GROUP_NAMES):
            raise ValueError("groups must partition the joints into 5 groups")

    @property
    def num_joints(self):
        return len(self.names)

    @property
    def mirror_permutation(self):
        perm = np.arange(self.num_joints)
        for a, b in self.mirror_pairs:
            perm[a], perm[b] = b, a
        return perm

    @property
    def bones(self):
        return [(self.parents[i], i) for i in range(self.num_joints) if i != self.root]

    def topological_order(self):
        order, placed = [self.root], {self.root}
        while len(order) < self.num_joints:
            for i in range(self.num_joints):
                if i not in placed and self.parents[i] in placed:
                    order.append(i)
                    placed.add(i)
        return order

    def to_dict(self):
        return {
            "name": self.name,
            "names": list(self.names),
            "parents": list(self.parents),
            "root": self.root,
            "mirror_pairs": [list(p) for p in self.mirror_pairs],
            "groups": [list(g) for g in self.groups],
        }


H36M_17 = JointSet(
    name="h36m17",
    names=(
        "hip", "r_hip", "r_knee", "r_foot", "l_hip", "l_knee", "l_foot", "spine", "thorax",
        "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
    ),
    parents=(-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15),
    root=0,
    mirror_pairs=((1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16)),
    groups=((0, 7, 8, 9, 10), (11, 12, 13), (14, 15, 16), (4, 5, 6), (1, 2, 3)),
)

# 17 -> 14: drop spine, thorax and neck.
REDUCE_17_TO_14 = (0, 1, 2, 3, 4, 5, 6, 10, 11, 12, 13, 14, 15, 16)

H36M_14 = JointSet(
    name="h36m14",
    names=tuple(H36M_17.names[i] for i in REDUCE_17_TO_14),
    parents=(-1, 0, 1, 2, 0, 4, 5, 0, 0, 8, 9, 0, 11, 12),
    root=0,
    mirror_pairs=((1, 4), (2, 5), (3, 6), (8, 11), (9, 12), (10, 13)),
    groups=((0, 7), (8, 9, 10), (11, 12, 13), (4, 5, 6), (1, 2, 3)),
)

JOINT_SETS = {js.name: js for js in (H36M_17, H36M_14)}


def get_joint_set(name_or_set):
    if isinstance(name_or_set, JointSet):
        return name_or_set
    try:
        return JOINT_SETS[name_or_set]
    except KeyError:
        raise UnknownJointSet(f"unknown joint set {name_or_set!r}; known: {sorted(JOINT_SETS)}") from None


def joint_set_for(num_joints):
    for js in JOINT_SETS.values():
        if js.num_joints == num_joints:
            return js
    raise UnknownJointSet(f"no joint set with {num_joints} joints")


def bone_lengths(frames, joint_set):
    """Bone lengths, shape ``(..., J - 1)``, in ``joint_set.bones`` order."""
    p = np.array([b[0] for b in joint_set.bones])
    c = np.array([b[1] for b in joint_set.bones])
    return np.linalg.norm(frames[..., c, :] - frames[..., p, :], axis=-1)


@dataclass(frozen=True, eq=False)
class MotionSequence:
    joint_set: JointSet
    frames: np.ndarray
    fps: float
    subject: str
    limb_total: float

    def __post_init__(self):
        f = np.array(self.frames, dtype=np.float64)
        if f.ndim != 3 or f.shape[1:] != (self.joint_set.num_joints, 3):
            raise JointSetMismatch(f"frames {f.shape} do not match joint set {self.joint_set.name}")
        if not np.all(np.isfinite(f)):
            raise ValueError("motion frames must be finite")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def duration(self):
        return self.num_frames / self.fps

    def pose(self, t):
        return Pose3D(self.frames[t], "WCS", self.joint_set.root)

    def bone_lengths(self):
        return bone_lengths(self.frames, self.joint_set)

    def scene_center(self):
        """Time-averaged root position."""
        return self.frames[:, self.joint_set.root].mean(axis=0)

    def replace_frames(self, frames, limb_total=None, subject=None):
        return MotionSequence(
            self.joint_set,
            frames,
            self.fps,
            self.subject if subject is None else subject,
            self.limb_total if limb_total is None else limb_total,
        )


# ---------------------------------------------------------------------------
# procedural walker

# Metres, for a roughly 1.7 m adult; rescaled per subject.
_TEMPLATE = {
    "hip_half_width": 0.13,
    "thigh": 0.45,
    "shin": 0.44,
    "spine": 0.23,
    "thorax": 0.25,
    "neck": 0.11,
    "head": 0.11,
    "shoulder": 0.15,
    "upper_arm": 0.28,
    "forearm": 0.25,
}


def _smooth_bumps(t, centers, width):
    out = np.zeros_like(t)
    for c in centers:
        x = np.clip((t - c) / width, -1.0, 1.0)
        out = np.maximum(out, 0.5 + 0.5 * np.cos(np.pi * x))
    return out


def _walker_h36m(t, rng, scale):
    """17-joint frames for times ``t`` with template lengths times ``scale``."""
    L = {k: v * scale for k, v in _TEMPLATE.items()}
    n = t.size
    dt = np.diff(t, prepend=t[0])

    num_crouch = rng.integers(1, 3)
    crouch_centers = np.sort(rng.uniform(0.15, 0.85, size=num_crouch)) * t[-1] if n > 1 else []
    crouch = _smooth_bumps(t, crouch_centers, width=1.6)

    rx, ry = rng.uniform(0.5, 0.9, size=2)
    direction = rng.choice([-1.0, 1.0])
    speed = rng.uniform(0.45, 0.65) * (1.0 - 0.9 * crouch)
    # arc parameter of the ellipse, advanced at roughly constant ground speed
    sigma0 = rng.uniform(0, 2 * np.pi)
    sigma = np.empty(n)
    s = sigma0
    for i in range(n):
        local_r = math.hypot(rx * math.sin(s), ry * math.cos(s))
        s += direction * speed[i] * dt[i] / local_r
        sigma[i] = s
    root_xy = np.stack([rx * np.cos(sigma), ry * np.sin(sigma)], axis=-1)
    vel = direction * np.stack([-rx * np.sin(sigma), ry * np.cos(sigma)], axis=-1)
    heading = np.arctan2(vel[:, 1], vel[:, 0])

    cadence = rng.uniform(0.8, 1.0)
    phase = 2 * np.pi * np.cumsum(cadence * (1.0 - 0.8 * crouch) * dt) + rng.uniform(0, 2 * np.pi)
    gait = 1.0 - crouch
    hip_amp, knee_amp, arm_amp = 0.45 * gait, 0.55 * gait, 0.35 * gait

    hip_r = hip_amp * np.sin(phase) + 1.3 * crouch
    hip_l = hip_amp * np.sin(phase + np.pi) + 1.3 * crouch
    knee_r = knee_amp * (0.5 - 0.5 * np.cos(phase - 0.6)) + 2.3 * crouch + 0.05
    knee_l = knee_amp * (0.5 - 0.5 * np.cos(phase + np.pi - 0.6)) + 2.3 * crouch + 0.05
    arm_r = arm_amp * np.sin(phase + np.pi) + 0.6 * crouch
    arm_l = arm_amp * np.sin(phase) + 0.6 * crouch
    elbow_r = 0.35 + 0.25 * (1 + np.sin(phase + np.pi)) * gait + 0.9 * crouch
    elbow_l = 0.35 + 0.25 * (1 + np.sin(phase)) * gait + 0.9 * crouch
    lean = 0.06 + 0.45 * crouch

    fwd = np.stack([np.cos(heading), np.sin(heading), np.zeros(n)], axis=-1)
    left = np.stack([-np.sin(heading), np.cos(heading), np.zeros(n)], axis=-1)
    up = np.broadcast_to([0.0, 0.0, 1.0], (n, 3))
    cl, sl = np.cos(lean)[:, None], np.sin(lean)[:, None]
    t_up = cl * up + sl * fwd
    t_fwd = cl * fwd - sl * up

    def col(a):
        return np.asarray(a)[:, None]

    def sagittal(angle, u, f):
        return -np.cos(angle)[:, None] * u + np.sin(angle)[:, None] * f

    J = np.zeros((n, 17, 3))
    J[:, 1] = -L["hip_half_width"] * left
    J[:, 4] = L["hip_half_width"] * left
    for hip, knee, foot, a, k in ((1, 2, 3, hip_r, knee_r), (4, 5, 6, hip_l, knee_l)):
        J[:, knee] = J[:, hip] + L["thigh"] * sagittal(a, up, fwd)
        J[:, foot] = J[:, knee] + L["shin"] * sagittal(a - k, up, fwd)
    J[:, 7] = L["spine"] * t_up
    J[:, 8] = J[:, 7] + L["thorax"] * t_up
    neck_dir = math.cos(0.25) * t_up + math.sin(0.25) * t_fwd
    J[:, 9] = J[:, 8] + L["neck"] * neck_dir
    J[:, 10] = J[:, 9] + L["head"] * t_up
    abduct = 0.12
    for sh, el, wr, side, s_ang, e_ang in (
        (11, 12, 13, 1.0, arm_l, elbow_l),
        (14, 15, 16, -1.0, arm_r, elbow_r),
    ):
        J[:, sh] = J[:, 8] + side * L["shoulder"] * left
        upper = math.cos(abduct) * sagittal(s_ang, t_up, t_fwd) + side * math.sin(abduct) * left
        fore = math.cos(abduct) * sagittal(s_ang + e_ang, t_up, t_fwd) + side * math.sin(abduct) * left
        J[:, el] = J[:, sh] + L["upper_arm"] * upper
        J[:, wr] = J[:, el] + L["forearm"] * fore

    # plant the lowest foot on the ground every frame
    root_z = -np.minimum(J[:, 3, 2], J[:, 6, 2])
    J += np.concatenate([root_xy, col(root_z)], axis=-1)[:, None, :]
    return J


def generate_walker(seed, duration_s, joint_set="h36m17", limb_total=3.6, fps=25.0, subject=None):
    """Deterministic articulated walker on the ``z = 0`` ground plane.

    The subject walks an ellipse (radii 0.5-0.9 m) around the origin with a
    sinusoidal gait and one or two deep crouches, so root height varies.
    ``limb_total`` is the summed length of the 16 bones of the full 17-joint
    skeleton, whichever joint set is emitted.
    """
    js = get_joint_set(joint_set)
    if not 2.5 <= limb_total <= 4.5:
        raise ValueError(f"limb_total must lie in [2.5, 4.5] m, got {limb_total}")
    n = max(int(round(duration_s * fps)), 1)
    t = np.arange(n) / fps
    rng = np.random.default_rng(seed)
    unit_total = float(bone_lengths(_walker_h36m(t[:1], np.random.default_rng(seed), 1.0), H36M_17).sum())
    frames = _walker_h36m(t, rng, limb_total / unit_total)
    if js is H36M_14:
        frames = frames[:, REDUCE_17_TO_14]
    return MotionSequence(js, frames, float(fps), subject or f"walker{seed}", float(limb_total))


# ---------------------------------------------------------------------------
# augmentations


def scale_bones(seq, s):
    if s <= 0:
        raise ValueError("scale must be positive")
    if s == 1:
        return seq.replace_frames(seq.frames.copy())
    js, old = seq.joint_set, seq.frames
    new = np.empty_like(old)
    new[:, js.root] = old[:, js.root]
    for i in js.topological_order()[1:]:
        p = js.parents[i]
        new[:, i] = new[:, p] + s * (old[:, i] - old[:, p])
    return seq.replace_frames(new, limb_total=seq.limb_total * s)


def flip_array(a, joint_set):
    """Mirror ``(..., J, D)`` coordinates: negate ``x`` and swap left/right."""
    js = get_joint_set(joint_set)
    a = np.asarray(a)
    if a.shape[-2] != js.num_joints:
        raise JointSetMismatch(f"{a.shape[-2]} joints given, {js.name} has {js.num_joints}")
    out = a[..., js.mirror_permutation, :].copy()
    out[..., 0] = -out[..., 0]
    return out


def horizontal_flip(pose, joint_set):
    if isinstance(pose, Pose3D):
        return pose.with_xyz(flip_array(pose.xyz, joint_set))
    if isinstance(pose, RayPose):
        origin = pose.origin * np.array([-1.0, 1.0, 1.0])
        return RayPose(flip_array(pose.directions, joint_set), pose.frame, origin)
    if isinstance(pose, Pose2D):
        return Pose2D(flip_array(pose.xy, joint_set))
    return flip_array(pose, joint_set)


def to_reduced_jointset(pose):
    """Project a 17-joint pose (any container) onto the 14-joint set. Lossy."""
    idx = list(REDUCE_17_TO_14)

    def take(a):
        if a.shape[-2] != H36M_17.num_joints:
            raise UnknownJointSet(f"expected a 17-joint pose, got {a.shape[-2]} joints")
        return a[..., idx, :]

    if isinstance(pose, MotionSequence):
        if pose.joint_set is not H36M_17:
            raise UnknownJointSet(f"cannot reduce joint set {pose.joint_set.name}")
        return MotionSequence(H36M_14, take(pose.frames), pose.fps, pose.subject, pose.limb_total)
    if isinstance(pose, Pose3D):
        return Pose3D(take(pose.xyz), pose.frame, pose.root)
    if isinstance(pose, RayPose):
        return RayPose(take(pose.directions), pose.frame, pose.origin)
    if isinstance(pose, Pose2D):
        return Pose2D(take(pose.xy))
    return take(np.asarray(pose))


# ---------------------------------------------------------------------------
# JSON Lines


def write_motion_jsonl(seq, path):
    header = {
        "type": "motion_header",
        "joint_set": seq.joint_set.to_dict(),
        "fps": seq.fps,
        "subject": seq.subject,
        "limb_total": seq.limb_total,
        "num_frames": seq.num_frames,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, f in enumerate(seq.frames):
            fh.write(json.dumps({"frame_index": i, "joints": f.tolist()}) + "\n")


def read_motion_jsonl(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    js = get_joint_set(header["joint_set"]["name"])
    rows.sort(key=lambda r: r["frame_index"])
    frames = np.array([r["joints"] for r in rows], dtype=np.float64)
    return MotionSequence(js, frames, header["fps"], header["subject"], header["limb_total"])
