"""Synthetic virtual-camera benchmark.

Cameras come from regular grids over intrinsic parameters (focal length and
principal point) and extrinsic parameters (yaw ``beta`` about the scene centre,
pitch ``theta`` and camera-to-centre distance ``gamma``).  Rigs that would push
any keypoint of the attached motion out of the image are dropped.  Every
surviving (camera, frame window) pair becomes a :class:`SampleRecord`.

Angles in configs are degrees, everything else is metres or pixels.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry as g
from .errors import EmptyGrid
from .skeleton import generate_walker, get_joint_set, scale_bones

log = logging.getLogger(__name__)

NOISE_FAMILIES = ("focal", "center", "pitch", "yaw", "translation")

# Camera 55011271 of the capture rig the benchmark was built from.
BASE_INTRINSICS = g.CameraIntrinsics(1149.67569, 1147.59161, 508.848621, 508.064917, 1000, 1000)


@dataclass(frozen=True)
class Axis:
    """``num`` evenly spaced values from ``lo`` to ``hi`` inclusive."""

    lo: float
    hi: float
    num: int = 1

    def __post_init__(self):
        if self.num < 1:
            raise ValueError("axis needs at least one value")
        if self.hi < self.lo:
            raise ValueError(f"empty axis range [{self.lo}, {self.hi}]")
        if (self.num == 1) != (self.hi == self.lo):
            raise ValueError("a single-valued axis must have lo == hi and vice versa")

    @classmethod
    def fixed(cls, value):
        return cls(float(value), float(value), 1)

    @classmethod
    def stepped(cls, lo, stop, step):
        """Half-open ``[lo, stop)`` grid with spacing ``step``."""
        if step <= 0:
            raise ValueError("step must be positive")
        num = int(math.ceil((stop - lo) / step - 1e-9))
        return cls(float(lo), float(lo + (num - 1) * step), num)

    @property
    def step(self):
        return 0.0 if self.num == 1 else (self.hi - self.lo) / (self.num - 1)

    def values(self):
        if self.num == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.num)

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "num": self.num}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lo"]), float(d["hi"]), int(d["num"]))


@dataclass(frozen=True)
class AugmentationConfig:
    """One rectangular block of the camera grid.

    ``focal`` and ``principal`` hold absolute values (``fx`` and ``cx = cy``);
    ``None`` keeps the base intrinsics.  ``fy`` follows ``fx`` with the base
    offset so the focal shift is shared by both axes.
    """

    rotation: Axis = Axis.fixed(0.0)
    pitch: Axis = Axis.fixed(0.0)
    translation: Axis = Axis.fixed(10.0)
    focal: Axis | None = None
    principal: Axis | None = None
    bone_scale: Axis = Axis.fixed(1.0)
    noise_std: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for fam, std in self.noise_std.items():
            if fam not in NOISE_FAMILIES:
                raise ValueError(f"unknown noise family {fam!r}")
            if std < 0:
                raise ValueError("noise std must be non-negative")
        if self.bone_scale.lo <= 0:
            raise ValueError("bone scale must be positive")

    @property
    def num_cameras(self):
        n = self.rotation.num * self.pitch.num * self.translation.num
        for ax in (self.focal, self.principal):
            n *= 1 if ax is None else ax.num
        return n

    def to_dict(self):
        d = {}
        for name in ("rotation", "pitch", "translation", "focal", "principal", "bone_scale"):
            ax = getattr(self, name)
            d[name] = None if ax is None else ax.to_dict()
        d["noise_std"] = dict(sorted(self.noise_std.items()))
        d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for name in ("rotation", "pitch", "translation", "focal", "principal", "bone_scale"):
            if name in d:
                kw[name] = None if d[name] is None else Axis.from_dict(d[name])
        return cls(noise_std=dict(d.get("noise_std", {})), seed=int(d.get("seed", 0)), **kw)


@dataclass(frozen=True)
class SubjectSpec:
    name: str
    seed: int
    limb_total: float = 3.6


@dataclass(frozen=True)
class SplitConfig:
    name: str
    blocks: tuple
    subjects: tuple

    def to_dict(self):
        return {
            "name": self.name,
            "blocks": [b.to_dict() for b in self.blocks],
            "subjects": [asdict(s) for s in self.subjects],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["name"],
            tuple(AugmentationConfig.from_dict(b) for b in d["blocks"]),
            tuple(SubjectSpec(**s) for s in d["subjects"]),
        )


@dataclass(frozen=True)
class SynthConfig:
    splits: tuple
    intrinsics: g.CameraIntrinsics = BASE_INTRINSICS
    joint_set: str = "h36m14"
    duration_s: float = 30.0
    fps: float = 25.0
    window_k: int = 4
    stride: int = 1
    keypoint_std: float = 0.0
    seed: int = 0

    def split(self, name):
        for s in self.splits:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self):
        return {
            "splits": [s.to_dict() for s in self.splits],
            "intrinsics": self.intrinsics.to_dict(),
            "joint_set": self.joint_set,
            "duration_s": self.duration_s,
            "fps": self.fps,
            "window_k": self.window_k,
            "stride": self.stride,
            "keypoint_std": self.keypoint_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        base = cls(splits=())
        kw = {k: d[k] for k in ("joint_set", "duration_s", "fps", "window_k", "stride", "keypoint_std", "seed") if k in d}
        return cls(
            splits=tuple(SplitConfig.from_dict(s) for s in d.get("splits", [])),
            intrinsics=g.CameraIntrinsics.from_dict(d["intrinsics"]) if "intrinsics" in d else base.intrinsics,
            **kw,
        )


def config_hash(obj):
    """Short SHA-256 of a JSON-serialisable object in canonical form."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def benchmark_config(duration_s=30.0, stride=1, joint_set="h36m14"):
    """Benchmark layout with 324 training, 126 extrinsic-test and 100
    intrinsic-test cameras."""
    train = SplitConfig(
        "train",
        (
            AugmentationConfig(
                rotation=Axis(60.0, 300.0, 3),
                pitch=Axis.stepped(2.0, 38.0, 2.0),
                translation=Axis(9.05, 11.70, 6),
            ),
        ),
        tuple(SubjectSpec(f"S{i}", seed=i, limb_total=lt) for i, lt in ((1, 3.5), (5, 3.3), (6, 3.8), (7, 3.4), (8, 3.7))),
    )
    test_subjects = (SubjectSpec("S9", 9, 3.6), SubjectSpec("S11", 11, 3.45))
    ext = SplitConfig(
        "test_extrinsic",
        (
            AugmentationConfig(
                rotation=Axis.fixed(0.0),
                pitch=Axis(1.0, 37.0, 19),
                translation=Axis(9.43, 13.19, 6),
            ),
            AugmentationConfig(
                rotation=Axis.stepped(0.0, 360.0, 30.0),
                pitch=Axis.fixed(19.0),
                translation=Axis.fixed(11.31),
            ),
        ),
        test_subjects,
    )
    intr = SplitConfig(
        "test_intrinsic",
        (
            AugmentationConfig(
                rotation=Axis.fixed(0.0),
                pitch=Axis.fixed(12.0),
                translation=Axis.fixed(4.5),
                focal=Axis(1100.0, 1180.0, 10),
                principal=Axis(450.0, 550.0, 10),
            ),
        ),
        test_subjects,
    )
    return SynthConfig(splits=(train, ext, intr), joint_set=joint_set, duration_s=duration_s, stride=stride)


# ---------------------------------------------------------------------------
# cameras


@dataclass(frozen=True)
class VirtualCamera:
    id: str
    intrinsics: g.CameraIntrinsics
    extrinsics: g.CameraExtrinsics
    provenance: dict = field(default_factory=dict)

    def ncs(self):
        return g.build_ncs(self.extrinsics)

    def to_dict(self):
        return {
            "id": self.id,
            "intrinsics": self.intrinsics.to_dict(),
            "extrinsics": self.extrinsics.to_dict(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["id"],
            g.CameraIntrinsics.from_dict(d["intrinsics"]),
            g.CameraExtrinsics.from_dict(d["extrinsics"]),
            dict(d["provenance"]),
        )


def fov_violation(points_w, intr, extr):
    """Reason string if any WCS point is behind or outside the camera, else ``None``."""
    pts = np.asarray(points_w, dtype=np.float64).reshape(-1, 3)
    cam = pts @ extr.r_w2c.T + extr.t_w2c
    z = cam[:, 2]
    if np.any(z <= g.MIN_DEPTH):
        return f"{int(np.sum(z <= g.MIN_DEPTH))} keypoints behind the camera"
    px = g.project_camera(g.Pose3D(cam, g.Frame.CCS), intr)
    out = ~g.in_frame(px, intr)
    if np.any(out):
        return f"{int(out.sum())} keypoints outside the {intr.width}x{intr.height} image"
    return None


def _intrinsic_grid(base, cfg):
    focals = [None] if cfg.focal is None else cfg.focal.values()
    centers = [None] if cfg.principal is None else cfg.principal.values()
    out = []
    for f in focals:
        for c in centers:
            kw = {}
            if f is not None:
                kw.update(fx=float(f), fy=float(base.fy + (f - base.fx)))
            if c is not None:
                kw.update(cx=float(c), cy=float(c))
            out.append(base.replace(**kw))
    return out


def augment_intrinsics(base, cfg, extr=None, motion=None):
    """Grid of intrinsics around ``base``; with ``extr`` and ``motion`` given,
    cameras that lose a keypoint of the motion are dropped (and logged)."""
    kept = []
    for intr in _intrinsic_grid(base, cfg):
        if motion is not None and extr is not None:
            why = fov_violation(motion, intr, extr)
            if why:
                log.info("dropping intrinsics fx=%.2f cx=%.2f: %s", intr.fx, intr.cx, why)
                continue
        kept.append(intr)
    if not kept:
        raise EmptyGrid("no intrinsic grid point satisfies the field-of-view constraint")
    return kept


def _extrinsic_grid(center, cfg):
    out = []
    for beta in cfg.rotation.values():
        for theta in cfg.pitch.values():
            for gamma in cfg.translation.values():
                extr = g.orbit_camera(center, math.radians(beta), math.radians(theta), float(gamma))
                out.append(((float(beta), float(theta), float(gamma)), extr))
    return out


def augment_extrinsics(scene_center, cfg, intr=None, motion=None):
    """Orbit rigs for every (rotation, pitch, translation) grid point."""
    return [extr for _, extr in _extrinsic_rigs(scene_center, cfg, intr, motion)]


def _extrinsic_rigs(center, cfg, intr, motion):
    kept = []
    for params, extr in _extrinsic_grid(center, cfg):
        if motion is not None and intr is not None:
            why = fov_violation(motion, intr, extr)
            if why:
                log.info("dropping rig beta=%.1f theta=%.1f gamma=%.2f: %s", *params, why)
                continue
        kept.append((params, extr))
    if not kept:
        raise EmptyGrid("no extrinsic grid point satisfies the field-of-view constraint")
    return kept


def build_cameras(split, base_intr, motions, scene_center=None):
    """All cameras of a split that keep every motion frame in view."""
    pts = np.concatenate([m.frames.reshape(-1, 3) for m in motions]) if motions else None
    if scene_center is None:
        scene_center = np.mean([m.scene_center() for m in motions], axis=0)
    cams = []
    for bi, cfg in enumerate(split.blocks):
        for (beta, theta, gamma), extr in _extrinsic_grid(scene_center, cfg):
            for intr in _intrinsic_grid(base_intr, cfg):
                why = None if pts is None else fov_violation(pts, intr, extr)
                if why:
                    log.info("%s: dropping camera beta=%.1f theta=%.1f gamma=%.2f fx=%.2f: %s",
                             split.name, beta, theta, gamma, intr.fx, why)
                    continue
                prov = {
                    "split": split.name,
                    "block": bi,
                    "rotation": beta,
                    "pitch": theta,
                    "translation": gamma,
                    "focal": intr.fx,
                    "principal": intr.cx,
                }
                cams.append(VirtualCamera(f"{split.name}-{len(cams):04d}", intr, extr, prov))
    if not cams:
        raise EmptyGrid(f"split {split.name!r} has no camera satisfying the field-of-view constraint")
    return cams


def extrinsic_overlap(cams_a, cams_b, tol=1e-6):
    """Pairs of camera ids whose extrinsics coincide within ``tol``."""
    hits = []
    for a in cams_a:
        for b in cams_b:
            ea, eb = a.extrinsics, b.extrinsics
            if np.max(np.abs(ea.r_w2c - eb.r_w2c)) <= tol and np.max(np.abs(ea.t_w2c - eb.t_w2c)) <= tol:
                hits.append((a.id, b.id))
    return hits


def add_camera_noise(cam, family, std, seed):
    """Copy of ``cam`` with Gaussian noise on one parameter family.

    ``focal`` shifts fx and fy by one shared draw, ``center`` draws cx and cy
    independently, ``pitch`` and ``yaw`` rotate the camera about its own
    ``x`` axis and the world ``z`` axis, ``translation`` moves the optical
    centre.  Rotations keep the optical centre fixed.
    """
    if family not in NOISE_FAMILIES:
        raise ValueError(f"unknown noise family {family!r}")
    if std < 0:
        raise ValueError("noise std must be non-negative")
    prov = dict(cam.provenance, noise_family=family, noise_std=float(std))
    if std == 0:
        return VirtualCamera(cam.id, cam.intrinsics, cam.extrinsics, prov)
    rng = np.random.default_rng(seed)
    intr, extr = cam.intrinsics, cam.extrinsics
    if family == "focal":
        d = float(rng.normal(0.0, std))
        intr = intr.replace(fx=intr.fx + d, fy=intr.fy + d)
        prov["noise"] = [d]
    elif family == "center":
        d = rng.normal(0.0, std, size=2)
        intr = intr.replace(cx=intr.cx + float(d[0]), cy=intr.cy + float(d[1]))
        prov["noise"] = d.tolist()
    elif family in ("pitch", "yaw"):
        # std is in degrees like the rest of the config
        d = math.radians(float(rng.normal(0.0, std)))
        if family == "pitch":
            r = g.pitch_rotation(d).T @ extr.r_w2c
        else:
            r = extr.r_w2c @ g.yaw_rotation(d).T
        extr = g.CameraExtrinsics(r, -r @ extr.center)
        prov["noise"] = [d]
    else:
        d = rng.normal(0.0, std, size=3)
        extr = g.CameraExtrinsics(extr.r_w2c, -extr.r_w2c @ (extr.center + d))
        prov["noise"] = d.tolist()
    return VirtualCamera(cam.id, intr, extr, prov)


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class SampleRecord:
    camera_id: str
    subject: str
    frame: int
    pixels: np.ndarray
    rays_ncs: np.ndarray
    gt_ncs: np.ndarray
    gt_wcs: np.ndarray
    theta: float
    h: float
    scale: float = 1.0

    _ARRAYS = ("pixels", "rays_ncs", "gt_ncs", "gt_wcs")

    @property
    def window(self):
        return self.pixels.shape[0]

    def to_dict(self):
        d = {"camera_id": self.camera_id, "subject": self.subject, "frame": self.frame}
        for k in self._ARRAYS:
            d[k] = getattr(self, k).tolist()
        d.update(theta=self.theta, h=self.h, scale=self.scale)
        return d

    @classmethod
    def from_dict(cls, d):
        arrays = {k: np.asarray(d[k], dtype=np.float64) for k in cls._ARRAYS}
        return cls(d["camera_id"], d["subject"], int(d["frame"]), theta=float(d["theta"]),
                   h=float(d["h"]), scale=float(d.get("scale", 1.0)), **arrays)


@dataclass
class MaterializeStats:
    windows: int = 0
    kept: int = 0
    skipped_fov: int = 0
    skipped_behind: int = 0

    def merge(self, other):
        for k in ("windows", "kept", "skipped_fov", "skipped_behind"):
            setattr(self, k, getattr(self, k) + getattr(other, k))


def materialize(seq, cams, k=4, stride=1, keypoint_std=0.0, seed=0, scale=1.0, stats=None):
    """Records for every camera and every full ``2k+1`` window of ``seq``.

    Windows with a keypoint behind the camera or outside the image on any of
    their frames are skipped and counted in ``stats``.
    """
    if stats is None:
        stats = MaterializeStats()
    T, J = seq.num_frames, seq.joint_set.num_joints
    centers = np.arange(k, T - k, stride)
    world = g.Pose3D(seq.frames, g.Frame.WCS, seq.joint_set.root)
    records = []
    for ci, cam in enumerate(cams):
        intr, extr = cam.intrinsics, cam.extrinsics
        ncs = g.build_ncs(extr)
        cam_xyz = world.xyz @ extr.r_w2c.T + extr.t_w2c
        behind = np.any(cam_xyz[..., 2] <= g.MIN_DEPTH, axis=1)
        z = np.where(cam_xyz[..., 2:3] > g.MIN_DEPTH, cam_xyz[..., 2:3], 1.0)
        safe = g.Pose3D(np.concatenate([cam_xyz[..., :2], z], axis=-1), g.Frame.CCS)
        px = g.project_camera(safe, intr).xy
        if keypoint_std > 0:
            rng = np.random.default_rng([seed, ci])
            px = px + rng.normal(0.0, keypoint_std, size=px.shape)
        outside = ~np.all(g.in_frame(g.Pose2D(px), intr), axis=1)
        rays_ccs = g.decouple_intrinsics(g.Pose2D(px), intr)
        rays = g.camera_to_normalized(rays_ccs, ncs).directions
        gt_ncs = g.world_to_normalized(world, extr, ncs).xyz
        for t in centers:
            stats.windows += 1
            sl = slice(t - k, t + k + 1)
            if np.any(behind[sl]):
                stats.skipped_behind += 1
                continue
            if np.any(outside[sl]):
                stats.skipped_fov += 1
                continue
            stats.kept += 1
            records.append(
                SampleRecord(
                    cam.id,
                    seq.subject,
                    int(t),
                    px[sl].copy(),
                    rays[sl].copy(),
                    gt_ncs[t].copy(),
                    world.xyz[t].copy(),
                    ncs.theta,
                    ncs.h,
                    float(scale),
                )
            )
    records.sort(key=lambda r: (r.camera_id, r.subject, r.scale, r.frame))
    return records


def split_motions(cfg, split):
    """Walker sequences for the subjects of ``split``, one per bone scale."""
    out = []
    scales = sorted({float(s) for b in split.blocks for s in b.bone_scale.values()})
    for subj in split.subjects:
        base = generate_walker(subj.seed + 1000 * cfg.seed, cfg.duration_s, cfg.joint_set,
                               subj.limb_total, cfg.fps, subj.name)
        for s in scales:
            out.append((s, base if s == 1.0 else scale_bones(base, s)))
    return out


@dataclass
class DatasetSplit:
    name: str
    joint_set: str
    cameras: list
    records: list
    stats: MaterializeStats
    config_hash: str = ""

    def camera(self, cam_id):
        return self._index()[cam_id]

    def _index(self):
        if getattr(self, "_cams", None) is None:
            self._cams = {c.id: c for c in self.cameras}
        return self._cams

    def header(self):
        return {
            "type": "header",
            "split": self.name,
            "config_hash": self.config_hash,
            "joint_set": self.joint_set,
            "counts": {
                "cameras": len(self.cameras),
                "records": len(self.records),
                "windows": self.stats.windows,
                "skipped_fov": self.stats.skipped_fov,
                "skipped_behind": self.stats.skipped_behind,
            },
            "cameras": [c.to_dict() for c in self.cameras],
        }


def build_split(cfg, name, scene_center=None):
    split = cfg.split(name)
    motions = split_motions(cfg, split)
    cams = build_cameras(split, cfg.intrinsics, [m for _, m in motions], scene_center)
    stats = MaterializeStats()
    records = []
    for i, (s, m) in enumerate(motions):
        records += materialize(m, cams, cfg.window_k, cfg.stride, cfg.keypoint_std,
                               seed=cfg.seed * 7919 + i, scale=s, stats=stats)
    records.sort(key=lambda r: (r.camera_id, r.subject, r.scale, r.frame))
    return DatasetSplit(name, get_joint_set(cfg.joint_set).name, cams, records, stats, config_hash(cfg))


def write_dataset(ds, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(ds.header(), sort_keys=False) + "\n")
        for r in ds.records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_dataset(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        records = [SampleRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    c = header["counts"]
    stats = MaterializeStats(c["windows"], c["records"], c["skipped_fov"], c["skipped_behind"])
    cams = [VirtualCamera.from_dict(d) for d in header["cameras"]]
    return DatasetSplit(header["split"], header["joint_set"], cams, records, stats, header["config_hash"])


def synthesize(cfg, out_dir):
    """Materialise and write every split of ``cfg``; returns the manifest."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    center = None
    manifest = {"config_hash": config_hash(cfg), "seed": cfg.seed, "splits": {}}
    for split in cfg.splits:
        if center is None:
            # every split orbits the same point so train and test grids are comparable
            center = np.mean([m.scene_center() for _, m in split_motions(cfg, split)], axis=0)
        ds = build_split(cfg, split.name, center)
        fname = f"{split.name}.jsonl"
        write_dataset(ds, out / fname)
        manifest["splits"][split.name] = dict(ds.header()["counts"], file=fname)
    manifest["scene_center"] = center.tolist() if center is not None else None
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
