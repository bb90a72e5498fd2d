"""The two-headed lifting network.

Both heads share one layout: a temporal branch per joint group plus a global
branch, each a dilated convolution stack whose receptive field is exactly the
input window; the branch features are fused by a dense block, concatenated
with the camera embedding and decoded by a second dense block and a linear
output layer.  The pose head emits root-relative joints and the trajectory
head a root location, both in the model's working frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import nn, ops
from ..autodiff.tensor import Tensor, resolve_dtype
from ..errors import ModeMismatch, ShapeMismatch
from ..skeleton import get_joint_set

MODES = ("pixel", "ray-ccs", "ray-ncs")
EMBED_DIM = 64
THETA_SCALE = 0.7
HEIGHT_SCALE = 3.0
RAY_QUANTUM = 2.0**-20  # about 1e-3 px at a 1000 px focal length
# (kernel, dilation) per temporal layer: receptive field 1 + 2*1 + 2*3 = 9
TEMPORAL_LAYERS = ((3, 1), (3, 3))


def receptive_field(layers=TEMPORAL_LAYERS):
    return 1 + int(np.sum([(k - 1) * d for k, d in layers]))


def quantize_rays(x):
    """Snap ray coordinates to a ``RAY_QUANTUM`` grid.

    Rays that agree in exact arithmetic but went through different pixel
    round trips differ by a few ulps; snapping makes them identical
    inputs.  The quantum is a power of two, so the snapping itself is exact.
    """
    return np.round(np.asarray(x, dtype=np.float64) / RAY_QUANTUM) * RAY_QUANTUM


def input_dim(mode):
    if mode not in MODES:
        raise ModeMismatch(f"unknown input mode {mode!r}; expected one of {MODES}")
    return 2 if mode == "pixel" else 3


@dataclass(frozen=True)
class CameraEmbeddingInput:
    theta: float
    h: float

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.h)):
            raise ValueError("camera embedding inputs must be finite")
        if self.h < 0:
            raise ValueError("camera height must be non-negative")


@dataclass(frozen=True)
class ModelInput:
    """A batch of windows ``(N, T, J, D)`` tagged with how it was built."""

    frames: np.ndarray
    mode: str
    theta: np.ndarray
    h: np.ndarray


class CameraEmbedding(nn.Module):
    def __init__(self, rng, dim=EMBED_DIM, dropout=0.25, dtype="float64"):
        self.l1 = nn.DenseBlock(2, dim, rng, dropout, dtype)
        self.l2 = nn.DenseBlock(dim, dim, rng, dropout, dtype)

    def __call__(self, cam):
        return self.l2(self.l1(cam))


class TemporalBranch(nn.Module):
    def __init__(self, n_in, width, rng, dropout, dtype):
        self.layers = [
            nn.ConvBlock(n_in if i == 0 else width, width, k, d, rng, dropout, dtype)
            for i, (k, d) in enumerate(TEMPORAL_LAYERS)
        ]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class LiftNet(nn.Module):
    """One head: grouped temporal branches, fusion, embedding, decoder."""

    def __init__(self, groups, feat_dim, width, out_dim, embed, rng, dropout, dtype):
        self.groups = [np.asarray(g) for g in groups]
        j = int(np.sum([len(g) for g in groups]))
        self.branches = [TemporalBranch(len(g) * feat_dim, width, rng, dropout, dtype) for g in self.groups]
        self.branches.append(TemporalBranch(j * feat_dim, width, rng, dropout, dtype))
        self.fuse = nn.DenseBlock(width * len(self.branches), width, rng, dropout, dtype)
        self.embed = CameraEmbedding(rng, EMBED_DIM, dropout, dtype) if embed else None
        self.decode = nn.DenseBlock(width + (EMBED_DIM if embed else 0), width, rng, dropout, dtype)
        self.out = nn.Linear(width, out_dim, rng, dtype)
        self.feat_dim = feat_dim

    def __call__(self, feats, cam):
        # feats: (N, T, J, F) tensor; cam: (N, 2) tensor
        n, t = feats.shape[:2]
        outs = []
        for grp, branch in zip(self.groups, self.branches):
            x = ops.reshape(ops.take(feats, grp, 2), (n, t, len(grp) * self.feat_dim))
            outs.append(branch(x))
        outs.append(self.branches[-1](ops.reshape(feats, (n, t, -1))))
        fused = self.fuse(ops.reshape(ops.concat(outs, axis=-1), (n, -1)))
        if self.embed is not None:
            fused = ops.concat([fused, self.embed(cam)], axis=-1)
        return self.out(self.decode(fused))


class LiftingModel(nn.Module):
    """Pose head plus trajectory head with optional camera embedding.

    Targets are standardised with fixed statistics stored as
    buffers (set from the training set before the first epoch) so the heads
    regress O(1) values whatever the working frame.
    """

    def __init__(self, joint_set="h36m14", input_mode="ray-ncs", enable_camera_embedding=True,
                 width=64, dropout=0.25, seed=0, precision="float32"):
        self.joint_set = get_joint_set(joint_set)
        input_dim(input_mode)  # rejects unknown modes
        self.input_mode = input_mode
        self.enable_camera_embedding = bool(enable_camera_embedding)
        self.width = width
        self.dropout_p = dropout
        self.precision = resolve_dtype(precision).name
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        js, dt = self.joint_set, self.precision
        feat = 2 * 2  # image-plane coordinates and their offsets
        groups = js.groups
        self.pose_net = LiftNet(groups, feat, width, 3 * (js.num_joints - 1), self.enable_camera_embedding,
                                self.rng, dropout, dt)
        self.traj_net = LiftNet(groups, feat, width, 3, self.enable_camera_embedding, self.rng, dropout, dt)
        self.buf_root_mean = np.zeros(3)
        self.buf_root_std = np.ones(3)
        self.buf_rel_std = np.ones(1)
        self.buf_in_mean = np.zeros(feat)
        self.buf_in_std = np.ones(feat)

    @property
    def receptive_field(self):
        return receptive_field()

    def config(self):
        return {
            "joint_set": self.joint_set.name,
            "input_mode": self.input_mode,
            "enable_camera_embedding": self.enable_camera_embedding,
            "width": self.width,
            "dropout": self.dropout_p,
            "seed": self.seed,
            "precision": self.precision,
        }

    def set_target_stats(self, rel, root):
        self.buf_root_mean[...] = root.mean(axis=0)
        # one scale for all axes keeps the root loss a Euclidean distance
        self.buf_root_std[...] = max(float(np.sqrt(np.mean((root - root.mean(axis=0)) ** 2))), 1e-3)
        self.buf_rel_std[...] = max(float(np.sqrt(np.mean(rel**2))), 1e-3)

    def set_input_stats(self, frames, mirrored=False, max_samples=8192):
        """Per-channel input mean/std from training windows.

        Without this the NCS ray heights enter with a large shared offset, and
        the batch-norm running means trail the optimiser on that direction.
        With ``mirrored`` the x channels are centred at zero, as flipping does.
        """
        frames = np.asarray(frames)
        step = max(1, -(-frames.shape[0] // max_samples))
        f = self._raw_features(frames[::step]).astype(np.float64).reshape(-1, self.buf_in_mean.size)
        mean = f.mean(axis=0)
        if mirrored:
            mean[0::2] = 0.0
        self.buf_in_mean[...] = mean
        self.buf_in_std[...] = np.maximum(np.sqrt(np.mean((f - mean) ** 2, axis=0)), 1e-6)

    def features(self, frames):
        """Standardised model inputs ``(N, T, J, 4)``."""
        x = (self._raw_features(frames) - self.buf_in_mean) / self.buf_in_std
        return x.astype(self.precision)

    def _raw_features(self, frames):
        """Per-frame ``(x, y)`` inputs and their offsets from the centre frame."""
        frames = np.asarray(frames)
        if frames.ndim != 4:
            raise ShapeMismatch(f"expected (N, T, J, D) windows, got {frames.shape}")
        n, t, j, d = frames.shape
        if t != self.receptive_field:
            raise ShapeMismatch(f"window of {t} frames given, receptive field is {self.receptive_field}")
        if j != self.joint_set.num_joints:
            raise ShapeMismatch(f"{j} joints given, model expects {self.joint_set.num_joints}")
        if d != input_dim(self.input_mode):
            raise ModeMismatch(f"{d}-d keypoints given to a {self.input_mode} model")
        # rays carry z == 1 by construction; a constant channel adds nothing
        # but weights the batch norms are blind to
        x = frames[..., :2]
        if self.input_mode != "pixel":
            x = quantize_rays(x)
        c = x[:, t // 2 : t // 2 + 1]
        return np.concatenate([x, x - c], axis=-1)

    def camera_input(self, theta, h):
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        h = np.asarray(h, dtype=np.float64).reshape(-1)
        return np.stack([theta / THETA_SCALE, h / HEIGHT_SCALE], axis=-1).astype(self.precision)

    def forward_std(self, inp):
        """Standardised head outputs ``(rel (N, J-1, 3), root (N, 3))`` as tensors."""
        if isinstance(inp, ModelInput) and inp.mode != self.input_mode:
            raise ModeMismatch(f"input built for {inp.mode!r}, model expects {self.input_mode!r}")
        feats = Tensor(self.features(inp.frames))
        cam = Tensor(self.camera_input(inp.theta, inp.h))
        n = feats.shape[0]
        rel = ops.reshape(self.pose_net(feats, cam), (n, self.joint_set.num_joints - 1, 3))
        root = self.traj_net(feats, cam)
        return rel, root

    def decode(self, rel_std, root_std):
        """Arrays in metres: root-relative pose ``(N, J, 3)`` and root ``(N, 3)``."""
        rel = np.asarray(rel_std, dtype=np.float64) * self.buf_rel_std[0]
        rel = np.insert(rel, self.joint_set.root, 0.0, axis=1)
        root = np.asarray(root_std, dtype=np.float64) * self.buf_root_std + self.buf_root_mean
        return rel, root

    def encode_targets(self, rel, root):
        rel = np.delete(np.asarray(rel), self.joint_set.root, axis=1) / self.buf_rel_std[0]
        root = (np.asarray(root) - self.buf_root_mean) / self.buf_root_std
        return rel.astype(self.precision), root.astype(self.precision)

    def predict(self, inp):
        """Eval-mode ``(rel, root)`` in metres for a :class:`ModelInput`."""
        was = self.training
        self.eval()
        try:
            rel, root = self.forward_std(inp)
        finally:
            self.train(was)
        return self.decode(rel.data, root.data)

    def embedding_size(self):
        """Parameters that exist only because of the camera embedding."""
        if not self.enable_camera_embedding:
            return 0
        n = 0
        for net in (self.pose_net, self.traj_net):
            n += net.embed.num_parameters() + EMBED_DIM * self.width
        return n


def embed_camera(inp, model, head="pose"):
    """64-d embedding of ``(theta, h)`` from one head's embedding MLP."""
    net = model.pose_net if head == "pose" else model.traj_net
    if net.embed is None:
        raise ModeMismatch("model was built without camera embedding")
    if isinstance(inp, CameraEmbeddingInput):
        cam = model.camera_input([inp.theta], [inp.h])
    else:
        cam = np.asarray(inp, dtype=model.precision)
    return net.embed(Tensor(cam))


def forward(model, window, cam):
    """Single-window inference: ``(relative (J, 3), root (1, 3))`` in metres."""
    window = np.asarray(window)
    batch = ModelInput(window[None], model.input_mode, np.array([cam.theta]), np.array([cam.h]))
    rel, root = model.predict(batch)
    return rel[0], root[0][None]
