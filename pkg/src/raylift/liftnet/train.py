"""Training loop, loss and checkpoints for :class:`LiftingModel`."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..autodiff import Adam, Tape, exp_lr_decay, load_checkpoint, ops, save_checkpoint
from ..autodiff.tensor import Tensor
from ..errors import NonFiniteLoss, ShapeMismatch
from .data import flip_batch
from ..skeleton import flip_array
from .model import LiftingModel, ModelInput

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "train_loss", "val_mpjpe_mm", "val_mrpe_mm")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    decay: float = 0.99
    seed: int = 0
    precision: str = "float32"
    flip: bool = True
    width: int = 64
    dropout: float = 0.25
    pose_weight: float = 1.0
    traj_weight: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "decay", "width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2 for batch norm")

    def to_dict(self):
        return asdict(self)


def loss(pred_rel, pred_root, gt_rel, gt_root, pose_weight=1.0, traj_weight=1.0):
    """Mean per-joint distance on the relative pose plus mean root distance."""
    if pred_rel.shape != gt_rel.shape or pred_root.shape != gt_root.shape:
        raise ShapeMismatch(
            f"prediction {pred_rel.shape}/{pred_root.shape} vs target {gt_rel.shape}/{gt_root.shape}"
        )
    as_t = lambda a, like: a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=like.dtype))
    gt_rel, gt_root = as_t(gt_rel, pred_rel), as_t(gt_root, pred_root)
    pose = ops.mean(ops.l2_norm_per_row(ops.sub(pred_rel, gt_rel)))
    traj = ops.mean(ops.l2_norm_per_row(ops.sub(pred_root, gt_root)))
    return ops.add(ops.scale(pose, pose_weight), ops.scale(traj, traj_weight))


def build_model(cfg, joint_set, mode, enable_camera_embedding=True):
    return LiftingModel(joint_set, mode, enable_camera_embedding, cfg.width, cfg.dropout, cfg.seed, cfg.precision)


def evaluate(model, data, batch_size=1024):
    """Eval-mode MPJPE and MRPE (mm) in the working frame."""
    rel, root = predict_frame(model, data.frames, data.theta, data.h, batch_size)
    mpjpe = np.linalg.norm(rel - data.rel, axis=-1).mean() * 1000.0
    mrpe = np.linalg.norm(root - data.root, axis=-1).mean() * 1000.0
    return float(mpjpe), float(mrpe)


def predict_frame(model, frames, theta, h, batch_size=1024, flip_tta=False):
    """Working-frame ``(rel, root)`` for windows ``(N, T, J, D)``.

    With ``flip_tta`` the mirrored windows are lifted too and the two
    absolute poses are averaged after mirroring the second one back.
    """
    js = model.joint_set
    rels, roots = [], []
    for s in range(0, len(frames), batch_size):
        sl = np.s_[s : s + batch_size]
        inp = ModelInput(frames[sl], model.input_mode, theta[sl], h[sl])
        rel, root = model.predict(inp)
        if flip_tta:
            fr = flip_array(frames[sl], js)
            frel, froot = model.predict(ModelInput(fr, model.input_mode, theta[sl], h[sl]))
            _, frel, froot = flip_batch(fr, frel, froot, js)
            absolute = 0.5 * ((rel + root[:, None]) + (frel + froot[:, None]))
            root = 0.5 * (root + froot)
            rel = absolute - root[:, None]
        rels.append(rel)
        roots.append(root)
    return np.concatenate(rels), np.concatenate(roots)


class Trainer:
    """Stateful training run; :meth:`run` continues from the current epoch."""

    def __init__(self, model, train_data, cfg, val_data=None):
        if len(train_data) < 2:
            raise ValueError("training set needs at least two samples")
        if train_data.mode != model.input_mode:
            raise ValueError(f"dataset built for {train_data.mode!r}, model expects {model.input_mode!r}")
        self.model = model
        self.data = train_data
        self.val = val_data
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.opt = Adam(model.parameters(), lr=cfg.lr)
        self.epoch = 0
        self.log = []
        model.set_target_stats(train_data.rel, train_data.root)
        model.set_input_stats(train_data.frames, mirrored=cfg.flip)

    def train_epoch(self):
        cfg, model, data = self.cfg, self.model, self.data
        lr = exp_lr_decay(cfg.lr, self.epoch, cfg.decay)
        self.opt.lr = lr
        model.train()
        perm = self.rng.permutation(len(data))
        n_batches = max(1, len(data) // cfg.batch_size)
        total = 0.0
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            inp = data.model_input(idx)
            frames, rel, root = inp.frames, data.rel[idx], data.root[idx]
            if cfg.flip:
                mask = self.rng.random(len(idx)) < 0.5
                if mask.any():
                    frames, rel, root = frames.copy(), rel.copy(), root.copy()
                    frames[mask], rel[mask], root[mask] = flip_batch(frames[mask], rel[mask], root[mask],
                                                                     model.joint_set)
            rel, root = model.encode_targets(rel, root)
            batch = type(inp)(frames, inp.mode, inp.theta, inp.h)
            with Tape() as tape:
                p_rel, p_root = model.forward_std(batch)
                value = loss(p_rel, p_root, rel, root, cfg.pose_weight, cfg.traj_weight)
            v = float(value.data.reshape(()))
            if not np.isfinite(v):
                raise NonFiniteLoss(self.epoch, b)
            self.opt.zero_grad()
            tape.backward(value)
            self.opt.step()
            total += v
        row = {"epoch": self.epoch, "lr": lr, "train_loss": total / n_batches}
        if self.val is not None and len(self.val):
            row["val_mpjpe_mm"], row["val_mrpe_mm"] = evaluate(model, self.val)
        else:
            row["val_mpjpe_mm"] = row["val_mrpe_mm"] = float("nan")
        self.log.append(row)
        log.info("epoch %d lr %.6g loss %.6f val mpjpe %.1f mrpe %.1f", self.epoch, lr, row["train_loss"],
                 row["val_mpjpe_mm"], row["val_mrpe_mm"])
        self.epoch += 1
        return row

    def run(self, epochs=None, checkpoint_dir=None):
        stop = self.cfg.epochs if epochs is None else min(self.cfg.epochs, self.epoch + epochs)
        while self.epoch < stop:
            self.train_epoch()
            if checkpoint_dir is not None:
                self.save(Path(checkpoint_dir) / f"epoch_{self.epoch - 1:03d}.json")
        return self.log

    # -- checkpoints -------------------------------------------------------

    def state(self):
        tensors = dict(self.model.state_dict())
        tensors.update(self.opt.state_dict())
        meta = {
            "epoch": self.epoch,
            "adam_t": self.opt.t,
            "model": self.model.config(),
            "train": self.cfg.to_dict(),
            "rng_data": self.rng.bit_generator.state,
            "rng_model": self.model.rng.bit_generator.state,
            "log": self.log,
        }
        return tensors, meta

    def save(self, path):
        tensors, meta = self.state()
        save_checkpoint(path, tensors, meta)

    def restore(self, path):
        tensors, meta = load_checkpoint(path)
        self.model.load_state_dict(tensors)
        self.opt.load_state_dict(tensors, meta["adam_t"])
        self.rng.bit_generator.state = meta["rng_data"]
        self.model.rng.bit_generator.state = meta["rng_model"]
        self.epoch = int(meta["epoch"])
        self.log = list(meta["log"])


def train(model, dataset, cfg, val=None, checkpoint_dir=None, resume=None):
    """Train ``model`` in place; returns ``(model, log rows)``."""
    trainer = Trainer(model, dataset, cfg, val)
    if resume is not None:
        trainer.restore(resume)
    trainer.run(checkpoint_dir=checkpoint_dir)
    return model, trainer.log


def load_model(path):
    """Rebuild a model from a checkpoint written by :class:`Trainer`."""
    tensors, meta = load_checkpoint(path)
    m = meta["model"]
    model = LiftingModel(m["joint_set"], m["input_mode"], m["enable_camera_embedding"], m["width"],
                         m["dropout"], m["seed"], m["precision"])
    model.load_state_dict(tensors)
    model.rng.bit_generator.state = meta["rng_model"]
    model.eval()
    return model, meta


def log_csv(rows, extra=None):
    extra = extra or {}
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=[*LOG_FIELDS, *extra], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**{k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_FIELDS}, **extra})
    return buf.getvalue()
