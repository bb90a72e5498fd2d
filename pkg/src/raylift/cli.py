"""Command-line entry point: ``raylift <command> [--config FILE] [flags]``.

Settings are resolved in three layers: built-in defaults, then the JSON
``--config`` file (merged section by section), then command-line flags
(``--seed``, ``--out``, ``--axis``, ``--jobs`` and any number of
``--set section.key=value``).  The resolved configuration is hashed and the
hash is written into every output file.  Progress goes to stderr through
``logging``; data outputs never carry timestamps, so reruns are
byte-identical.

Exit codes: 0 success, 1 user error (bad config, missing file, any
:class:`~raylift.errors.RayLiftError`), 2 internal error.  Failures print one
JSON line ``{"error": ..., "message": ..., "exit_code": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics as M
from . import synthbench as sb
from .errors import RayLiftError

log = logging.getLogger("raylift")

COMMANDS = ("synth", "train", "eval", "sweep", "baseline-rfrh", "ablate")

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "jobs": 1,
    "axis": None,
    # dataset generation: a full SynthConfig dict, or the benchmark layout
    # with a few overrides when "synth" is null
    "synth": None,
    "benchmark": {"duration_s": 30.0, "stride": 1, "joint_set": "h36m14"},
    # directory written by ``synth``
    "data": None,
    "train_split": "train",
    "val_split": None,
    "eval_split": "test_extrinsic",
    "model": {"input_mode": "ray-ncs", "camera_embedding": True},
    "train": {},
    "checkpoint": None,
    "resume": None,
    "predictions": None,
    "flip_tta": True,
    "noise": {"family": "pitch", "stds": [0.0, 0.5, 1.0, 2.0]},
    "rfrh_height": None,
    "ablation": {},
}

# keys that only choose where, how fast, or from which exact state things run
_UNHASHED = ("out", "jobs", "resume")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="raylift", description="Ray-based 3D pose lifting toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--axis", choices=M.SWEEP_AXES, help="sweep axis")
    p.add_argument("--jobs", type=int, help="worker processes where a command supports it")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one setting, e.g. train.epochs=5 (value parsed as JSON)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _assign(cfg, dotted, raw):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def resolve_config(args):
    """Defaults, then the config file, then flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        if key.split(".")[0] not in DEFAULTS:
            raise UsageError(f"unknown setting {key!r}")
        _assign(cfg, key, raw)
    for name in ("seed", "out", "axis", "jobs"):
        v = getattr(args, name)
        if v is not None:
            cfg[name] = v
    cfg["command"] = args.command
    return cfg


def run_hash(cfg):
    return sb.config_hash({k: v for k, v in cfg.items() if k not in _UNHASHED})


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg, key):
    if cfg.get(key) in (None, ""):
        raise UsageError(f"setting {key!r} is required for {cfg['command']}")
    return cfg[key]


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# helpers shared by several commands


def synth_config(cfg):
    if cfg["synth"] is not None:
        sc = sb.SynthConfig.from_dict(cfg["synth"])
    else:
        sc = sb.benchmark_config(**cfg["benchmark"])
    from dataclasses import replace

    return replace(sc, seed=int(cfg["seed"]))


def load_split(cfg, key):
    name = _require(cfg, key)
    data_dir = _existing(_require(cfg, "data"), "dataset directory")
    return sb.read_dataset(_existing(data_dir / f"{name}.jsonl", f"split {name!r}"))


def train_config(cfg):
    from .liftnet import TrainConfig

    fields = dict(cfg["train"])
    fields.setdefault("seed", int(cfg["seed"]))
    try:
        return TrainConfig(**fields)
    except TypeError as exc:
        raise UsageError(f"bad train settings: {exc}") from None


def _load_checkpoint(cfg):
    from .liftnet import load_model

    return load_model(_existing(_require(cfg, "checkpoint"), "checkpoint"))


def _predictions_from_model(cfg, model, split):
    from .liftnet import build_lift_data, predict_dataset

    data = build_lift_data(split.records, split.cameras, model.input_mode)
    return predict_dataset(model, data, split.cameras, flip_tta=bool(cfg["flip_tta"])), data.keys


def _record_key(r):
    return (r.camera_id, r.subject, int(r.frame), float(r.scale))


def write_predictions(path, split, pred, digest):
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "predictions", "split": split.name, "config_hash": digest}) + "\n")
        for r, p in zip(split.records, pred):
            fh.write(json.dumps({"camera_id": r.camera_id, "subject": r.subject, "frame": int(r.frame),
                                 "scale": float(r.scale), "pred_wcs": p.tolist()}) + "\n")


def read_predictions(path, split):
    """Predictions aligned with ``split.records``; every record needs one."""
    table = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if d.get("type") == "predictions":
                continue
            table[(d["camera_id"], d["subject"], int(d["frame"]), float(d["scale"]))] = d["pred_wcs"]
    missing = [k for k in map(_record_key, split.records) if k not in table]
    if missing:
        raise UsageError(f"{len(missing)} records have no prediction, e.g. {missing[0]}")
    return np.array([table[_record_key(r)] for r in split.records], dtype=np.float64)


def _split_keys(split):
    """Sweep keys from camera provenance, as in :func:`build_lift_data`."""
    cams = {c.id: c for c in split.cameras}
    keys = {}
    for axis in M.SWEEP_AXES:
        if axis == "scale":
            continue
        vals = [cams[r.camera_id].provenance.get(axis) for r in split.records]
        if all(v is not None for v in vals):
            keys[axis] = np.array(vals, dtype=np.float64)
    keys["scale"] = np.array([r.scale for r in split.records])
    return keys


def _predicted_report(cfg, split, label):
    if cfg["predictions"]:
        pred = read_predictions(_existing(cfg["predictions"], "prediction file"), split)
        keys = _split_keys(split)
    else:
        model, _ = _load_checkpoint(cfg)
        pred, keys = _predictions_from_model(cfg, model, split)
    gt = np.stack([r.gt_wcs for r in split.records])
    return M.EvalReport.from_predictions(pred, gt, keys=keys, label=label), pred


def _summary_csv(report, path, extra):
    rows = [{"metric": k, "mean_mm": v, "n": report.n, **extra} for k, v in sorted(report.aggregate.items())]
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["metric", "mean_mm", "n", *extra])
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg):
    sc = synth_config(cfg)
    out = _out_dir(cfg)
    manifest = sb.synthesize(sc, out)
    manifest["run_config_hash"] = run_hash(cfg)
    _dump(manifest, out / "manifest.json")
    return {
        "command": "synth",
        "config_hash": manifest["config_hash"],
        "cameras": {k: v["cameras"] for k, v in manifest["splits"].items()},
        "records": {k: v["records"] for k, v in manifest["splits"].items()},
        "out": str(out),
    }


def cmd_train(cfg):
    from threadpoolctl import threadpool_limits

    from .liftnet import Trainer, build_lift_data, build_model, log_csv

    tc = train_config(cfg)
    train_split = load_split(cfg, "train_split")
    mode = cfg["model"]["input_mode"]
    data = build_lift_data(train_split.records, train_split.cameras, mode)
    val = None
    if cfg["val_split"]:
        vs = load_split(cfg, "val_split")
        val = build_lift_data(vs.records, vs.cameras, mode)
    digest = run_hash(cfg)
    out = _out_dir(cfg)
    model = build_model(tc, train_split.joint_set, mode, bool(cfg["model"]["camera_embedding"]))
    trainer = Trainer(model, data, tc, val)
    if cfg["resume"]:
        trainer.restore(_existing(cfg["resume"], "checkpoint to resume"))
    # one BLAS thread keeps every reduction in a fixed order
    with threadpool_limits(limits=1):
        trainer.run(checkpoint_dir=out / "checkpoints")
    trainer.save(out / "checkpoint.json")
    extra = {"seed": tc.seed, "config_hash": digest}
    (out / "train_log.csv").write_text(log_csv(trainer.log, extra))
    summary = {"command": "train", "config_hash": digest, "dataset_config_hash": train_split.config_hash,
               "seed": tc.seed, "epochs": trainer.epoch, "samples": len(data),
               "parameters": model.num_parameters(), "final": trainer.log[-1] if trainer.log else None}
    _dump(summary, out / "train_summary.json")
    return summary


def cmd_eval(cfg):
    split = load_split(cfg, "eval_split")
    digest = run_hash(cfg)
    out = _out_dir(cfg)
    report, pred = _predicted_report(cfg, split, split.name)
    extra = {"split": split.name, "seed": cfg["seed"], "config_hash": digest}
    _dump({**report.to_dict(), **extra}, out / f"eval_{split.name}.json")
    _summary_csv(report, out / f"eval_{split.name}.csv", extra)
    write_predictions(out / f"predictions_{split.name}.jsonl", split, pred, digest)
    return {"command": "eval", **extra, "n": report.n, "aggregate_mm": report.aggregate}


def _noise_reports(cfg, split):
    from .liftnet import build_lift_data, predict_dataset

    model, _ = _load_checkpoint(cfg)
    family = cfg["noise"]["family"]
    gt = np.stack([r.gt_wcs for r in split.records])
    reports = []
    for k, std in enumerate(cfg["noise"]["stds"]):
        cams = [sb.add_camera_noise(c, family, float(std), seed=[int(cfg["seed"]), k, i])
                for i, c in enumerate(split.cameras)]
        data = build_lift_data(split.records, cams, model.input_mode, from_pixels=True)
        pred = predict_dataset(model, data, cams, flip_tta=bool(cfg["flip_tta"]))
        reports.append(M.EvalReport.from_predictions(pred, gt, keys=data.keys, label=f"{family}:{std}"))
    return reports


def cmd_sweep(cfg, axis=None):
    axis = axis or _require(cfg, "axis")
    if axis not in M.SWEEP_AXES:
        raise M.UnknownAxis(axis)
    split = load_split(cfg, "eval_split")
    digest = run_hash(cfg)
    out = _out_dir(cfg)
    if axis == "noise_std":
        reports = _noise_reports(cfg, split)
    else:
        reports = [_predicted_report(cfg, split, split.name)[0]]
    rows = M.sweep_aggregate(reports, axis)
    extra = {"axis": axis, "split": split.name, "seed": cfg["seed"], "config_hash": digest}
    stem = f"sweep_{split.name}_{axis}"
    M.write_rows_csv(rows, out / f"{stem}.csv", extra)
    _dump({**extra, "rows": rows}, out / f"{stem}.json")
    return {"command": "sweep", **extra, "buckets": len({r["axis_value"] for r in rows})}


def cmd_baseline_rfrh(cfg):
    from .liftnet import RFRH_HEIGHT, rfrh_dataset

    split = load_split(cfg, "eval_split")
    digest = run_hash(cfg)
    out = _out_dir(cfg)
    height = RFRH_HEIGHT if cfg["rfrh_height"] is None else float(cfg["rfrh_height"])
    est = rfrh_dataset(split.records, split.cameras, height)
    gt_root = np.stack([r.gt_wcs[0] for r in split.records])
    per = M.mrpe_per_sample(est, gt_root)
    report = M.EvalReport({"mrpe": per}, _split_keys(split), f"rfrh:{split.name}")
    extra = {"split": split.name, "assumed_height": height, "seed": cfg["seed"], "config_hash": digest}
    _dump({**report.to_dict(), **extra}, out / f"rfrh_{split.name}.json")
    _summary_csv(report, out / f"rfrh_{split.name}.csv", extra)
    if cfg["axis"]:
        rows = M.sweep_aggregate(report, cfg["axis"])
        M.write_rows_csv(rows, out / f"rfrh_{split.name}_{cfg['axis']}.csv", {"axis": cfg["axis"], **extra})
    return {"command": "baseline-rfrh", **extra, "n": report.n, "mrpe_mm": report.aggregate["mrpe"]}


def cmd_ablate(cfg):
    from .experiments import AblationConfig, ablation_protocol, write_ablation

    try:
        acfg = AblationConfig(**{"seed": int(cfg["seed"]), **cfg["ablation"]})
    except TypeError as exc:
        raise UsageError(f"bad ablation settings: {exc}") from None
    digest = run_hash(cfg)
    out = _out_dir(cfg)
    result = ablation_protocol(acfg, jobs=int(cfg["jobs"]))
    write_ablation(result, out, {"config_hash": digest})
    return {"command": "ablate", "config_hash": digest, "rows": result["rows"], "ce_gain": result["ce_gain"]}


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "baseline-rfrh": cmd_baseline_rfrh,
    "ablate": cmd_ablate,
}


def _fail(exc, code):
    line = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(line), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 1)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        result = HANDLERS[args.command](cfg)
    except (RayLiftError, UsageError, ValueError, OSError, KeyError) as exc:
        return _fail(exc, 1)
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        return _fail(exc, 2)
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
