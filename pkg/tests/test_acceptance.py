"""The eight acceptance criteria at their stated tolerances and time limits.

Run on its own with ``pytest tests/test_acceptance.py -v``; the terminal
summary ends with one PASS/FAIL line per criterion.
"""

import json
import math
import time

import numpy as np
import pytest

from raylift import cli
from raylift import geometry as g
from raylift import metrics as M
from raylift import synthbench as sb
from raylift.autodiff import Tensor, gradcheck, nn, ops
from raylift.autodiff.gradcheck import analytic_grad, relative_error
from raylift.experiments import AblationConfig, IntrinsicConfig, ablation_protocol, intrinsic_protocol
from raylift.liftnet import RFRH_HEIGHT, LiftingModel, ModelInput, loss, rfrh_localize


def rig(rng):
    pos = [rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(0.3, 8.0)]
    return g.extrinsics_from_pose(pos, rng.uniform(-math.pi, math.pi), rng.uniform(-0.4, 1.3))


def intrinsics(rng):
    f = rng.uniform(400, 2500)
    return g.CameraIntrinsics(f, f * rng.uniform(0.95, 1.05), rng.uniform(300, 700), rng.uniform(300, 700), 1000, 1000)


@pytest.mark.criterion(1, "geometry suite")
def test_criterion_1_geometry(detail):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = dict.fromkeys(("invariance", "round_trip", "distance", "ground", "height_pitch"), 0.0)
    for _ in range(1000):
        extr = rig(rng)
        ncs = g.build_ncs(extr)
        # a point in front of the camera within 0.5..20 m
        d = rng.uniform(0.5, 20.0)
        p_cam = np.array([rng.uniform(-0.5, 0.5) * d, rng.uniform(-0.5, 0.5) * d, d])
        p_w = g.camera_to_world(g.Pose3D(p_cam[None], "CCS"), extr)
        a, b = intrinsics(rng), intrinsics(rng)
        ra = g.decouple_intrinsics(g.project(p_w, a, extr), a).directions
        rb = g.decouple_intrinsics(g.project(p_w, b, extr), b).directions
        worst["invariance"] = max(worst["invariance"], float(np.max(np.abs(ra - rb))))

        pts = np.vstack([p_w.xyz, rng.normal(scale=4.0, size=(1, 3))])
        n = g.world_to_normalized(g.Pose3D(pts, "WCS"), extr, ncs)
        back = g.unnormalize(n, extr, ncs).xyz
        worst["round_trip"] = max(worst["round_trip"], float(np.max(np.abs(back - pts))))
        d0 = np.linalg.norm(pts[0] - pts[1])
        d1 = np.linalg.norm(n.xyz[0] - n.xyz[1])
        worst["distance"] = max(worst["distance"], abs(d1 - d0) / d0)

        ground = np.array([[rng.uniform(-20, 20), rng.uniform(-20, 20), 0.0]])
        yn = g.world_to_normalized(g.Pose3D(ground, "WCS"), extr, ncs).xyz[0, 1]
        worst["ground"] = max(worst["ground"], abs(float(yn)))

        h, th = rng.uniform(0.0, 10.0), rng.uniform(-1.2, 1.2)
        e2 = g.extrinsics_from_pose([rng.uniform(-9, 9), rng.uniform(-9, 9), h], rng.uniform(-math.pi, math.pi), th)
        err = max(abs(g.camera_height(e2) - h), abs(g.camera_pitch(e2) - th))
        worst["height_pitch"] = max(worst["height_pitch"], err)
    secs = time.perf_counter() - t0
    detail(", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {secs:.2f}s")
    assert worst["invariance"] <= 1e-9
    assert worst["round_trip"] <= 1e-12
    assert worst["distance"] <= 1e-12
    assert worst["ground"] <= 1e-9
    assert worst["height_pitch"] <= 1e-12
    assert secs < 5.0


@pytest.mark.criterion(2, "dataset counts")
def test_criterion_2_dataset_counts(tmp_path, capsys, detail):
    t0 = time.perf_counter()
    cfg_file = tmp_path / "bench.json"
    # 30 s walkers; a coarse stride keeps the files small, the camera grids
    # do not depend on it
    cfg_file.write_text(json.dumps({"benchmark": {"duration_s": 30.0, "stride": 150}}))
    code = cli.main(["synth", "--config", str(cfg_file), "--out", str(tmp_path / "data")])
    summary = json.loads(capsys.readouterr().out)
    assert code == 0
    cams = summary["cameras"]
    worst = 0
    keypoints = 0
    for split in ("train", "test_extrinsic", "test_intrinsic"):
        with open(tmp_path / "data" / f"{split}.jsonl") as fh:
            header = json.loads(fh.readline())
            w, h = header["cameras"][0]["intrinsics"]["width"], header["cameras"][0]["intrinsics"]["height"]
            for line in fh:
                px = np.asarray(json.loads(line)["pixels"])
                keypoints += px.size // 2
                out = np.maximum.reduce([-px[..., 0], px[..., 0] - w, -px[..., 1], px[..., 1] - h])
                worst = max(worst, float(out.max()))
    secs = time.perf_counter() - t0
    detail(f"cameras {cams['train']}/{cams['test_extrinsic']}/{cams['test_intrinsic']}, "
           f"{keypoints} keypoints, worst out-of-frame margin {worst:.3g}px, {secs:.1f}s")
    assert (cams["train"], cams["test_extrinsic"], cams["test_intrinsic"]) == (324, 126, 100)
    assert worst <= 0.0
    assert secs < 120.0


def _fixed_weights(fn):
    w = Tensor(np.random.default_rng(99).normal(size=fn().shape))
    return lambda: ops.sum(ops.mul(fn(), w))


def _op_checks(rng):
    t = lambda *s: Tensor(rng.normal(size=s), requires_grad=True)
    a, b, c3, bias = t(4, 5), t(5, 3), t(2, 4, 5), t(5)
    same = t(4, 5)
    cat_b = t(2, 6, 5)
    relu_in = Tensor(np.where(np.abs(x := rng.normal(size=(5, 6))) < 0.05, 0.3, x), requires_grad=True)
    bn = nn.BatchNorm1d(5)
    bn.gamma.data = rng.normal(size=5)
    bn_x = t(4, 3, 5)
    saved = bn.buf_mean.copy(), bn.buf_var.copy()

    def bn_fn():
        bn.buf_mean[:], bn.buf_var[:] = saved
        return bn(bn_x)

    conv = nn.TemporalConv(4, 3, 3, 3, rng)
    conv_x = t(2, 9, 4)
    drop_x = t(6, 8)
    return {
        "matmul": (lambda: ops.matmul(a, b), [a, b]),
        "matmul_batched": (lambda: ops.matmul(c3, b), [c3, b]),
        "add": (lambda: ops.add(a, same), [a, same]),
        "add_bias": (lambda: ops.add(a, bias), [a, bias]),
        "sub": (lambda: ops.sub(a, same), [a, same]),
        "mul": (lambda: ops.mul(a, same), [a, same]),
        "scale": (lambda: ops.scale(a, -1.7), [a]),
        "concat": (lambda: ops.concat([c3, cat_b], axis=1), [c3, cat_b]),
        "slice": (lambda: ops.slice(cat_b, 1, 1, 5), [cat_b]),
        "take": (lambda: ops.take(cat_b, [5, 0, 0, 2], 1), [cat_b]),
        "reshape": (lambda: ops.reshape(c3, (8, 5)), [c3]),
        "relu": (lambda: ops.relu(relu_in), [relu_in]),
        "sum": (lambda: ops.sum(c3, axis=1), [c3]),
        "mean": (lambda: ops.mean(c3, axis=2), [c3]),
        "l2_norm_per_row": (lambda: ops.l2_norm_per_row(c3), [c3]),
        "batchnorm1d": (bn_fn, [bn_x, bn.gamma, bn.beta]),
        "dropout": (lambda: ops.dropout(drop_x, 0.3, True, np.random.default_rng(5)), [drop_x]),
        "temporal_conv1d": (lambda: conv(conv_x), [conv_x, conv.weight, conv.bias]),
    }


@pytest.mark.criterion(3, "autodiff suite")
def test_criterion_3_autodiff(detail):
    t0 = time.perf_counter()
    rng = np.random.default_rng(31)
    errors = {}
    for name, (fn, params) in _op_checks(rng).items():
        errors[name] = gradcheck(_fixed_weights(fn), params)

    # full model loss, float64, every parameter tensor probed at random entries
    model = LiftingModel("h36m14", "ray-ncs", True, width=8, dropout=0.25, seed=3, precision="float64")
    n = 6
    inp = ModelInput(rng.normal(size=(n, 9, 14, 3)), "ray-ncs", rng.uniform(0, 0.6, n), rng.uniform(1, 5, n))
    gt_rel, gt_root = rng.normal(size=(n, 13, 3)), rng.normal(size=(n, 3))
    state = model.rng.bit_generator.state
    bufs = [b.copy() for _, b in model.named_buffers()]

    def model_loss():
        model.rng.bit_generator.state = state
        for (_, b), s in zip(model.named_buffers(), bufs):
            b[...] = s
        rel, root = model.forward_std(inp)
        return loss(rel, root, gt_rel, gt_root)

    model.train()
    params = model.parameters()
    ana = analytic_grad(model_loss, params)
    eps, picked_a, picked_n = 1e-5, [], []
    for p, ga in zip(params, ana):
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + eps
            hi = float(model_loss().data.reshape(()))
            flat[i] = old - eps
            lo = float(model_loss().data.reshape(()))
            flat[i] = old
            picked_n.append((hi - lo) / (2 * eps))
            picked_a.append(ga.reshape(-1)[i])
    errors["full_model_loss"] = relative_error([np.array(picked_a)], [np.array(picked_n)])
    secs = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    detail(f"{len(errors)} checks, worst {worst} {errors[worst]:.1e}, {len(picked_a)} model entries, {secs:.1f}s")
    assert all(e < 1e-4 for e in errors.values()), errors
    assert secs < 60.0


def _ground_ray(root, extr):
    ncs = g.build_ncs(extr)
    p = g.world_to_normalized(g.Pose3D(root[None], "WCS"), extr, ncs).xyz[0]
    d = p - ncs.t_c2n
    return g.RayPose((d / d[2])[None], "NCS", ncs.t_c2n), ncs


@pytest.mark.criterion(4, "RFRH oracle")
def test_criterion_4_rfrh(detail):
    t0 = time.perf_counter()
    rng = np.random.default_rng(44)
    worst = 0.0
    for _ in range(1000):
        root = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), RFRH_HEIGHT])
        extr = g.orbit_camera(np.zeros(3), rng.uniform(0, 2 * math.pi), rng.uniform(0.05, 0.7), rng.uniform(2, 15))
        ray, ncs = _ground_ray(root, extr)
        est = g.unnormalize(g.Pose3D(rfrh_localize(ray, joint=0)[None], "NCS"), extr, ncs).xyz[0]
        worst = max(worst, float(np.max(np.abs(est - root))))
    # seated subject: root 0.45 m above the ground, camera at 1.6 m
    errs = []
    for dist in np.linspace(2.0, 20.0, 37):
        extr = g.look_at([dist, 0.0, 1.6], [0.0, 0.0, 0.45])
        ray, ncs = _ground_ray(np.array([0.0, 0.0, 0.45]), extr)
        est = g.unnormalize(g.Pose3D(rfrh_localize(ray, joint=0)[None], "NCS"), extr, ncs).xyz[0]
        errs.append(float(np.linalg.norm(est - [0.0, 0.0, 0.45])))
    secs = time.perf_counter() - t0
    monotone = all(b > a for a, b in zip(errs, errs[1:]))
    detail(f"max exact-height error {worst:.1e} m, seated error {errs[0]:.2f} -> {errs[-1]:.2f} m, {secs:.2f}s")
    assert worst <= 1e-9
    assert monotone
    assert secs < 10.0


@pytest.mark.criterion(5, "intrinsic robustness")
def test_criterion_5_intrinsic_robustness(detail):
    t0 = time.perf_counter()
    cfg = IntrinsicConfig()
    res = intrinsic_protocol(cfg)
    secs = time.perf_counter() - t0
    modes = res["modes"]
    parts = [f"{k}: identical={v['bit_identical']} spread={100 * v['mrpe_spread']:.1f}%" for k, v in modes.items()]
    detail(f"{res['train_cameras']} train cams, {cfg.epochs} epochs, " + ", ".join(parts) + f", {secs / 60:.1f} min")
    assert res["train_cameras"] <= 24 and cfg.epochs <= 20
    assert modes["ray-ccs"]["bit_identical"] and modes["ray-ncs+ce"]["bit_identical"]
    assert modes["pixel"]["mrpe_spread"] > 0.25
    assert secs < 15 * 60


@pytest.mark.criterion(6, "ablation ordering")
def test_criterion_6_ablation(detail):
    t0 = time.perf_counter()
    cfg = AblationConfig()
    res = ablation_protocol(cfg)
    secs = time.perf_counter() - t0
    means = " > ".join(f"{r['arm']} {r['mrpe_mm_mean']:.0f}+-{r['mrpe_mm_std']:.0f}" for r in res["rows"])
    gain = res["ce_gain"]
    detail(f"{len(res['seeds'])} seeds, MRPE mm {means}; CE gain {gain['mean_mm']:.1f}+-{gain['std_mm']:.1f} mm "
           f"(per seed {', '.join(f'{x:.1f}' for x in gain['per_seed_mm'])}), {secs / 60:.1f} min")
    assert len(res["seeds"]) >= 3
    assert [r["arm"] for r in res["rows"]] == ["pixel", "ray-ccs", "ray-ncs", "ray-ncs+ce"]
    assert res["strictly_decreasing"]
    assert secs < 60 * 60


@pytest.mark.criterion(7, "metric unit tests")
def test_criterion_7_metrics(detail):
    rng = np.random.default_rng(7)
    pose = rng.uniform(-1, 1, size=(200, 14, 3)) + [0.0, 0.0, 5.0]
    wcs = g.Pose3D(pose, "WCS")
    zeros = (M.mpjpe(wcs, wcs), M.abs_mpjpe(wcs, wcs), M.mrpe(pose[:, 0], pose[:, 0]))
    five = M.mrpe(np.zeros((1, 3)), np.array([[0.003, 0.004, 0.0]]))
    # human-scale poses; shifting both, or only the prediction, must leave
    # MPJPE unchanged up to the rounding of the shifted inputs
    inv = 0.0
    for _ in range(20):
        gt = rng.normal(scale=0.3, size=(50, 14, 3))
        pred = gt + rng.normal(scale=0.05, size=gt.shape)
        shift = rng.uniform(-5, 5, size=3)
        a = M.mpjpe_per_sample(pred, gt)
        inv = max(inv, float(np.abs(M.mpjpe_per_sample(pred + shift, gt + shift) - a).max()),
                  float(np.abs(M.mpjpe_per_sample(pred + shift, gt) - a).max()))
    detail(f"identity {zeros}, 3-4-5 MRPE {five!r} mm, translation residual {inv:.1e} mm")
    assert zeros == (0.0, 0.0, 0.0)
    assert five == 5.0
    assert inv <= 1e-12


@pytest.mark.criterion(8, "determinism")
def test_criterion_8_determinism(tmp_path, detail):
    synth = {
        "splits": [{"name": "train", "subjects": [{"name": "A", "seed": 1, "limb_total": 3.6}],
                    "blocks": [{"rotation": {"lo": 0.0, "hi": 240.0, "num": 3},
                                "pitch": {"lo": 10.0, "hi": 10.0, "num": 1},
                                "translation": {"lo": 6.0, "hi": 6.0, "num": 1}}]}],
        "duration_s": 4.0,
        "stride": 2,
        "keypoint_std": 1.0,
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": synth, "data": str(tmp_path / "d1"), "seed": 11,
                               "train": {"epochs": 3, "batch_size": 32, "width": 16}}))
    for d in ("d1", "d2"):
        assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    synth_same = all((tmp_path / "d1" / f).read_bytes() == (tmp_path / "d2" / f).read_bytes()
                     for f in ("train.jsonl", "manifest.json"))
    for r in ("r1", "r2"):
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / r)]) == 0
    files = ("checkpoint.json", "train_log.csv", "checkpoints/epoch_000.json", "checkpoints/epoch_002.json")
    train_same = all((tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes() for f in files)
    resume = json.dumps(str(tmp_path / "r1" / "checkpoints" / "epoch_000.json"))
    assert cli.main(["train", "--config", str(cfg), "--set", f"resume={resume}", "--out", str(tmp_path / "r3")]) == 0
    resume_same = all((tmp_path / "r1" / f).read_bytes() == (tmp_path / "r3" / f).read_bytes()
                      for f in ("checkpoints/epoch_001.json", "checkpoints/epoch_002.json", "train_log.csv"))
    detail(f"synth identical={synth_same}, train identical={train_same}, resume identical={resume_same}")
    assert synth_same and train_same and resume_same
