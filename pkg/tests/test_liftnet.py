import math

import numpy as np
import pytest

from raylift import geometry as g
from raylift import liftnet as ln
from raylift import synthbench as sb
from raylift.autodiff import Tape, Tensor, ops
from raylift.autodiff.gradcheck import analytic_grad, relative_error
from raylift.errors import ModeMismatch, RayParallel, ShapeMismatch
from raylift.liftnet.train import predict_frame
from raylift.skeleton import flip_array, generate_walker

J = 14


@pytest.fixture(scope="module")
def toy():
    walk = generate_walker(4, 4.0, "h36m14", 3.6)
    block = sb.AugmentationConfig(rotation=sb.Axis(0.0, 120.0, 2), pitch=sb.Axis(8.0, 16.0, 2),
                                  translation=sb.Axis.fixed(6.0))
    cams = sb.build_cameras(sb.SplitConfig("toy", (block,), ()), sb.BASE_INTRINSICS, [walk])
    records = sb.materialize(walk, cams, k=4, stride=2)
    return walk, cams, records


def small_model(mode="ray-ncs", ce=True, width=8, precision="float64", dropout=0.25, seed=0):
    return ln.LiftingModel("h36m14", mode, ce, width=width, dropout=dropout, seed=seed, precision=precision)


def rand_input(rng, n=6, mode="ray-ncs"):
    d = 2 if mode == "pixel" else 3
    return ln.ModelInput(rng.normal(size=(n, 9, J, d)), mode, rng.uniform(0, 0.6, n), rng.uniform(1, 5, n))


def test_embedding_is_64d_and_eval_deterministic():
    m = small_model()
    m.eval()
    a = ln.embed_camera(ln.CameraEmbeddingInput(0.2, 2.5), m).data
    b = ln.embed_camera(ln.CameraEmbeddingInput(0.2, 2.5), m).data
    assert a.shape == (1, 64)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        ln.CameraEmbeddingInput(0.1, -1.0)


def test_embedding_gradient_matches_finite_differences():
    m = small_model(dropout=0.0)
    cam = Tensor(np.random.default_rng(0).normal(size=(5, 2)), requires_grad=True)
    w = Tensor(np.random.default_rng(1).normal(size=(5, 64)))
    params = [cam] + m.pose_net.embed.parameters()

    def fn():
        return ops.sum(ops.mul(m.pose_net.embed(cam), w))

    from raylift.autodiff import gradcheck

    assert gradcheck(fn, params) < 1e-4


def test_forward_shapes_and_receptive_field(toy):
    m = small_model()
    assert m.receptive_field == 9
    rel, root = ln.forward(m, np.random.default_rng(0).normal(size=(9, J, 3)), ln.CameraEmbeddingInput(0.2, 2.0))
    assert rel.shape == (J, 3) and root.shape == (1, 3)
    assert np.all(rel[0] == 0)
    with pytest.raises(ShapeMismatch):
        ln.forward(m, np.zeros((7, J, 3)), ln.CameraEmbeddingInput(0.2, 2.0))


def test_mode_checks():
    m = small_model("ray-ncs")
    rng = np.random.default_rng(0)
    with pytest.raises(ModeMismatch):
        m.predict(rand_input(rng, mode="pixel"))
    inp = rand_input(rng)
    with pytest.raises(ModeMismatch):
        m.predict(ln.ModelInput(inp.frames, "ray-ccs", inp.theta, inp.h))
    with pytest.raises(ModeMismatch):
        small_model("depth")


def expected_embedding_params(width):
    # two dense blocks (linear + batch-norm scale/shift) per head, plus the
    # decoder columns that read the 64 embedding features
    mlp = (2 * 64 + 64 + 2 * 64) + (64 * 64 + 64 + 2 * 64)
    return 2 * (mlp + 64 * width)


@pytest.mark.parametrize("width", [8, 64])
def test_camera_embedding_parameter_count(width):
    on = small_model(ce=True, width=width)
    off = small_model(ce=False, width=width)
    assert on.num_parameters() - off.num_parameters() == expected_embedding_params(width)
    assert on.embedding_size() == expected_embedding_params(width)


def test_camera_inputs_matter_only_with_embedding():
    rng = np.random.default_rng(1)
    inp = rand_input(rng)
    other = ln.ModelInput(inp.frames, inp.mode, inp.theta + 0.3, inp.h * 1.5)
    off = small_model(ce=False)
    a, b = off.predict(inp), off.predict(other)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    on = small_model(ce=True)
    # give the running statistics some spread so eval mode is non-degenerate
    on.train()
    on.forward_std(rand_input(rng, 64))
    a, b = on.predict(inp), on.predict(other)
    assert np.max(np.abs(a[1] - b[1])) > 1e-6


def test_flip_tta_is_equivariant():
    rng = np.random.default_rng(2)
    m = small_model()
    m.train()
    m.forward_std(rand_input(rng, 64))
    inp = rand_input(rng, 5)
    rel, root = predict_frame(m, inp.frames, inp.theta, inp.h, flip_tta=True)
    fr = flip_array(inp.frames, "h36m14")
    frel, froot = predict_frame(m, fr, inp.theta, inp.h, flip_tta=True)
    np.testing.assert_allclose(frel, flip_array(rel, "h36m14"), atol=1e-12)
    np.testing.assert_allclose(froot, root * [-1, 1, 1], atol=1e-12)


def test_loss_properties():
    rng = np.random.default_rng(3)
    gt_rel, gt_root = rng.normal(size=(4, J - 1, 3)), rng.normal(size=(4, 3))
    zero = ln.loss(Tensor(gt_rel), Tensor(gt_root), gt_rel, gt_root)
    assert float(zero.data.reshape(())) == 0.0
    err_rel, err_root = rng.normal(size=gt_rel.shape), rng.normal(size=gt_root.shape)
    one = float(ln.loss(Tensor(gt_rel + err_rel), Tensor(gt_root + err_root), gt_rel, gt_root).data.reshape(()))
    two = float(ln.loss(Tensor(gt_rel + 2 * err_rel), Tensor(gt_root + 2 * err_root), gt_rel, gt_root).data.reshape(()))
    assert one > 0 and two == pytest.approx(2 * one, rel=1e-12)
    with pytest.raises(ShapeMismatch):
        ln.loss(Tensor(gt_rel), Tensor(gt_root), gt_rel[:, :5], gt_root)
    p = Tensor(gt_rel + err_rel, requires_grad=True)
    q = Tensor(gt_root + err_root, requires_grad=True)
    from raylift.autodiff import gradcheck

    assert gradcheck(lambda: ln.loss(p, q, gt_rel, gt_root), [p, q]) < 1e-4


def sampled_numeric_grad(fn, tensors, rng, per_tensor=3, eps=1e-5):
    picks, num = [], []
    for t in tensors:
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        vals = []
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            hi = float(fn().data.reshape(()))
            flat[i] = old - eps
            lo = float(fn().data.reshape(()))
            flat[i] = old
            vals.append((hi - lo) / (2 * eps))
        picks.append(idx)
        num.append(np.array(vals))
    return picks, num


@pytest.mark.parametrize("mode,ce", [("ray-ncs", True), ("pixel", False)])
def test_full_model_loss_gradient(mode, ce):
    rng = np.random.default_rng(4)
    m = small_model(mode, ce, dropout=0.25)
    inp = rand_input(rng, 6, mode)
    gt_rel, gt_root = rng.normal(size=(6, J - 1, 3)), rng.normal(size=(6, 3))
    params = m.parameters()
    state = m.rng.bit_generator.state
    bufs = [b.copy() for _, b in m.named_buffers()]

    def fn():
        # identical dropout masks and batch-norm statistics on every call
        m.rng.bit_generator.state = state
        for (_, b), saved in zip(m.named_buffers(), bufs):
            b[...] = saved
        rel, root = m.forward_std(inp)
        return ln.loss(rel, root, gt_rel, gt_root)

    m.train()
    ana = analytic_grad(fn, params)
    picks, num = sampled_numeric_grad(fn, params, rng)
    ana_s = [a.reshape(-1)[i] for a, i in zip(ana, picks)]
    assert relative_error(ana_s, num) < 1e-4
    assert len(params) == len(ana)


def test_build_lift_data_frames(toy):
    walk, cams, records = toy
    by_id = {c.id: c for c in cams}
    ncs = ln.build_lift_data(records, cams, "ray-ncs")
    ccs = ln.build_lift_data(records, cams, "ray-ccs")
    pix = ln.build_lift_data(records, cams, "pixel")
    r = records[5]
    c = by_id[r.camera_id]
    n = g.build_ncs(c.extrinsics)
    np.testing.assert_allclose(ccs.frames[5], g.normalized_to_camera(g.RayPose(r.rays_ncs, "NCS", n.t_c2n), n).directions,
                               atol=1e-12)
    assert pix.frames.shape[-1] == 2 and np.all(np.abs(pix.frames) < 1.5)
    np.testing.assert_allclose(ncs.rel[5] + ncs.root[5], r.gt_ncs, atol=1e-12)
    for d in (ncs, ccs, pix):
        back = ln.to_world(d.rel + d.root[:, None], d.camera_ids, cams, d.mode)
        assert np.max(np.abs(back - d.gt_wcs)) < 1e-12
    assert set(ncs.keys) >= {"focal", "pitch", "rotation", "translation", "scale"}


def test_rays_from_pixels_match_stored_rays(toy):
    _, cams, records = toy
    stored = ln.build_lift_data(records, cams, "ray-ncs")
    again = ln.build_lift_data(records, cams, "ray-ncs", from_pixels=True)
    assert np.max(np.abs(stored.frames - again.frames)) < 1e-12
    np.testing.assert_array_equal(stored.root, again.root)


@pytest.mark.parametrize("mirrored", [False, True])
def test_input_stats_standardise_training_features(toy, mirrored):
    _, cams, records = toy
    data = ln.build_lift_data(records, cams, "ray-ncs")
    m = small_model()
    m.set_input_stats(data.frames, mirrored=mirrored)
    f = m.features(data.frames).reshape(-1, 4)
    mean = f.mean(axis=0)
    if mirrored:
        # only the y channels are centred; x keeps its offset from zero
        np.testing.assert_allclose(mean[1::2], 0.0, atol=1e-9)
        assert np.array_equal(m.buf_in_mean[0::2], np.zeros(2))
    else:
        np.testing.assert_allclose(mean, 0.0, atol=1e-9)
        np.testing.assert_allclose(f.std(axis=0), 1.0, atol=1e-9)
    assert abs(m.buf_in_mean[1]) > 0.05  # NCS ray heights carry an offset


def tiny_train_cfg(**kw):
    base = dict(epochs=5, batch_size=32, seed=1, width=16, precision="float64")
    base.update(kw)
    return ln.TrainConfig(**base)


def one_camera_data(toy, mode="ray-ncs"):
    walk, cams, _ = toy
    recs = sb.materialize(walk, cams[:1], k=4, stride=1)
    return ln.build_lift_data(recs, cams, mode)


def test_loss_decreases_on_one_camera(toy):
    data = one_camera_data(toy)
    cfg = tiny_train_cfg(dropout=0.0, flip=False)
    _, rows = ln.train(ln.build_model(cfg, "h36m14", "ray-ncs"), data, cfg)
    losses = [r["train_loss"] for r in rows]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_resume_reproduces_next_epoch(toy, tmp_path):
    data = one_camera_data(toy)
    cfg = tiny_train_cfg(epochs=3, precision="float32")
    full = ln.Trainer(ln.build_model(cfg, "h36m14", "ray-ncs"), data, cfg, data)
    full.run(checkpoint_dir=tmp_path)
    resumed = ln.Trainer(ln.build_model(cfg, "h36m14", "ray-ncs"), data, cfg, data)
    resumed.restore(tmp_path / "epoch_001.json")
    resumed.run()
    assert repr(resumed.log) == repr(full.log)
    for (n1, p1), (n2, p2) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    model, meta = ln.load_model(tmp_path / "epoch_002.json")
    assert meta["epoch"] == 3
    assert model.predict(data.model_input())[1].tobytes() == full.model.predict(data.model_input())[1].tobytes()


def test_training_is_deterministic_and_flip_flag_is_live(toy):
    data = one_camera_data(toy)
    cfg = tiny_train_cfg(epochs=2)
    a = ln.train(ln.build_model(cfg, "h36m14", "ray-ncs"), data, cfg)[1]
    b = ln.train(ln.build_model(cfg, "h36m14", "ray-ncs"), data, cfg)[1]
    assert repr(a) == repr(b)
    nf = tiny_train_cfg(epochs=2, flip=False)
    c = ln.train(ln.build_model(nf, "h36m14", "ray-ncs"), data, nf)[1]
    assert repr(c) != repr(a)


def test_non_finite_loss_aborts(toy):
    from raylift.errors import NonFiniteLoss

    data = one_camera_data(toy)
    data.frames = data.frames.copy()
    data.frames[3, 0, 0, 0] = np.nan
    cfg = tiny_train_cfg(epochs=1, batch_size=len(data))
    with pytest.raises(NonFiniteLoss) as exc:
        ln.train(ln.build_model(cfg, "h36m14", "ray-ncs"), data, cfg)
    assert exc.value.epoch == 0 and exc.value.batch == 0


def test_predict_absolute_improves_with_training(toy):
    walk, cams, records = toy
    data = one_camera_data(toy)
    cam = cams[0]
    recs = [r for r in records if r.camera_id == cam.id]
    px = np.stack([r.pixels for r in recs])
    gt = np.stack([r.gt_wcs for r in recs])
    cfg = tiny_train_cfg(epochs=15, batch_size=8, dropout=0.0)
    model = ln.build_model(cfg, "h36m14", "ray-ncs")
    trainer = ln.Trainer(model, data, cfg)
    before = ln.predict_absolute(model, px, cam.intrinsics, cam.extrinsics)
    trainer.run()
    after = ln.predict_absolute(model, px, cam.intrinsics, cam.extrinsics)
    assert after.frame is g.Frame.WCS
    err = lambda p: np.linalg.norm(p.xyz - gt, axis=-1).mean()
    assert err(after) < 0.5 * err(before)
    single = ln.predict_absolute(model, px[0], cam.intrinsics, cam.extrinsics)
    assert single.xyz.shape == (J, 3)


def test_identical_rays_from_different_intrinsics_give_identical_predictions(toy):
    walk, cams, _ = toy
    cam = cams[0]
    model = small_model(precision="float32")
    model.train()
    model.forward_std(rand_input(np.random.default_rng(0), 64))
    x = walk.frames[10:19]
    world = g.Pose3D(x, "WCS")
    a_intr = sb.BASE_INTRINSICS
    b_intr = a_intr.replace(fx=1100.0, fy=1098.0, cx=470.0, cy=530.0)
    pa = g.project(world, a_intr, cam.extrinsics).xy
    pb = g.project(world, b_intr, cam.extrinsics).xy
    assert not np.allclose(pa, pb)
    ra = ln.predict_absolute(model, pa, a_intr, cam.extrinsics).xyz
    rb = ln.predict_absolute(model, pb, b_intr, cam.extrinsics).xyz
    assert np.array_equal(ra, rb)


def ground_ray(root_world, extr):
    ncs = g.build_ncs(extr)
    p = g.world_to_normalized(g.Pose3D(root_world[None], "WCS"), extr, ncs).xyz[0]
    d = p - ncs.t_c2n
    return g.RayPose((d / d[2])[None], "NCS", ncs.t_c2n), ncs


def test_rfrh_exact_at_assumed_height():
    rng = np.random.default_rng(5)
    for _ in range(50):
        root = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), ln.RFRH_HEIGHT])
        extr = g.orbit_camera(np.zeros(3), rng.uniform(0, 2 * math.pi), rng.uniform(0.05, 0.6), rng.uniform(3, 14))
        ray, ncs = ground_ray(root, extr)
        est = ln.rfrh_localize(ray, joint=0)
        back = g.unnormalize(g.Pose3D(est[None], "NCS"), extr, ncs).xyz[0]
        assert np.max(np.abs(back - root)) <= 1e-9


def test_rfrh_matches_subject_height_when_told():
    extr = g.orbit_camera(np.zeros(3), 0.3, 0.3, 8.0)
    for height in (0.4, 0.7, 1.1):
        root = np.array([0.5, -0.2, height])
        ray, ncs = ground_ray(root, extr)
        est = ln.rfrh_localize(ray, assumed_height=height, joint=0)
        assert np.max(np.abs(g.unnormalize(g.Pose3D(est[None], "NCS"), extr, ncs).xyz[0] - root)) <= 1e-9


def test_rfrh_seated_error_grows_with_distance():
    cam_h, root_h, H = 1.6, 0.45, ln.RFRH_HEIGHT
    errs = []
    for dist in np.linspace(2.0, 14.0, 13):
        extr = g.look_at([dist, 0.0, cam_h], [0.0, 0.0, root_h])
        ray, ncs = ground_ray(np.array([0.0, 0.0, root_h]), extr)
        est = ln.rfrh_localize(ray, joint=0)
        err = np.linalg.norm(g.unnormalize(g.Pose3D(est[None], "NCS"), extr, ncs).xyz[0] - [0, 0, root_h])
        # line-plane oracle: the two plane crossings of the same ray
        slope = (cam_h - root_h) / dist
        expect = (H - root_h) * math.sqrt(1 + 1 / slope**2)
        assert err == pytest.approx(expect, rel=1e-9)
        errs.append(err)
    assert all(b > a for a, b in zip(errs, errs[1:]))


def test_rfrh_parallel_ray_rejected():
    ray = g.RayPose(np.array([[0.1, 0.0, 1.0]]), "NCS", np.array([0.0, -1.5, 0.0]))
    with pytest.raises(RayParallel):
        ln.rfrh_localize(ray, joint=0)


def test_rfrh_dataset_on_records(toy):
    walk, cams, records = toy
    est = ln.rfrh_dataset(records, cams)
    gt = np.stack([r.gt_wcs[0] for r in records])
    # the estimate lies on the true root ray
    by_id = {c.id: c for c in cams}
    for e, t, r in zip(est[:20], gt[:20], records[:20]):
        c = by_id[r.camera_id].extrinsics.center
        u, v = e - c, t - c
        assert np.linalg.norm(np.cross(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v)) < 1e-9
    assert np.allclose(est[:, 2], ln.RFRH_HEIGHT, atol=1e-9)
