import numpy as np
import pytest

from meshsplat.errors import EmptyDataset
from meshsplat.gaussians import sigmoid
from meshsplat.losses import psnr
from meshsplat.meshing import extract_mesh
from meshsplat.rasterizer import rasterize
from meshsplat.synth import synth_scene
from meshsplat.train import (Stage1State, TrainConfig, activate,
                             densify_and_prune, desk_scale_config, init_stage1,
                             load_stage1, load_stage2, save_stage1,
                             save_stage2, stage2_render_at, train_stage1,
                             train_stage2)


def tiny_cfg(**kw):
    base = dict(iterations=40, warm_up=10, init_points=60, eval_interval=20,
                densify_from=10_000, mlp_hidden=16, spatial_freqs=4,
                temporal_freqs=3, mesh_resolution=14, handle_count=8,
                sh_degree=0)
    base.update(kw)
    return desk_scale_config(**base)


@pytest.fixture(scope="module")
def tiny_dataset():
    ds, _, _ = synth_scene("static-sphere", resolution=24, frames=4, seed=0)
    return ds


class TestConfig:
    def test_defaults_follow_published_table(self):
        cfg = TrainConfig()
        assert cfg.iterations == 40_000
        assert cfg.warm_up == 3_000
        assert cfg.position_lr_init == 1.6e-4
        assert cfg.position_lr_final == 1.6e-6
        assert cfg.position_lr_max_steps == 80_000
        assert cfg.feature_lr == 2.5e-3
        assert cfg.opacity_lr == 5e-2
        assert cfg.scaling_lr == 1e-3
        assert cfg.rotation_lr == 1e-3
        assert cfg.vertices_lr == 1.6e-4
        assert cfg.alpha_lr == 1e-4
        assert cfg.dssim_weight == 0.2
        assert cfg.densify_interval == 100
        assert cfg.densify_grad_threshold == 2e-4
        assert cfg.densify_until == 50_000
        assert cfg.opacity_reset_interval == 3_000
        assert cfg.percent_dense == 0.01
        assert cfg.mlp_weight_decay == 5e-4

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"bogus_knob": 1})

    def test_invalid_rates_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(feature_lr=0.0)


class TestDensify:
    def make_state(self, cfg):
        st = init_stage1(cfg)
        return st

    def test_untouched_without_signal(self):
        cfg = tiny_cfg()
        st = self.make_state(cfg)
        n = len(st.params["mu"])
        densify_and_prune(st, cfg, extent=3.0)
        assert len(st.params["mu"]) == n

    def test_clone_branch(self):
        # small-scale Gaussian above the published 2e-4 threshold clones
        cfg = tiny_cfg()
        st = self.make_state(cfg)
        n = len(st.params["mu"])
        st.params["log_scale"][:] = np.log(0.001)  # below percent_dense * extent
        st.grad_accum[0] = 10 * cfg.densify_grad_threshold
        st.grad_denom[0] = 1.0
        densify_and_prune(st, cfg, extent=3.0)
        assert len(st.params["mu"]) == n + 1

    def test_split_branch(self):
        cfg = tiny_cfg()
        st = self.make_state(cfg)
        n = len(st.params["mu"])
        st.params["log_scale"][:] = np.log(0.5)  # above percent_dense * extent
        st.grad_accum[0] = 10 * cfg.densify_grad_threshold
        st.grad_denom[0] = 1.0
        densify_and_prune(st, cfg, extent=3.0)
        # original removed, two children appended
        assert len(st.params["mu"]) == n + 1
        assert np.abs(np.exp(st.params["log_scale"][-1]) - 0.5 / 1.6).max() < 1e-12

    def test_prune_branch(self):
        cfg = tiny_cfg()
        st = self.make_state(cfg)
        n = len(st.params["mu"])
        st.params["opacity_logit"][3] = np.log(0.001 / 0.999)
        densify_and_prune(st, cfg, extent=3.0)
        assert len(st.params["mu"]) == n - 1


class TestStage1:
    def test_zero_iterations_returns_initial(self, tiny_dataset):
        cfg = tiny_cfg(iterations=0, warm_up=0)
        st0 = init_stage1(cfg)
        mu0 = st0.params["mu"].copy()
        st = train_stage1(tiny_dataset, cfg, state=st0)
        assert np.array_equal(st.params["mu"], mu0)

    def test_empty_dataset(self):
        cfg = tiny_cfg()
        ds, _, _ = synth_scene("static-sphere", resolution=16, frames=2, seed=0)
        for f in ds.frames:
            f.split = "test"
        with pytest.raises(EmptyDataset):
            train_stage1(ds, cfg)

    def test_seed_determinism(self, tiny_dataset):
        a = train_stage1(tiny_dataset, tiny_cfg())
        b = train_stage1(tiny_dataset, tiny_cfg())
        assert a.metrics == b.metrics
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_loss_decreases(self, tiny_dataset):
        cfg = tiny_cfg(iterations=200, eval_interval=100)
        st = train_stage1(tiny_dataset, cfg)
        assert st.metrics[-1]["loss"] < st.metrics[0]["loss"]

    def test_resume_bit_identical(self, tiny_dataset, tmp_path):
        from dataclasses import replace

        cfg30 = tiny_cfg(iterations=20, eval_interval=10)
        st = train_stage1(tiny_dataset, cfg30)
        save_stage1(tmp_path / "mid.ckpt", st, cfg30)

        cfg60 = replace(cfg30, iterations=40)
        full = train_stage1(tiny_dataset, cfg60)

        resumed_state, _ = load_stage1(tmp_path / "mid.ckpt")
        resumed = train_stage1(tiny_dataset, cfg60, state=resumed_state)
        for k in full.params:
            assert np.array_equal(full.params[k], resumed.params[k])
        assert full.metrics[-1] == resumed.metrics[-1]
        for wa, wb in zip(full.field.net.weights, resumed.field.net.weights):
            assert np.array_equal(wa, wb)


class TestStage2:
    @pytest.fixture(scope="class")
    def stage1_result(self):
        ds, _, _ = synth_scene("static-sphere", resolution=24, frames=4, seed=0)
        cfg = tiny_cfg(iterations=250, warm_up=100, init_points=150,
                       eval_interval=250)
        st = train_stage1(ds, cfg)
        mesh = extract_mesh(activate(st.params), 14, 0.3)
        return ds, cfg, st, mesh

    def test_static_scene_matches_rest_bake(self, stage1_result):
        # zero hover field + static scene: the timeline path must render
        # within 0.5 dB of directly baking the rest model
        ds, cfg, st, mesh = stage1_result
        from meshsplat.train import init_stage2

        st2 = init_stage2(mesh, st.field, cfg)
        fr = ds.test_frames[0]
        via_path = stage2_render_at(st2, fr.camera, fr.time, cfg).color
        st2.model.mesh.deformed = mesh.vertices.copy()
        st2.model.refresh_hover()
        rest_cloud, _ = st2.model.bake_current()
        direct = rasterize(rest_cloud, fr.camera).color
        gt = fr.get_image()
        assert abs(psnr(via_path, gt) - psnr(direct, gt)) <= 0.5

    def test_rdf_off_equals_zero_hover_bake(self, stage1_result):
        ds, cfg, st, mesh = stage1_result
        from dataclasses import replace

        cfg_off = replace(cfg, iterations=10, warm_up=0, rdf_enabled=False)
        st2 = train_stage2(mesh.copy(), st.field, ds, cfg_off)
        model = st2.model
        fr = ds.test_frames[0]
        a = stage2_render_at(st2, fr.camera, fr.time, cfg_off).color
        # manually: same bake with hover zeroed and hover disabled
        model.ads.clear_hover()
        from meshsplat.adsorb import bake

        cloud, _ = bake(model.mesh, model.ads, use_hover=False)
        b = rasterize(cloud, fr.camera).color
        assert np.array_equal(a, b)

    def test_stage2_improves(self, stage1_result):
        ds, cfg, st, mesh = stage1_result
        from dataclasses import replace

        cfg2 = replace(cfg, iterations=120, warm_up=0, eval_interval=60)
        st2 = train_stage2(mesh.copy(), st.field, ds, cfg2)
        assert st2.metrics[-1]["loss"] < st2.metrics[0]["loss"]

    def test_stage2_checkpoint_round_trip(self, stage1_result, tmp_path):
        ds, cfg, st, mesh = stage1_result
        from dataclasses import replace

        cfg2 = replace(cfg, iterations=15, warm_up=0)
        st2 = train_stage2(mesh.copy(), st.field, ds, cfg2)
        save_stage2(tmp_path / "s2.ckpt", st2, cfg2)
        back, cfg_back = load_stage2(tmp_path / "s2.ckpt")
        assert np.array_equal(back.model.ads.alpha, st2.model.ads.alpha)
        assert np.array_equal(back.model.mesh.vertices, st2.model.mesh.vertices)
        fr = ds.test_frames[0]
        a = stage2_render_at(st2, fr.camera, 0.3, cfg2).color
        b = stage2_render_at(back, fr.camera, 0.3, cfg_back).color
        assert np.array_equal(a, b)

    def test_stage2_resume_bit_identical(self, stage1_result, tmp_path):
        ds, cfg, st, mesh = stage1_result
        from dataclasses import replace

        cfg_a = replace(cfg, iterations=10, warm_up=0, eval_interval=5)
        mid = train_stage2(mesh.copy(), st.field, ds, cfg_a)
        save_stage2(tmp_path / "mid.ckpt", mid, cfg_a)
        cfg_b = replace(cfg_a, iterations=20)
        full = train_stage2(mesh.copy(), st.field, ds, cfg_b)
        resumed_state, _ = load_stage2(tmp_path / "mid.ckpt")
        resumed = train_stage2(None, None, ds, cfg_b, state=resumed_state)
        assert np.array_equal(full.model.ads.alpha, resumed.model.ads.alpha)
        assert np.array_equal(full.model.mesh.vertices,
                              resumed.model.mesh.vertices)
        assert full.metrics[-1] == resumed.metrics[-1]
