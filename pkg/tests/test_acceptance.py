"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import contextlib
import dataclasses
import math
import time

import numpy as np
import pytest
import torch
from scipy import stats

from conftest import TINY_GEN, TOY_DISC, build_dataset, sharp_blurred_pair
from oracles import central_fd_check, conv_out, q_complex_single, ssim_single, uiqi_single
from pancolorgan import metrics, pipeline
from pancolorgan.dataset import PatchSource, synthetic_scene
from pancolorgan.discriminator import DiscriminatorConfig, build_discriminator, discriminator_forward
from pancolorgan.generator import GeneratorConfig, build_generator, generator_forward
from pancolorgan.inference import infer_full, infer_reduced, infer_scene_tiled
from pancolorgan.layers import state_hash
from pancolorgan.losses import LossConfig, l1_reconstruction, ragan_pair_loss, vanilla_gan_losses
from pancolorgan.pipeline import AugmentMode, AugmentSpec, make_bundle, patch_rng
from pancolorgan.trainer import TrainConfig, collate, init_state, is_finite_history, train_loop, train_step

LN2 = math.log(2)


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(number, title, budget_s):
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield
            status = "PASS"
        finally:
            took = time.perf_counter() - start
            if took > budget_s:
                status = "FAIL"
            with capsys.disabled():
                print(f"\n[{status}] criterion {number}: {title} ({took:.1f}s, budget {budget_s}s)")
        assert took <= budget_s, f"criterion {number} took {took:.1f}s"
    return run


def test_1_loss_closed_forms(criterion, rng):
    with criterion(1, "loss closed forms", 1):
        for c in (-3.0, 0.0, 2.5):
            s = np.full(8, c)
            assert abs(ragan_pair_loss(s, s).item() - 2 * LN2) < 1e-9
        zero = vanilla_gan_losses(np.zeros(8), np.zeros(8))
        assert abs(zero["d_loss"].item() - 2 * LN2) < 1e-9
        assert abs(zero["g_loss"].item() - LN2) < 1e-9
        a, b = rng.normal(size=16), rng.normal(size=16)
        for k in (-100.0, 0.3, 1e3):
            assert abs(ragan_pair_loss(a + k, b + k).item() - ragan_pair_loss(a, b).item()) < 1e-9


def test_2_gradient_verification(criterion):
    with criterion(2, "finite-difference gradient checks", 120):
        gen = build_generator(GeneratorConfig(base_channels=4)).double().train()
        g = torch.Generator().manual_seed(0)
        guide = torch.rand(2, 1, 16, 16, dtype=torch.float64, generator=g) * 2 - 1
        ms = torch.rand(2, 4, 16, 16, dtype=torch.float64, generator=g) * 2 - 1
        target = torch.rand(2, 4, 16, 16, dtype=torch.float64, generator=g) * 2 - 1
        err = central_fd_check(lambda: (gen(guide, ms) - target).abs().mean(), gen.parameters(),
                               step=1e-6, max_per_tensor=6)
        assert err < 1e-3, f"generator {err}"

        # five stride-2 stages need 64 px for a non-empty score map
        disc = build_discriminator(DiscriminatorConfig(widths=(2, 2, 4, 4, 4))).double().train()
        stack = torch.rand(2, 9, 64, 64, dtype=torch.float64, generator=g)
        err = central_fd_check(lambda: disc(stack).pow(2).mean(), disc.parameters(), step=1e-6, max_per_tensor=8)
        assert err < 1e-3, f"discriminator {err}"

        r = torch.randn(2, 1, 7, 7, dtype=torch.float64, generator=g).requires_grad_(True)
        f = torch.randn(2, 1, 7, 7, dtype=torch.float64, generator=g).requires_grad_(True)
        for name, fn in [("ragan_d", lambda: ragan_pair_loss(r, f)), ("ragan_g", lambda: ragan_pair_loss(f, r)),
                         ("vanilla_d", lambda: vanilla_gan_losses(r, f)["d_loss"]),
                         ("vanilla_g", lambda: vanilla_gan_losses(r, f)["g_loss"]),
                         ("l1", lambda: l1_reconstruction(r, f))]:
            err = central_fd_check(fn, [r, f], step=1e-6)
            assert err < 1e-4, f"{name} {err}"


def test_3_architecture_contracts(criterion):
    with criterion(3, "generator/discriminator shape contracts", 30):
        g = torch.Generator().manual_seed(0)
        out = generator_forward(build_generator(), torch.rand(2, 1, 256, 256, generator=g) * 2 - 1,
                                torch.rand(2, 4, 256, 256, generator=g) * 2 - 1, "train")
        assert out.shape == (2, 4, 256, 256) and out.abs().max().item() < 1
        disc = build_discriminator()
        for n in (64, 128, 256):
            size = n
            for _ in range(5):
                size = conv_out(size, 4, 2, 1)
            size = conv_out(size, 4, 1, 1)
            scores = discriminator_forward(disc, torch.rand(1, 9, n, n, generator=g))
            assert scores.shape == (1, 1, size, size)
        assert size == 7


def test_4_pipeline_contracts(criterion, tmp_path):
    with criterion(4, "pipeline contracts", 60):
        draws = np.array([int(patch_rng(11, f"patch{i}").integers(20, 80, endpoint=True)) for i in range(10_000)])
        assert draws.min() >= 20 and draws.max() <= 80
        assert stats.chisquare(np.bincount(draws - 20, minlength=61)).pvalue > 0.001

        a = build_dataset(tmp_path / "a", 6, 64, seed=5)
        b = build_dataset(tmp_path / "b", 6, 64, seed=5)
        for ea, eb in zip(a.entries, b.entries):
            for role in ea.files:
                assert a.path(ea, role).read_bytes() == b.path(eb, role).read_bytes()

        src_a, src_b = PatchSource(a, load_pan=True), PatchSource(b, load_pan=True)
        rd = AugmentSpec(AugmentMode.RANDOM_DOWNSAMPLE, rng_seed=3)
        for spec in (AugmentSpec(), rd):
            for i in range(len(a)):
                bundle = src_a.bundle(i, spec)
                assert 20 <= bundle.meta.downsample_size_used <= 80 or spec is not rd
                mean = bundle.y_ms.data.mean(axis=2)
                assert np.abs(bundle.x_gms.data[:, :, 0] - mean).max() < 1e-9
                assert np.array_equal(bundle.x_ms.data, src_b.bundle(i, spec).x_ms.data)


def test_5_metric_oracles(criterion, rng):
    with criterion(5, "metric oracles", 60):
        x = rng.uniform(0.05, 1, (64, 64, 4))
        assert abs(metrics.sam(x, x)) < 1e-9 and abs(metrics.ergas(x, x)) < 1e-9
        for value in (metrics.scc(x, x), metrics.uiqi(x[:, :, 0], x[:, :, 0]), metrics.qave(x, x),
                      metrics.q2n(x, x), metrics.ssim(x, x)):
            assert abs(value - 1) < 1e-9
        assert metrics.psnr(x, x) == metrics.PSNR_INF

        assert abs(metrics.ergas(np.full((4, 4, 1), 104.0), np.full((4, 4, 1), 100.0), 4) - 1) < 1e-9
        assert abs(metrics.psnr(np.full((8, 8), 0.1), np.zeros((8, 8)), 1.0) - 20) < 1e-9
        p, r = np.zeros((1, 1, 4)), np.zeros((1, 1, 4))
        p[..., 0], r[..., 1] = 1, 1
        assert abs(metrics.sam(p, r) - 90) < 1e-9

        u, v = rng.uniform(0, 1, (32, 32)), rng.uniform(0, 1, (32, 32))
        assert abs(metrics.uiqi(u, v) - uiqi_single(u, v)) < 1e-9
        s, t = rng.uniform(0, 1, (11, 11)), rng.uniform(0, 1, (11, 11))
        assert abs(metrics.ssim(s, t) - ssim_single(s, t)) < 1e-9
        c, d = rng.uniform(0, 1, (32, 32, 2)), rng.uniform(0, 1, (32, 32, 2))
        assert abs(metrics.q2n(c, d) - q_complex_single(c, d)) < 1e-6


def test_6_sharpness_direction(criterion):
    with criterion(6, "blurred reduced PAN beats plain reduced PAN", 10):
        pan, ms = sharp_blurred_pair(np.random.default_rng(6))
        plain, blurred = metrics.sharpness_report(pan, ms)
        for key in ("psnr", "scc", "ssim"):
            assert blurred[key] > plain[key], key


TOY_STEPS = 300


def toy_cfg(**kw):
    base = dict(batch_size=8, epochs=math.ceil(TOY_STEPS / 8), max_steps=TOY_STEPS,
                generator=TINY_GEN, discriminator=TOY_DISC)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.slow
def test_7_end_to_end_toy_training(criterion, tmp_path):
    with criterion(7, "toy end-to-end training", 900):
        manifest = build_dataset(tmp_path / "data", 64, 64, seed=7)
        cfg = toy_cfg()
        state = train_loop(cfg, manifest, tmp_path / "run")
        assert state.step == TOY_STEPS and is_finite_history(state)
        final = list(state.history)[-1]
        assert final["l_rec"] < 0.05, final

        half = TrainConfig.from_dict({**cfg.to_dict(), "max_steps": TOY_STEPS // 2})
        train_loop(half, manifest, tmp_path / "resumed")
        resumed = train_loop(cfg, manifest, tmp_path / "resumed",
                             resume_from=tmp_path / "resumed" / f"ckpt_step{TOY_STEPS // 2:07d}")
        assert state_hash(resumed.generator) == state_hash(state.generator)
        assert state_hash(resumed.discriminator) == state_hash(state.discriminator)

        l1_cfg = toy_cfg(loss=LossConfig(alpha=0.0))
        bundles = [PatchSource(manifest).bundle(i, l1_cfg.augment) for i in range(8)]
        full, plain = init_state(l1_cfg), init_state(l1_cfg)
        train_step(full, bundles, l1_cfg)
        plain.generator.train()
        fake = plain.generator(collate(bundles, "x_gms"), collate(bundles, "x_ms"))
        plain.opt_g.zero_grad()
        l1_reconstruction(fake, collate(bundles, "y_ms")).backward()
        plain.opt_g.step()
        delta = max((a - b).abs().max().item()
                    for a, b in zip(full.generator.parameters(), plain.generator.parameters()))
        assert delta <= 1e-9


def test_8_mode_separation(criterion, tmp_path, monkeypatch):
    with criterion(8, "mode separation counters", 60):
        manifest = build_dataset(tmp_path / "data", 16, 64)
        calls = []
        real = pipeline.degrade_random
        monkeypatch.setattr(pipeline, "degrade_random", lambda *a: calls.append(1) or real(*a))
        reads = {}
        for mode in ("pancolorgan", "pancolorgan_rd", "pansrgan"):
            calls.clear()
            cfg = TrainConfig(mode=mode, batch_size=8, epochs=1, generator=TINY_GEN, discriminator=TOY_DISC)
            state = train_loop(cfg, manifest, tmp_path / mode)
            reads[mode] = (dict(state.role_reads), len(calls))
        assert reads["pansrgan"][0].get("x_pan") == 16 and "x_gms" not in reads["pansrgan"][0]
        for mode in ("pancolorgan", "pancolorgan_rd"):
            assert reads[mode][0].get("x_gms") == 16 and "x_pan" not in reads[mode][0]
        assert [reads[m][1] for m in ("pancolorgan", "pancolorgan_rd", "pansrgan")] == [0, 16, 0]


def test_9_inference_equivalence(criterion):
    with criterion(9, "inference equivalence", 60):
        model = build_generator(GeneratorConfig(base_channels=4))
        ms, pan = synthetic_scene(np.random.default_rng(9), 32)
        bundle = make_bundle(ms, pan)
        swapped = dataclasses.replace(bundle, x_pan=bundle.x_gms)
        assert np.array_equal(infer_reduced(model, swapped, "pan").data, infer_reduced(model, bundle, "gms").data)

        ms, pan = synthetic_scene(np.random.default_rng(10), 128)
        tiled = infer_scene_tiled(model, pan, ms, tile=256, overlap=0).data
        full = infer_full(model, pan, ms).data
        margin = 64  # beyond the generator's receptive field and the bicubic support
        for r in (0, 256):
            for c in (0, 256):
                window = np.s_[r + margin:r + 256 - margin, c + margin:c + 256 - margin]
                assert np.array_equal(tiled[window], full[window])
