"""KL schedule, inner/outer update mechanics, and the training loop."""

import json
import math
import random

import pytest
import torch

from conftest import micro_config
from sketchret.config import TrainConfig
from sketchret.episodes import build_batch, sample_task
from sketchret.errors import ContractViolation, DatasetError, NonFiniteLossError
from sketchret.checkpoint import load_checkpoint, load_model
from sketchret.model import DisentangledVAE, init_parameters
from sketchret.seeding import derive_seed, torch_generator
from sketchret.trainer import (
    clip_gradients,
    hard_negative_map,
    inner_update,
    lambda1_schedule,
    outer_step,
    train,
    warmup_step,
)


class TestLambda1Schedule:
    def test_default_endpoints(self):
        cfg = TrainConfig()
        assert lambda1_schedule(0, cfg) == pytest.approx(0.001)
        assert lambda1_schedule(199, cfg) == pytest.approx(1.8)

    def test_constant_before_ramp(self):
        cfg = TrainConfig()
        assert lambda1_schedule(124, cfg) == pytest.approx(0.001)
        assert lambda1_schedule(125, cfg) == pytest.approx(0.001)  # ramp start, t=0

    def test_monotone_over_ramp(self):
        cfg = TrainConfig()
        values = [lambda1_schedule(e, cfg) for e in range(125, 200)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_single_epoch_ramp(self):
        cfg = TrainConfig(epochs=5, lambda1_ramp_last_epochs=1,
                          lambda1_start=0.1, lambda1_end=0.9)
        assert lambda1_schedule(3, cfg) == pytest.approx(0.1)
        assert lambda1_schedule(4, cfg) == pytest.approx(0.9)

    def test_out_of_range_rejected(self):
        cfg = TrainConfig()
        for epoch in (-1, 200, 10_000):
            with pytest.raises(ContractViolation):
                lambda1_schedule(epoch, cfg)


class TestClipGradients:
    def test_identity_under_threshold(self):
        g = [torch.tensor([3.0]), torch.tensor([4.0])]  # total norm 5
        out = clip_gradients(g, max_norm=10.0)
        assert torch.equal(out[0], g[0]) and torch.equal(out[1], g[1])

    def test_rescales_to_max_norm(self):
        g = [torch.tensor([30.0]), torch.tensor([40.0])]  # total norm 50
        out = clip_gradients(g, max_norm=10.0)
        total = math.sqrt(sum(float(t.pow(2).sum()) for t in out))
        assert total == pytest.approx(10.0)
        assert out[0].item() == pytest.approx(6.0)

    def test_stays_differentiable(self):
        w = torch.tensor([100.0], requires_grad=True)
        (clipped,) = clip_gradients([w * 2], max_norm=1.0)
        assert clipped.grad_fn is not None
        clipped.sum().backward()
        assert w.grad is not None


class TestInnerUpdate:
    def test_single_quadratic_step(self):
        w = torch.tensor(1.0, dtype=torch.float64, requires_grad=True)
        fast = inner_update({"w": w}, lambda p: p["w"] ** 2, alpha=0.1)
        assert fast["w"].item() == pytest.approx(0.8)  # w(1 - 2a)

    def test_two_steps_compound(self):
        w = torch.tensor(1.0, dtype=torch.float64, requires_grad=True)
        fast = inner_update({"w": w}, lambda p: p["w"] ** 2, alpha=0.1, inner_steps=2)
        assert fast["w"].item() == pytest.approx(0.8 ** 2)

    def test_fast_weights_carry_graph(self):
        w = torch.tensor(2.0, requires_grad=True)
        fast = inner_update({"w": w}, lambda p: p["w"] ** 2, alpha=0.1)
        assert fast["w"].grad_fn is not None
        (g,) = torch.autograd.grad(fast["w"], [w])
        assert g.item() == pytest.approx(0.8)  # d[w(1-2a)]/dw

    def test_gradient_clip_limits_step(self):
        w = torch.tensor(1.0, dtype=torch.float64, requires_grad=True)
        fast = inner_update({"w": w}, lambda p: 100.0 * p["w"] ** 2,
                            alpha=0.01, grad_clip=10.0)  # raw grad 200 -> 10
        assert fast["w"].item() == pytest.approx(1.0 - 0.01 * 10.0)

    def test_adaptive_first_step_is_sign_step(self):
        w = torch.tensor(1.0, dtype=torch.float64, requires_grad=True)
        fast = inner_update({"w": w}, lambda p: p["w"] ** 2, alpha=0.05, adaptive=True)
        # bias-corrected adaptive step reduces to alpha * sign(grad) at step 1
        assert fast["w"].item() == pytest.approx(1.0 - 0.05, abs=1e-6)

    def test_non_finite_loss_raises(self):
        w = torch.tensor(0.0, dtype=torch.float64, requires_grad=True)
        with pytest.raises(NonFiniteLossError):
            inner_update({"w": w}, lambda p: torch.log(p["w"]) * float("inf"), alpha=0.1)

    def test_zero_steps_rejected(self):
        w = torch.tensor(1.0, requires_grad=True)
        with pytest.raises(ContractViolation):
            inner_update({"w": w}, lambda p: p["w"] ** 2, alpha=0.1, inner_steps=0)

    def test_unused_parameter_gets_zero_gradient(self):
        w = torch.tensor(1.0, requires_grad=True)
        u = torch.tensor(5.0, requires_grad=True)
        fast = inner_update({"w": w, "u": u}, lambda p: p["w"] ** 2, alpha=0.1)
        assert fast["u"].item() == pytest.approx(5.0)


@pytest.fixture(scope="module")
def mini_training(tiny_splits):
    """Model, psi, and prepared episode batches at the tiny-dataset scale."""
    cfg = micro_config()
    model = DisentangledVAE.from_config(cfg)
    init_parameters(model, torch_generator("trainer-test"))
    psi = torch.nn.Parameter(torch.zeros(model.zinv_head_numel()))
    split = tiny_splits[0]
    prepared = []
    for i in range(2):
        seed = derive_seed("trainer-test-ep", i)
        ep = sample_task(split, random.Random(seed), seed=seed)
        trn = build_batch(ep.trn_pairs, ep.trn_negatives, split, random.Random(1))
        val = build_batch(ep.val_pairs, ep.val_negatives, split, random.Random(2))
        prepared.append((trn, val, seed))
    return cfg, model, psi, split, prepared


class TestWarmupStep:
    def test_rejected_after_warmup_epochs(self, mini_training):
        cfg, model, _, _, prepared = mini_training
        opt = torch.optim.Adam(model.parameters(), lr=cfg.warmup_lr)
        with pytest.raises(ContractViolation):
            warmup_step(model, prepared[0][0], cfg.loss_weights(), opt,
                        epoch=cfg.warmup_epochs, config=cfg,
                        generator=torch_generator(0))

    def test_allowed_anytime_without_meta_phase(self, mini_training):
        cfg, model, _, _, prepared = mini_training
        cfg_no_meta = micro_config(no_meta=True)
        opt = torch.optim.Adam(model.parameters(), lr=cfg.warmup_lr)
        terms = warmup_step(model, prepared[0][0], cfg.loss_weights(), opt,
                            epoch=99, config=cfg_no_meta,
                            generator=torch_generator(0))
        assert math.isfinite(terms.total.item())


class TestOuterStep:
    def test_updates_parameters_and_clamps_psi(self, mini_training):
        cfg, model, psi, _, prepared = mini_training
        opt = torch.optim.Adam(list(model.parameters()) + [psi], lr=1e-3)
        before = {n: p.clone() for n, p in model.named_parameters()}
        stats = outer_step(model, psi, prepared, cfg.loss_weights(), cfg, opt)
        assert stats["episodes"] == 2
        assert stats["skipped_episodes"] == 0
        assert math.isfinite(stats["loss"])
        assert (psi >= 0).all()
        changed = [n for n, p in model.named_parameters()
                   if not torch.equal(before[n], p)]
        assert changed

    def test_ft_spreads_receive_meta_gradients(self, mini_training):
        cfg, model, psi, _, prepared = mini_training
        spreads = [t for ft in model.encoder.fts
                   for t in (ft.bias_spread, ft.scale_spread)]
        before = [t.clone() for t in spreads]
        opt = torch.optim.Adam(list(model.parameters()) + [psi], lr=1e-3)
        outer_step(model, psi, prepared, cfg.loss_weights(), cfg, opt)
        assert any(not torch.equal(a, b) for a, b in zip(before, spreads))

    def test_non_finite_episode_skipped_without_update(self, mini_training):
        cfg, model, psi, _, prepared = mini_training
        trn, val, seed = prepared[0]
        bad_trn = type(trn)(
            sketches=trn.sketches * float("nan"),
            photos=trn.photos,
            negatives=trn.negatives,
            cross_idx=trn.cross_idx,
        )
        before = {n: p.clone() for n, p in model.named_parameters()}
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        stats = outer_step(model, psi, [(bad_trn, val, seed)],
                           cfg.loss_weights(), cfg, opt)
        assert stats["skipped_episodes"] == 1
        assert math.isnan(stats["loss"])
        for n, p in model.named_parameters():
            assert torch.equal(before[n], p), n


class TestHardNegativeMap:
    def test_excludes_own_task_and_caps_length(self, mini_training):
        cfg, model, _, split, _ = mini_training
        hard = hard_negative_map(model, split, top=5)
        insts = {p.instance_id for p in split.points}
        assert set(hard) == insts
        for inst, ranked in hard.items():
            assert inst not in ranked
            assert len(ranked) <= 5
            assert set(ranked) <= insts


class TestTrainLoop:
    def test_artifacts_written(self, micro_run):
        cfg, out, ckpt = micro_run
        assert ckpt.exists()
        assert (out / "config.json").exists()
        lines = (out / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == cfg.epochs

    def test_log_phases_follow_schedule(self, micro_run):
        cfg, out, _ = micro_run
        records = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        for rec in records:
            expected = "warmup" if rec["epoch"] < cfg.warmup_epochs else "meta"
            assert rec["phase"] == expected
            assert math.isfinite(rec["loss"])
            assert rec["lambda1"] >= cfg.lambda1_start

    def test_eval_metrics_recorded(self, micro_run):
        cfg, out, _ = micro_run
        records = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert all("eval" in r for r in records)  # eval_every=1
        assert all(0.0 <= r["eval"]["acc@1"] <= 1.0 for r in records)

    def test_checkpoint_restores_and_encodes(self, micro_run):
        cfg, _, ckpt_path = micro_run
        model, ckpt = load_model(ckpt_path)
        assert ckpt.config == cfg
        assert ckpt.psi is not None
        assert (ckpt.psi >= 0).all()
        assert set(ckpt.optimizers) == {"warmup", "meta"}
        code = model.encode(torch.zeros(1, 1, cfg.image_size, cfg.image_size))
        assert code.z_inv.shape == (1, cfg.d)

    def test_epoch_counter_saved(self, micro_run):
        cfg, out, _ = micro_run
        last = load_checkpoint(out / "last.ckpt")
        assert last.extra["epoch"] == cfg.epochs - 1

    def test_no_meta_run_stays_in_warmup(self, tiny_dataset_dir, tmp_path):
        cfg = micro_config(epochs=2, warmup_epochs=1, no_meta=True,
                           eval_every=0, checkpoint_every=2)
        out = tmp_path / "nometa"
        train(cfg, tiny_dataset_dir, out)
        records = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert [r["phase"] for r in records] == ["warmup", "warmup"]

    def test_invalid_config_rejected_before_work(self, tiny_dataset_dir, tmp_path):
        cfg = micro_config(warmup_epochs=10)  # exceeds epochs=3
        with pytest.raises(ContractViolation):
            train(cfg, tiny_dataset_dir, tmp_path / "bad")
