"""Training-loop tests: the supervised encoder warm-up, label-safe
augmentation, the staged adversarial phase (freeze schedule, retention,
cosine decay, checkpoint/resume), and the cross-validated mapping phase."""

import dataclasses
import json
import os

import numpy as np
import pytest
import torch

from emgface import synthworld as sw
from emgface import trainer as tr
from emgface.config import (
    NetworkConfig,
    Phase1Config,
    Phase2Config,
    PretrainConfig,
    RunConfig,
    config_hash,
)
from emgface.face_model import build_toy_model
from emgface.networks import MappingMLP, parameter_checksum


def tiny_run_config(**overrides) -> RunConfig:
    cfg = RunConfig(
        networks=NetworkConfig(
            encoder_widths=(8, 16),
            generator_stem=8,
            generator_depth=16,
            generator_blocks=1,
            discriminator_widths=(8, 16, 16),
            mapper_hidden=32,
            mapper_layers=3,
        ),
        pretrain=PretrainConfig(images=96, epochs=2, batch_size=32),
        phase1=Phase1Config(stage_epochs=(1, 1), stage_retention=(0.5, 0.1), log_every=10),
        phase2=Phase2Config(batch_size=64, epochs=4, folds=3),
    )
    return dataclasses.replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# parameter-row layout and standardization constants
# ---------------------------------------------------------------------------


def test_param_target_row_layout():
    from emgface.face_model import FaceParams

    params = FaceParams(
        shape_coeffs=torch.full((8,), 1.0, dtype=torch.float64),
        expression=torch.full((8,), 2.0, dtype=torch.float64),
        eyelids=torch.full((2,), 3.0, dtype=torch.float64),
        jaw=torch.full((3,), 4.0, dtype=torch.float64),
        pose=torch.full((6,), 5.0, dtype=torch.float64),
    )
    row = tr.param_target_row(params)
    assert row.shape == (27,)
    assert torch.equal(row[0:8], torch.full((8,), 1.0, dtype=torch.float64))
    assert torch.equal(row[8:16], torch.full((8,), 2.0, dtype=torch.float64))
    assert torch.equal(row[16:18], torch.full((2,), 3.0, dtype=torch.float64))
    assert torch.equal(row[18:21], torch.full((3,), 4.0, dtype=torch.float64))
    assert torch.equal(row[21:27], torch.full((6,), 5.0, dtype=torch.float64))


def test_standardization_constants_match_world_sampler():
    """The per-dimension stds the warm-up loss divides by should agree with
    the empirical spread of the world parameter distribution."""
    rows = torch.stack(
        [tr.param_target_row(sw.sample_world_params(sw.derive_seed("std-check", i))) for i in range(3000)]
    )
    empirical = rows.std(dim=0).numpy()
    # Clamping shaves a few percent off the nominal normal sigmas.
    assert np.all(np.abs(empirical - tr._WORLD_STD) / tr._WORLD_STD < 0.10)


# ---------------------------------------------------------------------------
# cosine decay
# ---------------------------------------------------------------------------


def test_cosine_lr_endpoints_and_midpoint():
    assert tr.cosine_lr(2e-4, 0, 100) == pytest.approx(2e-4)
    assert tr.cosine_lr(2e-4, 50, 100) == pytest.approx(1e-4)
    assert tr.cosine_lr(2e-4, 100, 100) == pytest.approx(0.0, abs=1e-18)
    # Out-of-range steps clamp instead of turning the rate negative.
    assert tr.cosine_lr(2e-4, 150, 100) == pytest.approx(0.0, abs=1e-18)
    assert tr.cosine_lr(2e-4, 5, 0) == 2e-4


def test_cosine_lr_monotone_decreasing():
    values = [tr.cosine_lr(1.0, s, 200) for s in range(201)]
    assert all(a >= b for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def _checker_image(seed: int = 0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(64, 64, 3, generator=gen, dtype=torch.float32)


def test_augment_image_deterministic_in_seed():
    img = _checker_image()
    a = tr.augment_image(img, 1234, 0.9, 0.5, 0.5)
    b = tr.augment_image(img, 1234, 0.9, 0.5, 0.5)
    c = tr.augment_image(img, 1235, 0.9, 0.5, 0.5)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_augment_image_preserves_shape_and_range():
    img = _checker_image()
    for seed in range(8):
        out = tr.augment_image(img, seed, 0.85, 0.5, 0.5)
        assert out.shape == img.shape
        assert out.dtype == img.dtype
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
        assert out.is_contiguous()


def test_augment_image_disabled_is_identity():
    img = _checker_image()
    out = tr.augment_image(img, 99, 1.0, 0.0, 0.0)
    assert torch.equal(out, img)


def test_augment_image_flip_only_is_involution():
    img = _checker_image()
    # flip_prob=1 forces both flips; applying the same transform twice
    # recovers the input, confirming the flips touch no pixel values.
    once = tr.augment_image(img, 5, 1.0, 0.0, 1.0)
    twice = tr.augment_image(once, 5, 1.0, 0.0, 1.0)
    assert not torch.equal(once, img)
    assert torch.equal(twice, img)


# ---------------------------------------------------------------------------
# supervised warm-up
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_pretrain():
    cfg = tiny_run_config()
    model = build_toy_model(cfg.model)
    encoder, result = tr.pretrain_encoder(cfg, model)
    return cfg, model, encoder, result


def test_pretrain_runs_and_reports(tiny_pretrain):
    cfg, _, encoder, result = tiny_pretrain
    batches_per_epoch = cfg.pretrain.images // cfg.pretrain.batch_size
    assert result.steps == cfg.pretrain.epochs * batches_per_epoch
    assert np.isfinite(result.train_loss)
    assert np.isfinite(result.holdout_mse) and result.holdout_mse > 0
    assert result.holdout_threshold == cfg.pretrain.loss_threshold
    assert result.passed == (result.holdout_mse < result.holdout_threshold)


def test_pretrain_deterministic(tiny_pretrain):
    cfg, model, encoder, result = tiny_pretrain
    encoder2, result2 = tr.pretrain_encoder(cfg, model)
    assert parameter_checksum(encoder2) == parameter_checksum(encoder)
    assert result2.holdout_mse == result.holdout_mse


def test_encoder_checkpoint_round_trip(tiny_pretrain, tmp_path):
    cfg, _, encoder, result = tiny_pretrain
    path = tr.save_encoder_checkpoint(str(tmp_path), cfg, encoder, result)
    assert path.endswith("pretrain.ckpt") and os.path.exists(path)
    assert os.path.exists(path.replace(".ckpt", ".json"))
    loaded = tr.load_pretrained_encoder(path, cfg)
    assert parameter_checksum(loaded) == parameter_checksum(encoder)
    with open(path.replace(".ckpt", ".json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    assert manifest["config_hash"] == config_hash(cfg)
    assert manifest["holdout_mse"] == result.holdout_mse


def test_checkpoint_refuses_other_config(tiny_pretrain, tmp_path):
    cfg, _, encoder, result = tiny_pretrain
    path = tr.save_encoder_checkpoint(str(tmp_path), cfg, encoder, result)
    other = dataclasses.replace(cfg, seed=cfg.seed + 1)
    with pytest.raises(ValueError, match="refusing to mix runs"):
        tr.load_pretrained_encoder(path, other)


def test_load_checkpoint_rejects_unknown_format(tmp_path):
    path = str(tmp_path / "bogus.pt")
    torch.save({"format": "something-else/9"}, path)
    with pytest.raises(ValueError, match="unrecognized checkpoint format"):
        tr.load_checkpoint(path)


# ---------------------------------------------------------------------------
# adversarial phase
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trainer_world(tmp_path_factory):
    """A twice-repeated single-task two-participant dataset plus the
    warm-start encoder the adversarial phase builds on."""
    cfg = tiny_run_config()
    model = build_toy_model(cfg.model)
    spec = sw.WorldSpec(
        name="trainer-test",
        participants=2,
        tasks=("smile_open",),
        repetitions=2,
        snippet_seconds=0.7,
        resolution=cfg.model.resolution,
        seed=303,
    )
    root = tmp_path_factory.mktemp("trainer-world")
    data_dir = str(root / "dataset")
    sw.generate_dataset(model, spec, data_dir)
    index = sw.load_dataset_index(data_dir)
    encoder, _ = tr.pretrain_encoder(cfg, model)
    return cfg, model, index, encoder


def test_build_phase1_networks_copies_and_seeds(trainer_world):
    cfg, _, _, encoder = trainer_world
    nets = tr.build_phase1_networks(cfg, encoder)
    assert parameter_checksum(nets.enc_clean) == parameter_checksum(encoder)
    assert parameter_checksum(nets.enc_sensor) == parameter_checksum(encoder)
    # Deep copies: touching one encoder must not touch the other.
    with torch.no_grad():
        next(nets.enc_sensor.parameters()).add_(1.0)
    assert parameter_checksum(nets.enc_sensor) != parameter_checksum(nets.enc_clean)
    # Fresh generator/discriminator draws, deterministic in the config seed.
    nets2 = tr.build_phase1_networks(cfg, encoder)
    assert nets2.checksums()["gen_to_sensor"] == tr.build_phase1_networks(cfg, encoder).checksums()["gen_to_sensor"]
    assert nets2.checksums()["gen_to_sensor"] != nets2.checksums()["gen_to_clean"]
    assert nets2.checksums()["disc_clean"] != nets2.checksums()["disc_sensor"]


def test_phase1_freeze_schedule(trainer_world, tmp_path):
    cfg, model, index, encoder = trainer_world
    nets = tr.build_phase1_networks(cfg, encoder)
    trainer = tr.Phase1Trainer(cfg, model, index, nets, str(tmp_path))
    trainer._apply_freeze(0)
    assert not any(p.requires_grad for p in nets.enc_clean.parameters())
    assert not any(p.requires_grad for p in nets.enc_sensor.parameters())
    assert all(p.requires_grad for p in nets.gen_to_sensor.parameters())
    trainer._apply_freeze(1)
    assert not any(p.requires_grad for p in nets.enc_clean.parameters())
    assert all(p.requires_grad for p in nets.enc_sensor.parameters())
    trainer._apply_freeze(2)
    assert all(p.requires_grad for p in nets.enc_sensor.parameters())


def test_phase1_rejects_mismatched_schedules(trainer_world, tmp_path):
    cfg, model, index, encoder = trainer_world
    bad = dataclasses.replace(cfg, phase1=dataclasses.replace(cfg.phase1, stage_retention=(0.5,)))
    with pytest.raises(ValueError, match="equal length"):
        tr.Phase1Trainer(bad, model, index, tr.build_phase1_networks(cfg, encoder), str(tmp_path))
    bad = dataclasses.replace(cfg, phase1=dataclasses.replace(cfg.phase1, batch_size=2))
    with pytest.raises(ValueError, match="batch size 1"):
        tr.Phase1Trainer(bad, model, index, tr.build_phase1_networks(cfg, encoder), str(tmp_path))


@pytest.fixture(scope="module")
def phase1_straight_run(trainer_world, tmp_path_factory):
    cfg, model, index, encoder = trainer_world
    run_dir = str(tmp_path_factory.mktemp("phase1-straight"))
    nets = tr.build_phase1_networks(cfg, encoder)
    trainer = tr.Phase1Trainer(cfg, model, index, nets, run_dir)
    summary = trainer.train()
    return cfg, model, index, encoder, run_dir, summary


def test_phase1_smoke_checkpoints_and_logs(phase1_straight_run):
    cfg, _, index, _, run_dir, summary = phase1_straight_run
    assert summary["epochs_run"] == 2
    assert summary["total_steps"] == 2 * index.total_frames()
    # (1, 1) schedule: one epoch per stage, each in its stage directory.
    paths = [
        os.path.join(run_dir, "checkpoints", "stage0", "epoch000"),
        os.path.join(run_dir, "checkpoints", "stage1", "epoch000"),
    ]
    manifests = []
    for global_epoch, base in enumerate(paths):
        assert os.path.exists(base + ".ckpt")
        with open(base + ".json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        assert manifest["config_hash"] == config_hash(cfg)
        assert manifest["global_epoch"] == global_epoch
        assert set(manifest["parameter_checksums"]) == {
            "enc_clean",
            "enc_sensor",
            "gen_to_sensor",
            "gen_to_clean",
            "disc_clean",
            "disc_sensor",
        }
        manifests.append(manifest)
    first, second = manifests
    # The frozen clean encoder must be bit-identical across the whole run.
    assert first["parameter_checksums"]["enc_clean"] == second["parameter_checksums"]["enc_clean"]
    # The generators must actually train.
    assert first["parameter_checksums"]["gen_to_sensor"] != second["parameter_checksums"]["gen_to_sensor"]


def test_phase1_log_records(phase1_straight_run):
    cfg, _, index, _, run_dir, _ = phase1_straight_run
    with open(os.path.join(run_dir, "logs", "phase1.jsonl"), encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh]
    assert records, "no log lines written"
    term_names = (
        "reconstruction",
        "identity",
        "mask_consistency",
        "occluded_expression",
        "occluded_shape",
        "landmark",
        "rig_transform",
        "adversarial",
    )
    expected_keys = {f"term_{name}" for name in term_names}
    expected_keys |= {f"weight_{name}" for name in term_names}
    expected_keys |= {
        "total",
        "adversarial_n",
        "adversarial_s",
        "disc_clean",
        "disc_sensor",
        "step",
        "stage",
        "epoch_in_stage",
        "global_epoch",
        "retention",
        "lr",
    }
    for rec in records:
        assert expected_keys.issubset(rec)
        assert np.isfinite(rec["total"])
        expected_retention = cfg.phase1.stage_retention[rec["stage"]]
        assert rec["retention"] == expected_retention
    # Cosine decay: learning rates decrease as steps advance.
    by_step = sorted(records, key=lambda r: r["step"])
    lrs = [r["lr"] for r in by_step]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert by_step[0]["stage"] == 0 and by_step[-1]["stage"] == 1


def test_phase1_sensor_encoder_frozen_then_trained(phase1_straight_run):
    cfg, _, _, encoder, run_dir, _ = phase1_straight_run
    with open(os.path.join(run_dir, "checkpoints", "stage0", "epoch000.json"), encoding="utf-8") as fh:
        after_stage0 = json.load(fh)["parameter_checksums"]
    with open(os.path.join(run_dir, "checkpoints", "stage1", "epoch000.json"), encoding="utf-8") as fh:
        after_stage1 = json.load(fh)["parameter_checksums"]
    assert after_stage0["enc_sensor"] == parameter_checksum(encoder)
    assert after_stage1["enc_sensor"] != parameter_checksum(encoder)


def test_phase1_resume_matches_straight_run(phase1_straight_run, tmp_path):
    cfg, model, index, encoder, _, straight_summary = phase1_straight_run
    run_dir = str(tmp_path / "resumable")
    nets = tr.build_phase1_networks(cfg, encoder)
    trainer = tr.Phase1Trainer(cfg, model, index, nets, run_dir)
    with open(trainer._log_path, "a", encoding="utf-8") as fh:
        trainer._run_epoch(0, fh)
    trainer._save_checkpoint(0)

    fresh = tr.Phase1Trainer(cfg, model, index, tr.build_phase1_networks(cfg, encoder), run_dir)
    summary = fresh.train(resume=True)
    assert summary["epochs_run"] == 1
    assert summary["checksums"] == straight_summary["checksums"]


def test_phase1_resume_refuses_other_config(phase1_straight_run, tmp_path):
    cfg, model, index, encoder, straight_dir, _ = phase1_straight_run
    other = dataclasses.replace(
        cfg, weights=dataclasses.replace(cfg.weights, reconstruction=11.0)
    )
    nets = tr.build_phase1_networks(other, encoder)
    trainer = tr.Phase1Trainer(other, model, index, nets, straight_dir)
    with pytest.raises(ValueError, match="refusing to mix runs"):
        trainer.train(resume=True)


def test_latest_checkpoint_picks_highest_stage_then_epoch(tmp_path):
    for stage, epoch in ((0, 0), (0, 1), (1, 0)):
        stage_dir = tmp_path / "checkpoints" / f"stage{stage}"
        os.makedirs(stage_dir, exist_ok=True)
        torch.save({"stage": stage, "epoch": epoch}, stage_dir / f"epoch{epoch:03d}.ckpt")
    latest = tr.latest_checkpoint(str(tmp_path), "phase1")
    assert latest is not None and latest.endswith(os.path.join("stage1", "epoch000.ckpt"))
    assert tr.latest_checkpoint(str(tmp_path), "pretrain") is None


def test_prune_stage_checkpoints_keeps_boundaries(tmp_path):
    for stage, epochs in ((0, 3), (1, 2), (2, 2)):
        stage_dir = tmp_path / "checkpoints" / f"stage{stage}"
        os.makedirs(stage_dir)
        for epoch in range(epochs):
            torch.save({"e": epoch}, stage_dir / f"epoch{epoch:03d}.ckpt")
            (stage_dir / f"epoch{epoch:03d}.json").write_text("{}\n")
    kept = tr.prune_stage_checkpoints(str(tmp_path))
    assert [os.path.relpath(p, tmp_path) for p in kept] == [
        os.path.join("checkpoints", "stage0", "epoch002.ckpt"),
        os.path.join("checkpoints", "stage1", "epoch001.ckpt"),
        os.path.join("checkpoints", "stage2", "epoch001.ckpt"),
    ]
    remaining = sorted(
        os.path.relpath(str(p), tmp_path)
        for p in (tmp_path / "checkpoints").rglob("*.ckpt")
    )
    assert len(remaining) == 3  # exactly one boundary checkpoint per stage
    assert not (tmp_path / "checkpoints" / "stage0" / "epoch000.json").exists()


# ---------------------------------------------------------------------------
# mapping phase
# ---------------------------------------------------------------------------


def _synthetic_mapping_dataset(n_snippets: int = 6, frames: int = 30) -> sw.MappingDataset:
    rng = np.random.default_rng(4242)
    n = n_snippets * frames
    emg_frames = rng.uniform(0.0, 1.0, size=(n, 22))
    mix = rng.normal(size=(22, 13)) / np.sqrt(22.0)
    triplets = np.tanh(emg_frames @ mix) * 0.8
    snippet_ids = np.repeat(np.arange(n_snippets), frames)
    labels = [f"p{1 + i // 3:02d}/task_r{1 + i % 3}" for i in range(n_snippets)]
    participants = [label.split("/")[0] for label in labels]
    return sw.MappingDataset(
        emg_frames=emg_frames,
        triplets=triplets,
        snippet_ids=snippet_ids,
        snippet_labels=labels,
        participants=participants,
    )


def test_train_mapping_smoke(tmp_path):
    cfg = tiny_run_config()
    data = _synthetic_mapping_dataset()
    run_dir = str(tmp_path)
    results = tr.train_mapping(cfg, data, run_dir)
    assert len(results) == cfg.phase2.folds * len(MappingMLP.DIRECTIONS)
    for r in results:
        assert np.isfinite(r.mse) and r.mse >= 0.0
        assert np.isfinite(r.rms) and np.isfinite(r.smape)
        assert -1.0 <= r.spearman <= 1.0
        expected_dim = 13 if r.direction == "emg2exp" else 22
        assert len(r.per_component_mse) == expected_dim
        assert os.path.exists(os.path.join(run_dir, "phase2", f"fold{r.fold}_{r.direction}.ckpt"))
    with open(os.path.join(run_dir, "phase2", "metrics.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    assert len(summary) == len(results)


def test_train_mapping_deterministic(tmp_path):
    cfg = tiny_run_config()
    data = _synthetic_mapping_dataset()
    first = tr.train_mapping(cfg, data)
    second = tr.train_mapping(cfg, data)
    assert [r.mse for r in first] == [r.mse for r in second]
    assert [r.spearman for r in first] == [r.spearman for r in second]


def test_train_mapping_folds_partition_snippets():
    cfg = tiny_run_config()
    data = _synthetic_mapping_dataset()
    folds = sw.five_fold_snippets(
        len(data.snippet_labels), sw.derive_seed(cfg.seed, "phase2", "folds"), cfg.phase2.folds
    )
    seen = np.concatenate(folds)
    assert sorted(seen.tolist()) == list(range(len(data.snippet_labels)))
    for i, a in enumerate(folds):
        for b in folds[i + 1 :]:
            assert not np.intersect1d(a, b).size
