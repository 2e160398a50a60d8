"""Training loops for all learned components.

Three entry points:

* :func:`pretrain_encoder` — supervised warm-up of the parameter encoder on
  rendered frames with known coefficients (clean domain only; the sensor
  encoder starts from this same initialization and must earn its robustness
  during adversarial training).
* :class:`Phase1Trainer` — the three-stage adversarial reconstruction
  phase: both translation directions, least-squares discriminators, and the
  weighted cycle self-supervision objective, with the pixel-retention
  schedule tightening per stage.
* :func:`train_mapping` — cross-validated training of the two
  expression/EMG mapping networks on frame-aligned pairs, partitioned by
  snippet so no recording leaks across the train/test boundary.

Determinism: no code here reads global RNG state.  Every stochastic choice
(sampling order, augmentation, pixel retention) is seeded by a counter —
run seed, epoch, step — so resuming from a checkpoint at an epoch boundary
replays exactly the steps a straight-through run would have taken.
"""

from __future__ import annotations

import copy
import glob
import json
import math
import os
import re
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import metrics
from .config import RunConfig, config_hash
from .face_model import FaceParams, ToyMorphableModel
from .losses import (
    GeneratorTerms,
    identity_loss,
    landmark_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    mask_consistency_loss,
    occluded_expression_loss,
    occluded_shape_loss,
    reconstruction_loss,
    rig_transform_loss,
    total_generator_objective,
)
from .networks import (
    CyclePair,
    DiscriminatorNet,
    EncoderBundle,
    GeneratorNet,
    MappingMLP,
    cycle_forward,
    half_cycle,
    parameter_checksum,
    set_requires_grad,
)
from .synthworld import (
    NORMAL_DOMAIN,
    SENSOR_DOMAIN,
    DatasetIndex,
    MappingDataset,
    build_layout,
    derive_seed,
    five_fold_snippets,
    load_frame,
    make_identity,
    render_frame_pair,
    sample_world_params,
    unpaired_epoch,
)

CHECKPOINT_FORMAT = "emgface-checkpoint/1"

# Per-dimension standard deviations of the world parameter distribution
# (normal blocks by their sigma, uniform blocks by width/sqrt(12)).  The
# warm-up loss standardizes residuals by these so the low-amplitude pose
# block is learned as accurately as the big expression blocks.
_WORLD_STD = np.concatenate(
    [
        np.full(8, 0.45),  # shape
        np.full(8, 0.45),  # expression
        np.full(2, 1.2 / math.sqrt(12.0)),  # eyelids
        np.full(3, 0.8 / math.sqrt(12.0)),  # jaw
        np.full(3, 0.24 / math.sqrt(12.0)),  # rotations
        np.full(2, 0.10 / math.sqrt(12.0)),  # translations
        np.full(1, 0.20 / math.sqrt(12.0)),  # log-scale
    ]
)


def param_target_row(params: FaceParams) -> torch.Tensor:
    """Flat regression target: shape, expression triplet, pose."""
    return torch.cat([params.shape_coeffs, params.expression_triplet(), params.pose])


# ---------------------------------------------------------------------------
# supervised encoder warm-up
# ---------------------------------------------------------------------------


@dataclass
class PretrainResult:
    steps: int
    train_loss: float  # standardized MSE on the final epoch
    holdout_mse: float  # raw-scale MSE on held-out frames
    holdout_threshold: float

    @property
    def passed(self) -> bool:
        return self.holdout_mse < self.holdout_threshold


def _render_warmup_set(
    config: RunConfig, model: ToyMorphableModel, count: int, seed_tag: str
) -> tuple[torch.Tensor, torch.Tensor]:
    """Rendered frames plus their parameter rows, both float32."""
    layout = build_layout(model)
    resolution = config.model.resolution
    images = torch.empty(count, resolution, resolution, 3, dtype=torch.float32)
    targets = torch.empty(count, _WORLD_STD.shape[0], dtype=torch.float32)
    for i in range(count):
        seed = derive_seed(config.seed, "warmup", seed_tag, i)
        params = sample_world_params(seed, config.model.n_shape, config.model.n_expression)
        identity = make_identity(i, derive_seed(config.seed, "warmup-identity", seed_tag), config.model.n_shape)
        pair = render_frame_pair(model, identity, params, layout, resolution)
        images[i] = torch.from_numpy(pair.normal.astype(np.float32))
        targets[i] = param_target_row(params).to(torch.float32)
    return images, targets


def pretrain_encoder(
    config: RunConfig, model: ToyMorphableModel
) -> tuple[EncoderBundle, PretrainResult]:
    """Train the parameter encoder on clean rendered frames.

    The training loss standardizes each parameter dimension by its world
    standard deviation; the pass/fail gate is the plain (unstandardized)
    MSE on a held-out set, against ``config.pretrain.loss_threshold``.
    """
    cfg = config.pretrain
    images, targets = _render_warmup_set(config, model, cfg.images, "train")
    holdout_images, holdout_targets = _render_warmup_set(config, model, max(cfg.images // 8, 64), "holdout")
    torch.manual_seed(derive_seed(config.seed, "pretrain", "init"))
    encoder = EncoderBundle(
        config.networks, config.model.n_shape, config.model.n_expression, config.model.resolution
    )
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=cfg.learning_rate)
    inv_std = torch.tensor(1.0 / _WORLD_STD, dtype=torch.float32)
    steps = 0
    last_epoch_loss = float("inf")
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(config.seed, "pretrain", "perm", epoch)).permutation(
            cfg.images
        )
        epoch_loss, batches = 0.0, 0
        for start in range(0, cfg.images, cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            pred = encoder.encode_batch(images[idx])
            loss = (((pred - targets[idx]) * inv_std) ** 2).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
            steps += 1
        last_epoch_loss = epoch_loss / batches
    with torch.no_grad():
        pred = encoder.encode_batch(holdout_images)
        holdout_mse = float(((pred - holdout_targets) ** 2).mean())
    return encoder, PretrainResult(
        steps=steps,
        train_loss=last_epoch_loss,
        holdout_mse=holdout_mse,
        holdout_threshold=cfg.loss_threshold,
    )


# ---------------------------------------------------------------------------
# label-safe image augmentation
# ---------------------------------------------------------------------------


def augment_image(image: torch.Tensor, seed: int, crop_scale: float, sharpen_max: float, flip_prob: float) -> torch.Tensor:
    """Seeded crop-and-resize, mild sharpening, and axis flips.

    All three transforms act on the input image alone; every objective term
    is computed from the augmented image and quantities derived from it, so
    no annotation can fall out of sync.
    """
    rng = np.random.default_rng(seed)
    h, w, _ = image.shape
    out = image
    scale = rng.uniform(crop_scale, 1.0)
    ch, cw = int(round(h * scale)), int(round(w * scale))
    if ch < h or cw < w:
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        crop = out[top : top + ch, left : left + cw]
        nchw = crop.permute(2, 0, 1)[None]
        resized = F.interpolate(nchw, size=(h, w), mode="bilinear", align_corners=False)
        out = resized[0].permute(1, 2, 0)
    amount = rng.uniform(0.0, sharpen_max)
    if amount > 0.0:
        nchw = out.permute(2, 0, 1)[None]
        kernel = torch.full((3, 1, 3, 3), 1.0 / 9.0, dtype=out.dtype)
        blurred = F.conv2d(F.pad(nchw, (1, 1, 1, 1), mode="replicate"), kernel, groups=3)
        out = torch.clamp(nchw + amount * (nchw - blurred), 0.0, 1.0)[0].permute(1, 2, 0)
    if rng.uniform() < flip_prob:
        out = torch.flip(out, dims=(1,))
    if rng.uniform() < flip_prob:
        out = torch.flip(out, dims=(0,))
    return out.contiguous()


# ---------------------------------------------------------------------------
# adversarial reconstruction phase
# ---------------------------------------------------------------------------


@dataclass
class P1Networks:
    """All six networks of the reconstruction phase.

    ``enc_clean`` reads unoccluded frames and stays frozen throughout;
    ``enc_sensor`` starts from the same warm-up weights and is unfrozen
    from the second stage on.
    """

    enc_clean: EncoderBundle
    enc_sensor: EncoderBundle
    gen_to_sensor: GeneratorNet
    gen_to_clean: GeneratorNet
    disc_clean: DiscriminatorNet
    disc_sensor: DiscriminatorNet

    def modules(self) -> dict[str, torch.nn.Module]:
        return {
            "enc_clean": self.enc_clean,
            "enc_sensor": self.enc_sensor,
            "gen_to_sensor": self.gen_to_sensor,
            "gen_to_clean": self.gen_to_clean,
            "disc_clean": self.disc_clean,
            "disc_sensor": self.disc_sensor,
        }

    def checksums(self) -> dict[str, str]:
        return {name: parameter_checksum(module) for name, module in self.modules().items()}


def build_phase1_networks(config: RunConfig, pretrained: EncoderBundle) -> P1Networks:
    torch.manual_seed(derive_seed(config.seed, "phase1", "init"))
    return P1Networks(
        enc_clean=copy.deepcopy(pretrained),
        enc_sensor=copy.deepcopy(pretrained),
        gen_to_sensor=GeneratorNet(config.networks),
        gen_to_clean=GeneratorNet(config.networks),
        disc_clean=DiscriminatorNet(config.networks),
        disc_sensor=DiscriminatorNet(config.networks),
    )


def cosine_lr(base: float, step: int, total_steps: int) -> float:
    """Single half-cosine from ``base`` to zero across the whole run."""
    if total_steps <= 0:
        return base
    frac = min(max(step / total_steps, 0.0), 1.0)
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))


class Phase1Trainer:
    """Three-stage adversarial training over an unpaired two-domain dataset.

    Stage protocol: both encoders frozen in the first stage (generators and
    discriminators learn the translation around fixed geometry estimates);
    the sensor encoder joins from the second stage; the clean encoder never
    trains.  Pixel retention tightens per stage.  One image pair per step,
    AdamW on both sides, a single cosine decay over all stages.
    """

    def __init__(
        self,
        config: RunConfig,
        model: ToyMorphableModel,
        index: DatasetIndex,
        networks: P1Networks,
        run_dir: str,
    ):
        p1 = config.phase1
        if len(p1.stage_epochs) != len(p1.stage_retention):
            raise ValueError("stage_epochs and stage_retention must have equal length")
        if p1.batch_size != 1:
            raise ValueError("the adversarial phase is defined for batch size 1")
        self.config = config
        self.model = model
        self.index = index
        self.nets = networks
        self.run_dir = run_dir
        self.epoch_len = index.total_frames()
        self.schedule = [
            (stage, epoch) for stage, n in enumerate(p1.stage_epochs) for epoch in range(n)
        ]
        self.total_steps = self.epoch_len * len(self.schedule)
        gen_params = (
            list(networks.gen_to_sensor.parameters())
            + list(networks.gen_to_clean.parameters())
            + list(networks.enc_sensor.parameters())
        )
        disc_params = list(networks.disc_clean.parameters()) + list(networks.disc_sensor.parameters())
        self.opt_gen = torch.optim.AdamW(gen_params, lr=p1.learning_rate, weight_decay=p1.weight_decay)
        self.opt_disc = torch.optim.AdamW(disc_params, lr=p1.learning_rate, weight_decay=p1.weight_decay)
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(run_dir, "logs"), exist_ok=True)
        self._log_path = os.path.join(run_dir, "logs", "phase1.jsonl")

    # -- stage bookkeeping --------------------------------------------------

    def _apply_freeze(self, stage: int) -> None:
        set_requires_grad(self.nets.enc_clean, False)
        set_requires_grad(self.nets.enc_sensor, stage >= 1)

    def _set_lr(self, step: int) -> float:
        lr = cosine_lr(self.config.phase1.learning_rate, step, self.total_steps)
        for opt in (self.opt_gen, self.opt_disc):
            for group in opt.param_groups:
                group["lr"] = lr
        return lr

    # -- one optimization step ----------------------------------------------

    def _step(self, img_n: torch.Tensor, img_s: torch.Tensor, retention: float, step: int) -> dict:
        nets = self.nets
        pair_to_sensor = CyclePair(nets.enc_clean, nets.gen_to_sensor)
        pair_to_clean = CyclePair(nets.enc_sensor, nets.gen_to_clean)
        seed = derive_seed(self.config.seed, "retention", step)
        set_requires_grad(nets.disc_clean, False)
        set_requires_grad(nets.disc_sensor, False)
        cyc_n = cycle_forward(pair_to_sensor, pair_to_clean, img_n, self.model, retention, seed)
        cyc_s = cycle_forward(pair_to_clean, pair_to_sensor, img_s, self.model, retention, seed + 2)
        idt_s = half_cycle(pair_to_sensor, img_s, self.model, retention, seed + 4)
        idt_n = half_cycle(pair_to_clean, img_n, self.model, retention, seed + 5)
        terms = GeneratorTerms(
            reconstruction=reconstruction_loss(cyc_n.reconstruction, img_n, cyc_s.reconstruction, img_s),
            identity=identity_loss(idt_s.output, img_s, idt_n.output, img_n),
            mask_consistency=mask_consistency_loss(cyc_n.fake, img_n, cyc_s.fake, img_s),
            occluded_expression=occluded_expression_loss(
                cyc_n.first.params.expression_triplet(),
                cyc_n.second.params.expression_triplet(),
                cyc_s.first.params.expression_triplet(),
                cyc_s.second.params.expression_triplet(),
            ),
            occluded_shape=occluded_shape_loss(
                cyc_n.first.params.shape_coeffs,
                cyc_s.first.params.shape_coeffs,
                cyc_n.second.params.shape_coeffs,
                cyc_s.second.params.shape_coeffs,
            ),
            landmark=landmark_loss(
                cyc_n.first.render.landmarks2d,
                cyc_n.second.render.landmarks2d,
                cyc_s.first.render.landmarks2d,
                cyc_s.second.render.landmarks2d,
                self.index.resolution,
            ),
            rig_transform=rig_transform_loss(
                cyc_n.first.params.pose,
                cyc_n.second.params.pose,
                cyc_s.first.params.pose,
                cyc_s.second.params.pose,
            ),
            adversarial_n=lsgan_generator_loss(nets.disc_clean(cyc_s.fake)),
            adversarial_s=lsgan_generator_loss(nets.disc_sensor(cyc_n.fake)),
        )
        total, report = total_generator_objective(terms, self.config.weights)
        self.opt_gen.zero_grad()
        total.backward()
        self.opt_gen.step()
        set_requires_grad(nets.disc_clean, True)
        set_requires_grad(nets.disc_sensor, True)
        loss_disc_clean = lsgan_discriminator_loss(nets.disc_clean(img_n), nets.disc_clean(cyc_s.fake.detach()))
        loss_disc_sensor = lsgan_discriminator_loss(nets.disc_sensor(img_s), nets.disc_sensor(cyc_n.fake.detach()))
        self.opt_disc.zero_grad()
        (loss_disc_clean + loss_disc_sensor).backward()
        self.opt_disc.step()
        record = report.to_flat_dict()
        record["disc_clean"] = float(loss_disc_clean.detach())
        record["disc_sensor"] = float(loss_disc_sensor.detach())
        return record

    # -- epoch and run loops --------------------------------------------------

    def _run_epoch(self, global_epoch: int, log_fh) -> None:
        stage, epoch_in_stage = self.schedule[global_epoch]
        retention = self.config.phase1.stage_retention[stage]
        p1 = self.config.phase1
        self._apply_freeze(stage)
        samples = unpaired_epoch(self.index, derive_seed(self.config.seed, "samples", global_epoch))
        for i, sample in enumerate(samples):
            step = global_epoch * self.epoch_len + i
            lr = self._set_lr(step)
            img_n = load_frame(self.index, sample.normal, NORMAL_DOMAIN)
            img_s = load_frame(self.index, sample.sensor, SENSOR_DOMAIN)
            img_n = augment_image(
                img_n, derive_seed(self.config.seed, "aug-n", step), p1.crop_scale, p1.sharpen_max, p1.flip_prob
            )
            img_s = augment_image(
                img_s, derive_seed(self.config.seed, "aug-s", step), p1.crop_scale, p1.sharpen_max, p1.flip_prob
            )
            record = self._step(img_n, img_s, retention, step)
            if i % p1.log_every == 0 or i == len(samples) - 1:
                record.update(
                    {
                        "step": step,
                        "stage": stage,
                        "epoch_in_stage": epoch_in_stage,
                        "global_epoch": global_epoch,
                        "retention": retention,
                        "lr": lr,
                    }
                )
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        log_fh.flush()

    def train(self, resume: bool = False) -> dict:
        start_epoch = 0
        if resume:
            latest = latest_checkpoint(self.run_dir, "phase1")
            if latest is not None:
                payload = load_checkpoint(latest, self.config)
                for name, module in self.nets.modules().items():
                    module.load_state_dict(payload["modules"][name])
                self.opt_gen.load_state_dict(payload["optimizers"]["generator"])
                self.opt_disc.load_state_dict(payload["optimizers"]["discriminator"])
                start_epoch = payload["global_epoch"] + 1
        with open(self._log_path, "a", encoding="utf-8") as log_fh:
            for global_epoch in range(start_epoch, len(self.schedule)):
                self._run_epoch(global_epoch, log_fh)
                self._save_checkpoint(global_epoch)
        return {
            "epochs_run": len(self.schedule) - start_epoch,
            "total_steps": self.total_steps,
            "checksums": self.nets.checksums(),
        }

    def _save_checkpoint(self, global_epoch: int) -> str:
        stage, epoch_in_stage = self.schedule[global_epoch]
        payload = {
            "format": CHECKPOINT_FORMAT,
            "kind": "phase1",
            "config_hash": config_hash(self.config),
            "stage": stage,
            "epoch_in_stage": epoch_in_stage,
            "global_epoch": global_epoch,
            "global_step": (global_epoch + 1) * self.epoch_len,
            "modules": {name: module.state_dict() for name, module in self.nets.modules().items()},
            "optimizers": {
                "generator": self.opt_gen.state_dict(),
                "discriminator": self.opt_disc.state_dict(),
            },
        }
        stage_dir = os.path.join(self.run_dir, "checkpoints", f"stage{stage}")
        os.makedirs(stage_dir, exist_ok=True)
        path = os.path.join(stage_dir, f"epoch{epoch_in_stage:03d}.ckpt")
        torch.save(payload, path)
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "kind": "phase1",
            "config_hash": payload["config_hash"],
            "stage": stage,
            "epoch_in_stage": epoch_in_stage,
            "global_epoch": global_epoch,
            "global_step": payload["global_step"],
            "parameter_checksums": self.nets.checksums(),
        }
        with open(path.replace(".ckpt", ".json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


# ---------------------------------------------------------------------------
# checkpoint helpers
# ---------------------------------------------------------------------------


def latest_checkpoint(run_dir: str, kind: str) -> str | None:
    """Newest checkpoint of a kind, or None.

    Adversarial-phase checkpoints live under ``checkpoints/stage{S}/``, one
    per epoch; the newest is the lexicographically greatest (stage, epoch)
    pair, which matches training order because stages run consecutively.
    """
    if kind == "pretrain":
        path = os.path.join(run_dir, "checkpoints", "pretrain.ckpt")
        return path if os.path.exists(path) else None
    candidates = []
    for path in glob.glob(os.path.join(run_dir, "checkpoints", "stage*", "epoch*.ckpt")):
        match = re.search(r"stage(\d+)[/\\]epoch(\d+)\.ckpt$", path)
        if match:
            candidates.append(((int(match.group(1)), int(match.group(2))), path))
    if not candidates:
        return None
    return max(candidates)[1]


def prune_stage_checkpoints(run_dir: str) -> list[str]:
    """Drop all but each stage's final (boundary) checkpoint.

    Called after a completed run: per-epoch checkpoints exist for resume
    granularity while training, but the finished run keeps exactly one
    checkpoint per stage.  Returns the kept paths in stage order.
    """
    kept = []
    for stage_dir in sorted(glob.glob(os.path.join(run_dir, "checkpoints", "stage*"))):
        epochs = []
        for path in glob.glob(os.path.join(stage_dir, "epoch*.ckpt")):
            match = re.search(r"epoch(\d+)\.ckpt$", path)
            if match:
                epochs.append((int(match.group(1)), path))
        if not epochs:
            continue
        boundary = max(epochs)[1]
        kept.append(boundary)
        for _, path in epochs:
            if path != boundary:
                os.remove(path)
                manifest = path.replace(".ckpt", ".json")
                if os.path.exists(manifest):
                    os.remove(manifest)
    return kept


def load_checkpoint(path: str, config: RunConfig | None = None) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format in {path}: {payload.get('format')!r}")
    if config is not None:
        expected = config_hash(config)
        if payload["config_hash"] != expected:
            raise ValueError(
                f"checkpoint {path} was written under config {payload['config_hash'][:12]}, "
                f"current config is {expected[:12]}; refusing to mix runs"
            )
    return payload


def save_encoder_checkpoint(
    run_dir: str, config: RunConfig, encoder: EncoderBundle, result: PretrainResult
) -> str:
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    path = os.path.join(run_dir, "checkpoints", "pretrain.ckpt")
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "kind": "pretrain",
            "config_hash": config_hash(config),
            "modules": {"encoder": encoder.state_dict()},
            "holdout_mse": result.holdout_mse,
            "train_loss": result.train_loss,
            "steps": result.steps,
        },
        path,
    )
    with open(path.replace(".ckpt", ".json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "format": CHECKPOINT_FORMAT,
                "kind": "pretrain",
                "config_hash": config_hash(config),
                "holdout_mse": result.holdout_mse,
                "train_loss": result.train_loss,
                "steps": result.steps,
                "parameter_checksum": parameter_checksum(encoder),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return path


def load_pretrained_encoder(path: str, config: RunConfig) -> EncoderBundle:
    payload = load_checkpoint(path, config)
    encoder = EncoderBundle(
        config.networks, config.model.n_shape, config.model.n_expression, config.model.resolution
    )
    encoder.load_state_dict(payload["modules"]["encoder"])
    return encoder


# ---------------------------------------------------------------------------
# expression <-> EMG mapping phase
# ---------------------------------------------------------------------------


@dataclass
class MappingFoldResult:
    fold: int
    direction: str
    mse: float
    rms: float
    smape: float
    spearman: float
    per_component_mse: list[float]


def _train_one_mapper(
    config: RunConfig,
    direction: str,
    x_train: torch.Tensor,
    y_train: torch.Tensor,
    fold: int,
) -> MappingMLP:
    p2 = config.phase2
    torch.manual_seed(derive_seed(config.seed, "phase2", "init", fold, direction))
    net = MappingMLP(
        direction,
        emg_dim=x_train.shape[1] if direction == "emg2exp" else y_train.shape[1],
        expression_dim=y_train.shape[1] if direction == "emg2exp" else x_train.shape[1],
        hidden=config.networks.mapper_hidden,
        layers=config.networks.mapper_layers,
    )
    optimizer = torch.optim.Adam(net.parameters(), lr=p2.learning_rate)
    n = x_train.shape[0]
    for epoch in range(p2.epochs):
        order = np.random.default_rng(
            derive_seed(config.seed, "phase2", "perm", fold, direction, epoch)
        ).permutation(n)
        for start in range(0, n, p2.batch_size):
            idx = torch.from_numpy(order[start : start + p2.batch_size].copy())
            pred = net(x_train[idx])
            loss = ((pred - y_train[idx]) ** 2).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    return net


def _evaluate_mapper(
    net: MappingMLP, direction: str, x_test: torch.Tensor, y_test: torch.Tensor, fold: int
) -> MappingFoldResult:
    with torch.no_grad():
        pred = net(x_test).numpy().astype(np.float64)
    truth = y_test.numpy().astype(np.float64)
    pooled, _ = metrics.pooled_spearman(pred, truth)
    return MappingFoldResult(
        fold=fold,
        direction=direction,
        mse=metrics.mse(pred, truth),
        rms=metrics.rms(pred, truth),
        smape=metrics.smape(pred, truth),
        spearman=pooled,
        per_component_mse=((pred - truth) ** 2).mean(axis=0).tolist(),
    )


def train_mapping(
    config: RunConfig,
    data: MappingDataset,
    run_dir: str | None = None,
    directions: tuple[str, ...] = MappingMLP.DIRECTIONS,
) -> list[MappingFoldResult]:
    """Five-fold cross-validation of the requested mapping directions.

    Folds partition snippets (whole recordings), never frames, so test
    frames always come from recordings the network has not seen.
    """
    unknown = set(directions) - set(MappingMLP.DIRECTIONS)
    if unknown:
        raise ValueError(f"unknown mapping directions: {sorted(unknown)}")
    folds = five_fold_snippets(
        len(data.snippet_labels), derive_seed(config.seed, "phase2", "folds"), config.phase2.folds
    )
    emg_frames = torch.from_numpy(data.emg_frames.astype(np.float32))
    triplets = torch.from_numpy(data.triplets.astype(np.float32))
    results = []
    for fold, test_snippets in enumerate(folds):
        test_rows = torch.from_numpy(np.isin(data.snippet_ids, test_snippets))
        train_rows = ~test_rows
        for direction in directions:
            if direction == "emg2exp":
                x_train, y_train = emg_frames[train_rows], triplets[train_rows]
                x_test, y_test = emg_frames[test_rows], triplets[test_rows]
            else:
                x_train, y_train = triplets[train_rows], emg_frames[train_rows]
                x_test, y_test = triplets[test_rows], emg_frames[test_rows]
            net = _train_one_mapper(config, direction, x_train, y_train, fold)
            results.append(_evaluate_mapper(net, direction, x_test, y_test, fold))
            if run_dir is not None:
                os.makedirs(os.path.join(run_dir, "phase2"), exist_ok=True)
                torch.save(
                    {
                        "format": CHECKPOINT_FORMAT,
                        "kind": "phase2",
                        "config_hash": config_hash(config),
                        "fold": fold,
                        "direction": direction,
                        "modules": {"mapper": net.state_dict()},
                    },
                    os.path.join(run_dir, "phase2", f"fold{fold}_{direction}.ckpt"),
                )
    if run_dir is not None:
        summary = [
            {
                "fold": r.fold,
                "direction": r.direction,
                "mse": r.mse,
                "rms": r.rms,
                "smape": r.smape,
                "spearman": r.spearman,
                "per_component_mse": r.per_component_mse,
            }
            for r in results
        ]
        with open(os.path.join(run_dir, "phase2", "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return results


@dataclass
class MappingEvaluation:
    """Out-of-fold metrics of one mapping direction over saved fold models."""

    direction: str
    fold_results: list[MappingFoldResult]
    pooled_mse: float
    pooled_rms: float
    pooled_smape: float
    pooled_spearman: float
    per_component_mse: list[float]
    per_component_spearman: list[float]


def load_fold_mapper(
    path: str, config: RunConfig, direction: str, emg_dim: int, expression_dim: int
) -> MappingMLP:
    payload = load_checkpoint(path, config)
    net = MappingMLP(
        direction,
        emg_dim=emg_dim,
        expression_dim=expression_dim,
        hidden=config.networks.mapper_hidden,
        layers=config.networks.mapper_layers,
    )
    net.load_state_dict(payload["modules"]["mapper"])
    net.eval()
    return net


def evaluate_mapping(
    config: RunConfig, data: MappingDataset, run_dir: str
) -> list[MappingEvaluation]:
    """Out-of-fold evaluation of the saved fold models of both directions.

    Recomputes the fold partition from the configuration (it is a pure
    function of the run seed and snippet count), pushes every snippet through
    the one model that held it out, and pools the predictions.
    """
    folds = five_fold_snippets(
        len(data.snippet_labels), derive_seed(config.seed, "phase2", "folds"), config.phase2.folds
    )
    emg_frames = torch.from_numpy(data.emg_frames.astype(np.float32))
    triplets = torch.from_numpy(data.triplets.astype(np.float32))
    evaluations = []
    for direction in MappingMLP.DIRECTIONS:
        fold_results = []
        pooled_pred, pooled_truth = [], []
        for fold, test_snippets in enumerate(folds):
            path = os.path.join(run_dir, "phase2", f"fold{fold}_{direction}.ckpt")
            if not os.path.exists(path):
                raise FileNotFoundError(f"missing fold model {path}")
            net = load_fold_mapper(
                path, config, direction, emg_frames.shape[1], triplets.shape[1]
            )
            test_rows = torch.from_numpy(np.isin(data.snippet_ids, test_snippets))
            x = emg_frames[test_rows] if direction == "emg2exp" else triplets[test_rows]
            y = triplets[test_rows] if direction == "emg2exp" else emg_frames[test_rows]
            with torch.no_grad():
                pred = net(x).numpy().astype(np.float64)
            truth = y.numpy().astype(np.float64)
            pooled_pred.append(pred)
            pooled_truth.append(truth)
            fold_results.append(_evaluate_mapper(net, direction, x, y, fold))
        pred = np.concatenate(pooled_pred)
        truth = np.concatenate(pooled_truth)
        rho, per_channel = metrics.pooled_spearman(pred, truth)
        evaluations.append(
            MappingEvaluation(
                direction=direction,
                fold_results=fold_results,
                pooled_mse=metrics.mse(pred, truth),
                pooled_rms=metrics.rms(pred, truth),
                pooled_smape=metrics.smape(pred, truth),
                pooled_spearman=rho,
                per_component_mse=((pred - truth) ** 2).mean(axis=0).tolist(),
                per_component_spearman=[float(v) for v in per_channel],
            )
        )
    return evaluations
