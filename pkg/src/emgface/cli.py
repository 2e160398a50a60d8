"""Command-line entry point.

One executable, ``emgface``, with one subcommand per pipeline step::

    synth       write the synthetic two-domain dataset for the configured world
    pretrain    supervised warm-up of the occlusion-free encoder
    train-p1    three-stage adversarial electrode-removal training
    train-p2    cross-validated expression <-> muscle-activity mapping
    eval-recon  image metrics of electrode removal vs the clean reference
    eval-map    regression metrics of the learned mapping, out of fold
    plot        figures from whatever artifacts the run directory holds

Every run lives under ``{run_root}/{run_id}/``: the run root comes from
``--run-root`` or the ``EMGFACE_RUN_ROOT`` environment variable, the run id
from the configuration (explicit ``run_id`` key, else the config hash).  A
``manifest.json`` in the run directory records the exact configuration; any
command invoked against a run directory whose manifest hash disagrees with
the effective configuration refuses to run.

Errors are reported as a single ``error: <message>`` line on stderr with a
nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import torch

from .config import (
    RunConfig,
    apply_override,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
)
from .face_model import ToyMorphableModel, build_toy_model, save_model
from .networks import CyclePair, EncoderBundle, GeneratorNet, MappingMLP, half_cycle
from . import metrics
from .synthworld import (
    NORMAL_DOMAIN,
    SENSOR_DOMAIN,
    DatasetIndex,
    derive_seed,
    five_fold_snippets,
    generate_dataset,
    load_dataset_index,
    load_frame,
    FrameRef,
    mapping_dataset_from_index,
    read_session_params,
    world_from_config,
)
from .trainer import (
    Phase1Trainer,
    build_phase1_networks,
    evaluate_mapping,
    latest_checkpoint,
    load_checkpoint,
    load_fold_mapper,
    load_pretrained_encoder,
    pretrain_encoder,
    prune_stage_checkpoints,
    save_encoder_checkpoint,
    train_mapping,
)

MANIFEST_FORMAT = "emgface-manifest/1"
RUN_ROOT_ENV = "EMGFACE_RUN_ROOT"
DEFAULT_RUN_ROOT = "runs"


class CliError(Exception):
    """A user-facing failure: printed as one line, exit code 1."""


# ---------------------------------------------------------------------------
# configuration and run-directory plumbing
# ---------------------------------------------------------------------------


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        if not os.path.exists(args.config):
            raise CliError(f"config file not found: {args.config}")
        config = load_config(args.config)
    else:
        config = RunConfig()
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            config = apply_override(config, key.strip(), raw)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    return config


def resolve_run_dir(args: argparse.Namespace, config: RunConfig) -> str:
    root = args.run_root or os.environ.get(RUN_ROOT_ENV) or DEFAULT_RUN_ROOT
    run_id = config.run_id or config_hash(config)[:12]
    return os.path.join(root, run_id)


def write_manifest(run_dir: str, config: RunConfig, command: str) -> None:
    """Record the run's exact configuration; refuse a mismatched rerun.

    The manifest carries everything needed to re-run the command: the full
    configuration tree, its hash, and the list of commands executed against
    this run directory.
    """
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, "manifest.json")
    digest = config_hash(config)
    commands: list[str] = []
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("config_hash") != digest:
            raise CliError(
                f"config hash {digest[:12]} does not match run manifest "
                f"{manifest.get('config_hash', '')[:12]} in {path}; refusing to mix runs"
            )
        commands = list(manifest.get("commands", []))
    if command not in commands:
        commands.append(command)
    manifest = {
        "format": MANIFEST_FORMAT,
        "config_hash": digest,
        "config": config_to_dict(config),
        "commands": commands,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dataset_dir(args: argparse.Namespace, run_dir: str) -> str:
    return args.dataset or os.path.join(run_dir, "dataset")


def _load_index(args: argparse.Namespace, run_dir: str, config: RunConfig) -> DatasetIndex:
    root = _dataset_dir(args, run_dir)
    if not os.path.exists(os.path.join(root, "fingerprint.json")):
        raise CliError(f"no dataset at {root}; run `emgface synth` first")
    try:
        index = load_dataset_index(root)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if index.resolution != config.model.resolution:
        raise CliError(
            f"dataset resolution {index.resolution} does not match configured "
            f"resolution {config.model.resolution}"
        )
    return index


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = resolve_run_dir(args, config)
    write_manifest(run_dir, config, "synth")
    model = build_toy_model(config.model)
    save_model(model, os.path.join(run_dir, "model.json"), sidecar=True)
    out_dir = os.path.join(run_dir, "dataset")
    fingerprint = generate_dataset(model, world_from_config(config), out_dir)
    n_frames = sum(
        meta["frames"] for sessions in fingerprint["participants"].values() for meta in sessions
    )
    print(
        f"dataset written to {out_dir}: {len(fingerprint['participants'])} participants, "
        f"{n_frames} frames per domain"
    )
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = resolve_run_dir(args, config)
    write_manifest(run_dir, config, "pretrain")
    model = build_toy_model(config.model)
    encoder, result = pretrain_encoder(config, model)
    path = save_encoder_checkpoint(run_dir, config, encoder, result)
    status = "passed" if result.passed else "FAILED"
    print(
        f"warm-up {status}: holdout mse {result.holdout_mse:.6f} "
        f"(threshold {result.holdout_threshold}) after {result.steps} steps -> {path}"
    )
    if not result.passed:
        raise CliError(
            f"encoder warm-up holdout gate failed: mse {result.holdout_mse:.6f} > "
            f"threshold {result.holdout_threshold}"
        )
    return 0


def cmd_train_phase1(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = resolve_run_dir(args, config)
    write_manifest(run_dir, config, "train-p1")
    index = _load_index(args, run_dir, config)
    pretrain_path = latest_checkpoint(run_dir, "pretrain")
    if pretrain_path is None:
        raise CliError(f"no warm-up checkpoint in {run_dir}; run `emgface pretrain` first")
    model = build_toy_model(config.model)
    try:
        encoder = load_pretrained_encoder(pretrain_path, config)
        networks = build_phase1_networks(config, encoder)
        trainer = Phase1Trainer(config, model, index, networks, run_dir)
        summary = trainer.train(resume=args.resume)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    kept = prune_stage_checkpoints(run_dir)
    print(
        f"adversarial training done: {summary['epochs_run']} epochs run, "
        f"{summary['total_steps']} total steps, kept {len(kept)} stage checkpoints"
    )
    return 0


def cmd_train_phase2(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = resolve_run_dir(args, config)
    write_manifest(run_dir, config, "train-p2")
    index = _load_index(args, run_dir, config)
    try:
        data = mapping_dataset_from_index(index)
        directions = (
            tuple(MappingMLP.DIRECTIONS) if args.direction == "both" else (args.direction,)
        )
        results = train_mapping(config, data, run_dir=run_dir, directions=directions)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    for direction in directions:
        rows = [r for r in results if r.direction == direction]
        mean_mse = float(np.mean([r.mse for r in rows]))
        mean_rho = float(np.mean([r.spearman for r in rows]))
        print(
            f"{direction}: {len(rows)} folds, mean mse {mean_mse:.5f}, "
            f"mean spearman {mean_rho:.3f}"
        )
    return 0


def _load_phase1_translator(
    run_dir: str, config: RunConfig, checkpoint: str | None
) -> tuple[EncoderBundle, GeneratorNet]:
    path = checkpoint or latest_checkpoint(run_dir, "phase1")
    if path is None:
        raise CliError(f"no adversarial checkpoint in {run_dir}; run `emgface train-p1` first")
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path}")
    try:
        payload = load_checkpoint(path, config)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    encoder = EncoderBundle(
        config.networks, config.model.n_shape, config.model.n_expression, config.model.resolution
    )
    generator = GeneratorNet(config.networks)
    encoder.load_state_dict(payload["modules"]["enc_sensor"])
    generator.load_state_dict(payload["modules"]["gen_to_clean"])
    encoder.eval()
    generator.eval()
    return encoder, generator


def _eval_frames(index: DatasetIndex, split: str, limit: int | None) -> list[FrameRef]:
    """Frames evaluated by ``eval-recon``, in deterministic order.

    ``last-rep`` keeps only each task's final repetition (sessions ending in
    the highest repetition suffix), a held-out-style subset; ``all`` keeps
    every frame.  ``limit`` caps the list after an even per-session stride.
    """
    sessions = list(enumerate(index.sessions))
    if split == "last-rep":
        max_rep: dict[tuple[str, str], str] = {}
        for _, ref in sessions:
            key = (ref.participant, ref.task)
            if key not in max_rep or ref.session > max_rep[key]:
                max_rep[key] = ref.session
        sessions = [
            (i, ref) for i, ref in sessions if max_rep[(ref.participant, ref.task)] == ref.session
        ]
    refs = [FrameRef(i, k) for i, ref in sessions for k in range(ref.n_frames)]
    if limit is not None and limit < len(refs):
        stride = max(len(refs) // limit, 1)
        refs = refs[::stride][:limit]
    return refs


def cmd_eval_recon(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = resolve_run_dir(args, config)
    write_manifest(run_dir, config, "eval-recon")
    index = _load_index(args, run_dir, config)
    model = build_toy_model(config.model)
    if args.stub:
        encoder = generator = None
    else:
        encoder, generator = _load_phase1_translator(run_dir, config, args.checkpoint)
    retention = config.phase1.stage_retention[-1]
    refs = _eval_frames(index, args.split, args.limit)
    if not refs:
        raise CliError(f"split {args.split!r} selected no frames")

    header = [
        "scope", "participant", "session", "frame", "variant",
        "ssim", "gmsd", "psnr", "mdsi", "frechet", "frechet_unreliable",
    ]
    rows: list[list[str]] = []
    references, reconstructions, occluded = [], [], []
    per_variant: dict[str, list[list[float]]] = {"method": [], "baseline_ns": []}
    for ref in refs:
        session = index.sessions[ref.session_index]
        img_n = load_frame(index, ref, NORMAL_DOMAIN)
        img_s = load_frame(index, ref, SENSOR_DOMAIN)
        if args.stub:
            fake = img_n.clone()
        else:
            seed = derive_seed(config.seed, "eval-recon", session.participant, session.session, ref.frame)
            with torch.no_grad():
                cycle = half_cycle(CyclePair(encoder, generator), img_s, model, retention, seed)
            fake = cycle.output.clamp(0.0, 1.0)
        ref_np = img_n.numpy().astype(np.float64)
        fake_np = fake.numpy().astype(np.float64)
        occ_np = img_s.numpy().astype(np.float64)
        references.append(ref_np)
        reconstructions.append(fake_np)
        occluded.append(occ_np)
        for variant, image in (("method", fake_np), ("baseline_ns", occ_np)):
            values = [
                metrics.ssim(image, ref_np),
                metrics.gmsd(image, ref_np),
                metrics.psnr(image, ref_np),
                metrics.mdsi(image, ref_np),
            ]
            per_variant[variant].append(values)
            rows.append(
                ["frame", session.participant, session.session, str(ref.frame), variant]
                + [_fmt(v) for v in values]
                + ["", ""]
            )

    ref_embed = metrics.embed_images(
        np.stack(references), dim=config.metrics.frechet_dim, seed=config.metrics.frechet_seed
    )
    for variant, stack in (("method", reconstructions), ("baseline_ns", occluded)):
        embed = metrics.embed_images(
            np.stack(stack), dim=config.metrics.frechet_dim, seed=config.metrics.frechet_seed
        )
        frechet = metrics.frechet_distance(embed, ref_embed)
        means = np.asarray(per_variant[variant]).mean(axis=0)
        rows.append(
            ["set", "", "", "", variant]
            + [_fmt(v) for v in means]
            + [_fmt(frechet.value), str(int(frechet.unreliable))]
        )

    out_path = os.path.join(run_dir, "reports", "recon.csv")
    _write_csv(out_path, header, rows)
    method_mean = np.asarray(per_variant["method"]).mean(axis=0)
    baseline_mean = np.asarray(per_variant["baseline_ns"]).mean(axis=0)
    print(
        f"evaluated {len(refs)} frames -> {out_path}\n"
        f"method      ssim {method_mean[0]:.4f} gmsd {method_mean[1]:.4f} "
        f"psnr {method_mean[2]:.2f} mdsi {method_mean[3]:.4f}\n"
        f"baseline_ns ssim {baseline_mean[0]:.4f} gmsd {baseline_mean[1]:.4f} "
        f"psnr {baseline_mean[2]:.2f} mdsi {baseline_mean[3]:.4f}"
    )
    return 0


def cmd_eval_mapping(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = resolve_run_dir(args, config)
    write_manifest(run_dir, config, "eval-map")
    index = _load_index(args, run_dir, config)
    try:
        data = mapping_dataset_from_index(index)
        evaluations = evaluate_mapping(config, data, run_dir)
    except FileNotFoundError as exc:
        raise CliError(f"{exc}; run `emgface train-p2` first") from exc
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    header = ["direction", "fold", "mse", "rms", "smape", "spearman"]
    rows: list[list[str]] = []
    channel_rows: list[list[str]] = []
    for ev in evaluations:
        for r in ev.fold_results:
            rows.append(
                [ev.direction, str(r.fold)]
                + [_fmt(v) for v in (r.mse, r.rms, r.smape, r.spearman)]
            )
        rows.append(
            [ev.direction, "pooled"]
            + [_fmt(v) for v in (ev.pooled_mse, ev.pooled_rms, ev.pooled_smape, ev.pooled_spearman)]
        )
        for c, (c_mse, c_rho) in enumerate(zip(ev.per_component_mse, ev.per_component_spearman)):
            channel_rows.append([ev.direction, str(c), _fmt(c_mse), _fmt(c_rho)])
        print(
            f"{ev.direction}: pooled mse {ev.pooled_mse:.5f}, "
            f"pooled spearman {ev.pooled_spearman:.3f}"
        )

    out_path = os.path.join(run_dir, "reports", "mapping.csv")
    _write_csv(out_path, header, rows)
    channels_path = os.path.join(run_dir, "reports", "mapping_channels.csv")
    _write_csv(channels_path, ["direction", "component", "mse", "spearman"], channel_rows)
    print(f"reports -> {out_path}, {channels_path}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    config = resolve_config(args)
    run_dir = resolve_run_dir(args, config)
    write_manifest(run_dir, config, "plot")
    fig_dir = os.path.join(run_dir, "figures")
    emitted: list[str] = []

    log_path = os.path.join(run_dir, "logs", "phase1.jsonl")
    if os.path.exists(log_path):
        emitted.append(_plot_loss_curves(plt, log_path, fig_dir))

    dataset_root = _dataset_dir(args, run_dir)
    has_dataset = os.path.exists(os.path.join(dataset_root, "fingerprint.json"))
    phase1_ckpt = latest_checkpoint(run_dir, "phase1")
    if has_dataset and phase1_ckpt is not None:
        index = _load_index(args, run_dir, config)
        encoder, generator = _load_phase1_translator(run_dir, config, None)
        emitted.append(
            _plot_removal_triptych(plt, config, index, encoder, generator, fig_dir)
        )

    if has_dataset and os.path.isdir(os.path.join(run_dir, "phase2")):
        index = _load_index(args, run_dir, config)
        emitted.extend(_plot_mapping_figures(plt, config, run_dir, index, fig_dir))

    if not emitted:
        raise CliError(
            f"nothing to plot in {run_dir}: no training log, checkpoints, or fold models"
        )
    print("figures written:\n" + "\n".join(f"  {p}" for p in emitted))
    return 0


def _plot_loss_curves(plt, log_path: str, fig_dir: str) -> str:
    records = []
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            records.append(json.loads(line))
    steps = [r["step"] for r in records]
    fig, (ax_total, ax_terms) = plt.subplots(2, 1, figsize=(9, 7), sharex=True)
    ax_total.plot(steps, [r["total"] for r in records], label="weighted total", color="black")
    for key, color in (("disc_clean", "tab:blue"), ("disc_sensor", "tab:orange")):
        ax_total.plot(steps, [r[key] for r in records], label=key, alpha=0.7, color=color)
    ax_total.set_yscale("log")
    ax_total.set_ylabel("loss")
    ax_total.legend(loc="upper right", fontsize=8)
    term_keys = sorted(k for k in records[0] if k.startswith("term_"))
    for key in term_keys:
        ax_terms.plot(steps, [r[key] for r in records], label=key.removeprefix("term_"), alpha=0.8)
    ax_terms.set_yscale("log")
    ax_terms.set_xlabel("optimizer step")
    ax_terms.set_ylabel("unweighted term")
    ax_terms.legend(loc="upper right", fontsize=7, ncol=2)
    boundaries = {}
    for r in records:
        boundaries.setdefault(r["stage"], r["step"])
    for stage, step in sorted(boundaries.items())[1:]:
        for ax in (ax_total, ax_terms):
            ax.axvline(step, color="gray", linestyle=":", linewidth=1)
        ax_total.text(step, ax_total.get_ylim()[1], f" stage {stage + 1}", fontsize=7, va="top")
    fig.suptitle("Adversarial training losses")
    path = os.path.join(fig_dir, "loss_curves.png")
    os.makedirs(fig_dir, exist_ok=True)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def _plot_removal_triptych(
    plt,
    config: RunConfig,
    index: DatasetIndex,
    encoder: EncoderBundle,
    generator: GeneratorNet,
    fig_dir: str,
    n_rows: int = 3,
) -> str:
    model = build_toy_model(config.model)
    retention = config.phase1.stage_retention[-1]
    refs = _eval_frames(index, "all", n_rows)
    fig, axes = plt.subplots(len(refs), 3, figsize=(7.5, 2.6 * len(refs)), squeeze=False)
    for row, ref in enumerate(refs):
        session = index.sessions[ref.session_index]
        img_s = load_frame(index, ref, SENSOR_DOMAIN)
        img_n = load_frame(index, ref, NORMAL_DOMAIN)
        seed = derive_seed(config.seed, "plot", session.participant, session.session, ref.frame)
        with torch.no_grad():
            cycle = half_cycle(CyclePair(encoder, generator), img_s, model, retention, seed)
        fake = cycle.output.clamp(0.0, 1.0)
        for col, (title, image) in enumerate(
            (("with electrodes", img_s), ("electrodes removed", fake), ("reference", img_n))
        ):
            ax = axes[row][col]
            ax.imshow(image.numpy(), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if row == 0:
                ax.set_title(title, fontsize=10)
            if col == 0:
                ax.set_ylabel(f"{session.participant}/{session.session}\nframe {ref.frame}", fontsize=7)
    fig.suptitle("Electrode removal")
    path = os.path.join(fig_dir, "removal_triptych.png")
    os.makedirs(fig_dir, exist_ok=True)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def _plot_mapping_figures(
    plt, config: RunConfig, run_dir: str, index: DatasetIndex, fig_dir: str
) -> list[str]:
    data = mapping_dataset_from_index(index)
    folds = five_fold_snippets(
        len(data.snippet_labels), derive_seed(config.seed, "phase2", "folds"), config.phase2.folds
    )
    fold = 0
    path = os.path.join(run_dir, "phase2", f"fold{fold}_exp2emg.ckpt")
    if not os.path.exists(path):
        return []
    net = load_fold_mapper(
        path, config, "exp2emg", data.emg_frames.shape[1], data.triplets.shape[1]
    )
    snippet = int(folds[fold][0])
    rows = data.snippet_ids == snippet
    truth = data.emg_frames[rows]
    with torch.no_grad():
        pred = net(torch.from_numpy(data.triplets[rows].astype(np.float32))).numpy()
    label = data.snippet_labels[snippet]
    emitted = []

    # strongest channels, predicted envelope over the measured one
    strongest = np.argsort(truth.max(axis=0))[::-1][:6]
    fig, axes = plt.subplots(len(strongest), 1, figsize=(8, 1.6 * len(strongest)), sharex=True)
    t = np.arange(truth.shape[0]) / 30.0
    for ax, c in zip(axes, strongest):
        ax.plot(t, truth[:, c], label="measured", color="black", linewidth=1.2)
        ax.plot(t, pred[:, c], label="predicted", color="tab:red", linewidth=1.2, linestyle="--")
        ax.set_ylabel(f"ch {c}", fontsize=8)
        ax.set_ylim(-0.05, 1.05)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("time [s]")
    fig.suptitle(f"Muscle activity from expression parameters (held-out {label})")
    path = os.path.join(fig_dir, "envelope_overlay.png")
    os.makedirs(fig_dir, exist_ok=True)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    emitted.append(path)

    fig, (ax_truth, ax_pred) = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    vmax = max(float(truth.max()), float(pred.max()), 1e-6)
    for ax, mat, title in ((ax_truth, truth, "measured"), (ax_pred, pred, "predicted")):
        im = ax.imshow(
            mat.T, aspect="auto", origin="lower", interpolation="nearest",
            extent=(0, truth.shape[0] / 30.0, -0.5, truth.shape[1] - 0.5),
            vmin=0.0, vmax=vmax, cmap="magma",
        )
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("time [s]")
    ax_truth.set_ylabel("channel")
    fig.colorbar(im, ax=(ax_truth, ax_pred), shrink=0.85, label="normalized envelope")
    fig.suptitle(f"Channel heatmap (held-out {label})")
    path = os.path.join(fig_dir, "channel_heatmap.png")
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    emitted.append(path)
    return emitted


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, dataset: bool = False) -> None:
    parser.add_argument("--config", help="YAML config file (defaults used when omitted)")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (dotted path), e.g. --set phase1.stage_epochs=[2,1,1]",
    )
    parser.add_argument(
        "--run-root",
        help=f"runs directory (default: ${RUN_ROOT_ENV} or ./{DEFAULT_RUN_ROOT})",
    )
    if dataset:
        parser.add_argument(
            "--dataset",
            help="dataset directory (default: {run_dir}/dataset)",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emgface",
        description="Electrode-removal and expression<->EMG mapping pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="warm up the occlusion-free encoder")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-p1", help="three-stage adversarial training")
    _add_common(p, dataset=True)
    p.add_argument("--resume", action="store_true", help="resume from the latest checkpoint")
    p.set_defaults(func=cmd_train_phase1)

    p = sub.add_parser("train-p2", help="cross-validated expression<->EMG mapping")
    _add_common(p, dataset=True)
    p.add_argument(
        "--direction",
        choices=["both", *MappingMLP.DIRECTIONS],
        default="both",
        help="mapping direction(s) to train",
    )
    p.set_defaults(func=cmd_train_phase2)

    p = sub.add_parser("eval-recon", help="image metrics of electrode removal")
    _add_common(p, dataset=True)
    p.add_argument("--checkpoint", help="explicit checkpoint path (default: latest)")
    p.add_argument(
        "--split",
        choices=["all", "last-rep"],
        default="all",
        help="frames to evaluate",
    )
    p.add_argument("--limit", type=int, help="cap the number of evaluated frames")
    p.add_argument(
        "--stub",
        action="store_true",
        help="score a perfect-copy stand-in instead of the model (self-test)",
    )
    p.set_defaults(func=cmd_eval_recon)

    p = sub.add_parser("eval-map", help="out-of-fold mapping metrics")
    _add_common(p, dataset=True)
    p.set_defaults(func=cmd_eval_mapping)

    p = sub.add_parser("plot", help="figures from run artifacts")
    _add_common(p, dataset=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
