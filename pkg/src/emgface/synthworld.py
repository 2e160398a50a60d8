"""Synthetic recording world with known ground truth.

Everything the real capture rig would produce is generated here from first
principles: identities with their own face shape, skin tone, and studio
background; a 22-electrode facial montage whose discs ride on the deforming
face; task scripts (eleven functional facial actions plus six posed
emotions) expressed as raised-cosine muscle-activation bursts; a fixed
smooth nonlinear map from muscle activation to expression coefficients (the
"physiology" the mapping networks must recover); and carrier-band raw EMG
whose linear envelope returns the activation up to a per-channel gain.

Because the activation -> expression map and the activation -> EMG path are
both known, every downstream claim (reconstruction quality, mapping
fidelity) can be scored against exact ground truth.

Determinism: every random quantity is drawn from a generator seeded by
hashing a human-readable path of the entity it belongs to (world seed,
participant, session, role), so regenerating any slice of the dataset is
reproducible in isolation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from . import emg
from .face_model import (
    FaceParams,
    ToyMorphableModel,
    build_mesh,
    project_points,
    render_geometry,
    transform_vertices,
)

SAMPLE_RATE_HZ = 4096.0
FRAME_RATE_HZ = 30.0
DATASET_FORMAT = "emgface-dataset/1"

NORMAL_DOMAIN = "normal"
SENSOR_DOMAIN = "sensor"
DOMAINS = (NORMAL_DOMAIN, SENSOR_DOMAIN)

# disc radius as a fraction of image width, at neutral scale
ELECTRODE_RADIUS_FRAC = 0.042
ELECTRODE_COLOR = (0.20, 0.22, 0.25)  # dark housing, strong contrast on skin

_MUSCLES: tuple[tuple[str, float, float], ...] = (
    # (name, |u|, v) in model surface coordinates; +u is the subject's right
    ("frontalis_medial", 0.15, 0.80),
    ("frontalis_lateral", 0.45, 0.75),
    ("corrugator", 0.15, 0.50),
    ("orbicularis_oculi", 0.48, 0.35),
    ("levator_labii", 0.20, 0.00),
    ("zygomaticus", 0.48, -0.10),
    ("orbicularis_oris", 0.15, -0.40),
    ("depressor_anguli", 0.35, -0.60),
    ("mentalis", 0.10, -0.80),
    ("masseter", 0.65, -0.35),
    ("suprahyoid", 0.25, -0.95),
)

SIDES = ("l", "r")


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from a readable path of entity names."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# ---------------------------------------------------------------------------
# electrode montage
# ---------------------------------------------------------------------------


@dataclass
class ElectrodeLayout:
    """The 22-channel montage anchored to model surface vertices."""

    labels: tuple[str, ...]  # per channel, e.g. "zygomaticus_l"
    positions_uv: np.ndarray  # (22, 2) surface coordinates
    vertex_indices: torch.Tensor  # (22,) long: nearest grid vertex
    radius_frac: float


def electrode_labels() -> tuple[str, ...]:
    labels = []
    for name, _, _ in _MUSCLES:
        for side in SIDES:
            labels.append(f"{name}_{side}")
    return tuple(labels)


def build_layout(model: ToyMorphableModel, radius_frac: float = ELECTRODE_RADIUS_FRAC) -> ElectrodeLayout:
    rows, cols = model.grid_rows, model.grid_cols
    labels = electrode_labels()
    positions = np.zeros((len(labels), 2))
    indices = torch.zeros(len(labels), dtype=torch.long)
    k = 0
    for _, mag_u, v in _MUSCLES:
        for side in SIDES:
            u = -mag_u if side == "l" else mag_u
            positions[k] = (u, v)
            col = int(round((cols - 1) / 2 + u * (cols - 1) / 2))
            row = int(round((rows - 1) / 2 + v * (rows - 1) / 2))
            col = min(max(col, 0), cols - 1)
            row = min(max(row, 0), rows - 1)
            indices[k] = row * cols + col
            k += 1
    if len(labels) != emg.N_CHANNELS:
        raise AssertionError("montage size disagrees with the EMG channel count")
    return ElectrodeLayout(
        labels=labels, positions_uv=positions, vertex_indices=indices, radius_frac=radius_frac
    )


# ---------------------------------------------------------------------------
# task scripts
# ---------------------------------------------------------------------------


@dataclass
class TaskTemplate:
    """One scripted facial action: which muscles fire and how hard."""

    name: str
    kind: str  # "functional" | "emotion"
    drive: dict[str, float]  # muscle name (or name_l / name_r) -> peak amplitude


def task_templates() -> tuple[TaskTemplate, ...]:
    f = "functional"
    e = "emotion"
    return (
        TaskTemplate("brow_raise", f, {"frontalis_medial": 1.0, "frontalis_lateral": 0.9}),
        TaskTemplate("brow_furrow", f, {"corrugator": 1.0, "frontalis_medial": 0.2}),
        TaskTemplate("eyes_close_gentle", f, {"orbicularis_oculi": 0.7}),
        TaskTemplate("wink_left", f, {"orbicularis_oculi_l": 1.0}),
        TaskTemplate("wink_right", f, {"orbicularis_oculi_r": 1.0}),
        TaskTemplate("smile_closed", f, {"zygomaticus": 0.8, "levator_labii": 0.3}),
        TaskTemplate("smile_open", f, {"zygomaticus": 1.0, "levator_labii": 0.5, "suprahyoid": 0.4}),
        TaskTemplate("lip_pucker", f, {"orbicularis_oris": 1.0, "mentalis": 0.3}),
        TaskTemplate("jaw_clench", f, {"masseter": 1.0}),
        TaskTemplate("jaw_open", f, {"suprahyoid": 1.0, "masseter": 0.1}),
        TaskTemplate("chin_raise", f, {"mentalis": 1.0, "orbicularis_oris": 0.4}),
        TaskTemplate("happiness", e, {"zygomaticus": 0.9, "orbicularis_oculi": 0.5, "levator_labii": 0.3}),
        TaskTemplate("sadness", e, {"corrugator": 0.6, "depressor_anguli": 0.8, "mentalis": 0.5}),
        TaskTemplate("anger", e, {"corrugator": 1.0, "masseter": 0.7, "orbicularis_oris": 0.3}),
        TaskTemplate(
            "fear",
            e,
            {"frontalis_medial": 0.8, "frontalis_lateral": 0.7, "suprahyoid": 0.5, "orbicularis_oculi": 0.3},
        ),
        TaskTemplate("disgust", e, {"levator_labii": 1.0, "corrugator": 0.5, "mentalis": 0.4}),
        TaskTemplate(
            "surprise",
            e,
            {"frontalis_medial": 1.0, "frontalis_lateral": 1.0, "suprahyoid": 0.7, "orbicularis_oculi": 0.2},
        ),
    )


TASK_NAMES = tuple(t.name for t in task_templates())


def _drive_vector(template: TaskTemplate) -> np.ndarray:
    """Expand the muscle drive map to a per-channel amplitude vector."""
    labels = electrode_labels()
    amp = np.zeros(len(labels))
    for key, value in template.drive.items():
        if key.endswith("_l") or key.endswith("_r"):
            targets = [key]
        else:
            targets = [f"{key}_l", f"{key}_r"]
        for target in targets:
            if target not in labels:
                raise KeyError(f"task {template.name!r} drives unknown channel {target!r}")
            amp[labels.index(target)] = value
    return amp


def activation_curve(
    template: TaskTemplate, duration_s: float, sample_rate: float, seed: int
) -> np.ndarray:
    """Raised-cosine activation burst for one repetition, shape (T, 22).

    Rest - burst - rest, with small seeded jitter in onset, width, and
    per-channel amplitude so repetitions are similar but not identical.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    onset = duration_s * (0.20 + rng.uniform(-0.05, 0.05))
    width = duration_s * (0.60 + rng.uniform(-0.05, 0.05))
    phase = np.clip((t - onset) / width, 0.0, 1.0)
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * phase))
    amp = _drive_vector(template) * rng.uniform(0.9, 1.1, size=emg.N_CHANNELS)
    return window[:, None] * amp[None, :]


# ---------------------------------------------------------------------------
# activation -> expression oracle
# ---------------------------------------------------------------------------

_ORACLE_HIDDEN = 48
_ORACLE_W1_SCALE = 1.2
_ORACLE_W2_SCALE = 2.8
# per-component output range: expression block, eyelids, jaw
_ORACLE_OUTPUT_SCALE = np.concatenate([np.full(8, 0.85), np.full(2, 0.90), np.full(3, 0.70)])


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(x, 0.0)


@dataclass
class ExpressionOracle:
    """Fixed smooth map from 22-channel activation to the 13 expression
    coefficients (expression block, eyelids, jaw), with a rest state of
    exactly zero."""

    w1: np.ndarray  # (H, 22)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (13, H)
    output_scale: np.ndarray  # (13,)

    def __call__(self, activation: np.ndarray) -> np.ndarray:
        a = np.asarray(activation, dtype=np.float64)
        squeeze = a.ndim == 1
        if squeeze:
            a = a[None]
        if a.shape[-1] != self.w1.shape[1]:
            raise ValueError(f"activation must have {self.w1.shape[1]} channels, got {a.shape[-1]}")
        hidden = _softplus(a @ self.w1.T + self.b1)
        rest = _softplus(self.b1)
        out = np.tanh((hidden - rest) @ self.w2.T) * self.output_scale
        return out[0] if squeeze else out

    def lipschitz_bound(self) -> float:
        """Product of spectral norms (softplus and tanh are 1-Lipschitz),
        times the largest output scale."""
        s1 = np.linalg.svd(self.w1, compute_uv=False)[0]
        s2 = np.linalg.svd(self.w2, compute_uv=False)[0]
        return float(s1 * s2 * self.output_scale.max())


def build_oracle(seed: int) -> ExpressionOracle:
    rng = np.random.default_rng(derive_seed("oracle", seed))
    w1 = rng.normal(0.0, _ORACLE_W1_SCALE / np.sqrt(emg.N_CHANNELS), size=(_ORACLE_HIDDEN, emg.N_CHANNELS))
    b1 = rng.normal(0.0, 0.5, size=_ORACLE_HIDDEN)
    w2 = rng.normal(0.0, _ORACLE_W2_SCALE / np.sqrt(_ORACLE_HIDDEN), size=(13, _ORACLE_HIDDEN))
    return ExpressionOracle(w1=w1, b1=b1, w2=w2, output_scale=_ORACLE_OUTPUT_SCALE.copy())


# ---------------------------------------------------------------------------
# raw EMG synthesis
# ---------------------------------------------------------------------------


def carrier_frequencies() -> np.ndarray:
    """One carrier per channel, spread over the typical sEMG power band."""
    return np.linspace(70.0, 196.0, emg.N_CHANNELS)


def channel_gains(seed: int) -> np.ndarray:
    """Per-channel electrode gain (skin impedance spread), in [0.7, 1.3]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.7, 1.3, size=emg.N_CHANNELS)


def synthesize_raw_emg(
    activation: np.ndarray, sample_rate: float, gains: np.ndarray, seed: int
) -> np.ndarray:
    """Amplitude-modulated carrier plus measurement noise, shape (T, 22).

    The rectified mean of a sine of amplitude ``g*A`` is ``(2/pi)*g*A``, so
    the linear envelope of this signal recovers the activation up to the
    per-channel gain that normalization later removes.
    """
    activation = np.asarray(activation, dtype=np.float64)
    if activation.ndim != 2 or activation.shape[1] != emg.N_CHANNELS:
        raise ValueError(f"activation must be (T, {emg.N_CHANNELS}), got {activation.shape}")
    rng = np.random.default_rng(seed)
    n = activation.shape[0]
    t = np.arange(n)[:, None] / sample_rate
    freqs = carrier_frequencies()[None, :]
    phases = rng.uniform(0.0, 2.0 * np.pi, size=emg.N_CHANNELS)[None, :]
    carrier = np.sin(2.0 * np.pi * freqs * t + phases)
    noise = rng.normal(0.0, 1.0, size=activation.shape) * (0.01 * gains)[None, :]
    return gains[None, :] * activation * carrier + noise


# ---------------------------------------------------------------------------
# identities and appearance
# ---------------------------------------------------------------------------


@dataclass
class Identity:
    participant: str
    shape_coeffs: torch.Tensor  # (n_shape,) float64
    skin_rgb: np.ndarray  # (3,)
    background: np.ndarray  # (2, 3): gradient endpoint colors
    seed: int


def make_identity(index: int, world_seed: int, n_shape: int) -> Identity:
    seed = derive_seed("identity", world_seed, index)
    rng = np.random.default_rng(seed)
    shape = np.clip(rng.normal(0.0, 0.45, size=n_shape), -1.2, 1.2)
    base_skin = np.array([0.94, 0.78, 0.66])
    skin = np.clip(base_skin * (1.0 + rng.uniform(-0.18, 0.18, size=3)), 0.35, 0.98)
    background = rng.uniform(0.10, 0.45, size=(2, 3))
    return Identity(
        participant=f"p{index + 1:02d}",
        shape_coeffs=torch.tensor(shape, dtype=torch.float64),
        skin_rgb=skin,
        background=background,
        seed=seed,
    )


def pose_trajectory(n_frames: int, frame_rate: float, seed: int) -> torch.Tensor:
    """Slow seeded head drift: per-dimension offset plus one sinusoid.

    Stays within the world pose envelope (|rotation| <= 0.12 rad,
    |translation| <= 0.05, |log-scale| <= 0.10), which in turn is the range
    the face-crop framing keeps fully inside the frame.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) / frame_rate
    offsets = np.concatenate(
        [rng.uniform(-0.05, 0.05, 3), rng.uniform(-0.03, 0.03, 2), rng.uniform(-0.05, 0.05, 1)]
    )
    amps = np.concatenate(
        [rng.uniform(0.02, 0.05, 3), rng.uniform(0.01, 0.02, 2), rng.uniform(0.02, 0.05, 1)]
    )
    freqs = rng.uniform(0.2, 0.5, 6)
    phases = rng.uniform(0.0, 2.0 * np.pi, 6)
    pose = offsets[None, :] + amps[None, :] * np.sin(2.0 * np.pi * freqs[None, :] * t[:, None] + phases[None, :])
    return torch.tensor(pose, dtype=torch.float64)


def _smoothstep(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    s = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def background_image(identity: Identity, resolution: int) -> np.ndarray:
    """Diagonal two-color studio gradient, shape (H, W, 3)."""
    idx = np.arange(resolution)
    q = (idx[:, None] + idx[None, :]) / (2.0 * (resolution - 1))
    c0, c1 = identity.background
    return c0[None, None, :] + (c1 - c0)[None, None, :] * q[:, :, None]


def electrode_centers(
    model: ToyMorphableModel, params: FaceParams, layout: ElectrodeLayout, resolution: int
) -> torch.Tensor:
    """Projected (x, y) image positions of the electrode anchor vertices."""
    vertices = build_mesh(model, params)
    rotated = transform_vertices(vertices, params.pose)
    projected = project_points(rotated, params.pose, model.base_scale, resolution)
    return projected[layout.vertex_indices]


def electrode_alpha(
    model: ToyMorphableModel,
    params: FaceParams,
    layout: ElectrodeLayout,
    resolution: int,
) -> np.ndarray:
    """Combined antialiased disc coverage in [0, 1], shape (H, W).

    Disc radius follows the rig scale so electrodes shrink and grow with
    the face; edges get a one-pixel linear ramp.
    """
    centers = electrode_centers(model, params, layout, resolution).detach().cpu().numpy()
    radius = layout.radius_frac * resolution * float(np.exp(params.pose[5].item()))
    xs = np.arange(resolution) + 0.0
    ys = np.arange(resolution) + 0.0
    dx = xs[None, None, :] - centers[:, 0][:, None, None]
    dy = ys[None, :, None] - centers[:, 1][:, None, None]
    dist = np.sqrt(dx * dx + dy * dy)
    alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    return 1.0 - np.prod(1.0 - alpha, axis=0)


@dataclass
class FramePair:
    normal: np.ndarray  # (H, W, 3) float64 in [0, 1]
    sensor: np.ndarray  # (H, W, 3) float64 in [0, 1]
    occlusion: np.ndarray  # (H, W) float64: electrode disc coverage


def render_frame_pair(
    model: ToyMorphableModel,
    identity: Identity,
    params: FaceParams,
    layout: ElectrodeLayout,
    resolution: int,
) -> FramePair:
    """Render the same instant with and without the electrode montage.

    Outside the discs the two frames are identical by construction; that is
    the invariant the whole translation problem rests on.
    """
    with torch.no_grad():
        geo = render_geometry(model, params, resolution)
    intensity = geo.image.detach().cpu().numpy()
    alpha = _smoothstep(intensity, 0.02, 0.12)[:, :, None]
    face = identity.skin_rgb[None, None, :] * (0.35 + 0.65 * intensity[:, :, None])
    normal = alpha * face + (1.0 - alpha) * background_image(identity, resolution)
    normal = np.clip(normal, 0.0, 1.0)
    occlusion = electrode_alpha(model, params, layout, resolution)
    disc = np.asarray(ELECTRODE_COLOR)[None, None, :]
    sensor = (1.0 - occlusion[:, :, None]) * normal + occlusion[:, :, None] * disc
    return FramePair(normal=normal, sensor=np.clip(sensor, 0.0, 1.0), occlusion=occlusion)


def image_to_png_bytes(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def save_png(path: str, image: np.ndarray) -> None:
    Image.fromarray(image_to_png_bytes(image)).save(path, format="PNG")


def load_image(path: str) -> torch.Tensor:
    """PNG -> (H, W, 3) float32 tensor in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


# ---------------------------------------------------------------------------
# world specifications
# ---------------------------------------------------------------------------


@dataclass
class WorldSpec:
    name: str
    participants: int
    tasks: tuple[str, ...]
    repetitions: int
    snippet_seconds: float
    resolution: int
    seed: int

    def frames_per_snippet(self) -> int:
        n_samples = int(round(self.snippet_seconds * SAMPLE_RATE_HZ))
        return emg.resample_count(n_samples, SAMPLE_RATE_HZ, FRAME_RATE_HZ)


def world_phase1(seed: int = 101) -> WorldSpec:
    """Reconstruction-phase world: few tasks, many identities and frames."""
    return WorldSpec(
        name="phase1",
        participants=8,
        tasks=("smile_open", "brow_raise"),
        repetitions=3,
        snippet_seconds=1.4,
        resolution=64,
        seed=seed,
    )


def world_phase1_small(seed: int = 101) -> WorldSpec:
    """Reduced reconstruction world for fast end-to-end checks."""
    return WorldSpec(
        name="phase1-small",
        participants=2,
        tasks=("smile_open", "brow_raise"),
        repetitions=3,
        snippet_seconds=1.4,
        resolution=64,
        seed=seed,
    )


def world_phase2(seed: int = 202) -> WorldSpec:
    """Mapping-phase world: every task, three repetitions per participant."""
    return WorldSpec(
        name="phase2",
        participants=6,
        tasks=TASK_NAMES,
        repetitions=3,
        snippet_seconds=1.4,
        resolution=64,
        seed=seed,
    )


def world_tiny(seed: int = 303) -> WorldSpec:
    """Smallest coherent world, for unit tests."""
    return WorldSpec(
        name="tiny",
        participants=2,
        tasks=("smile_open",),
        repetitions=2,
        snippet_seconds=0.7,
        resolution=64,
        seed=seed,
    )


WORLD_PRESETS = {
    "phase1": world_phase1,
    "phase1-small": world_phase1_small,
    "phase2": world_phase2,
    "tiny": world_tiny,
}


def world_from_config(config) -> WorldSpec:
    """WorldSpec from a run configuration's ``world`` section (plus the
    render resolution from its ``model`` section)."""
    w = config.world
    return WorldSpec(
        name=w.name,
        participants=w.participants,
        tasks=tuple(w.tasks),
        repetitions=w.repetitions,
        snippet_seconds=w.snippet_seconds,
        resolution=config.model.resolution,
        seed=w.world_seed,
    )


def sample_world_params(seed: int, n_shape: int = 8, n_expression: int = 8) -> FaceParams:
    """One draw from the world parameter distribution (used for encoder
    warm-up frames; task recordings use the activation oracle instead)."""
    gen = torch.Generator().manual_seed(seed)

    def uniform(n: int, lo: float, hi: float) -> torch.Tensor:
        return torch.rand(n, generator=gen, dtype=torch.float64) * (hi - lo) + lo

    params = FaceParams(
        shape_coeffs=(torch.randn(n_shape, generator=gen, dtype=torch.float64) * 0.45).clamp(-1.2, 1.2),
        expression=(torch.randn(n_expression, generator=gen, dtype=torch.float64) * 0.45).clamp(-0.9, 0.9),
        eyelids=uniform(2, 0.0, 1.2),
        jaw=uniform(3, 0.0, 0.8),
        pose=torch.cat([uniform(3, -0.12, 0.12), uniform(2, -0.05, 0.05), uniform(1, -0.10, 0.10)]),
    )
    return params


# ---------------------------------------------------------------------------
# snippet synthesis
# ---------------------------------------------------------------------------


@dataclass
class Snippet:
    """One repetition of one task by one participant, fully synthesized."""

    participant: str
    session: str  # "<task>_r<k>"
    task: str
    repetition: int
    raw_emg: np.ndarray  # (T, 22) at the acquisition rate
    envelope: np.ndarray  # (F, 22) frame-aligned linear envelope (unnormalized)
    activation_frames: np.ndarray  # (F, 22) ground-truth activation on the frame grid
    triplets: np.ndarray  # (F, 13) ground-truth expression coefficients
    poses: torch.Tensor  # (F, 6)


def synthesize_snippet(
    spec: WorldSpec,
    oracle: ExpressionOracle,
    identity: Identity,
    gains: np.ndarray,
    task_name: str,
    repetition: int,
) -> Snippet:
    templates = {t.name: t for t in task_templates()}
    if task_name not in templates:
        raise KeyError(f"unknown task {task_name!r}")
    session = f"{task_name}_r{repetition + 1}"
    snippet_seed = derive_seed("snippet", spec.seed, identity.participant, session)
    activation = activation_curve(
        templates[task_name], spec.snippet_seconds, SAMPLE_RATE_HZ, derive_seed(snippet_seed, "activation")
    )
    raw = synthesize_raw_emg(activation, SAMPLE_RATE_HZ, gains, derive_seed(snippet_seed, "carrier"))
    envelope = emg.envelope_frames(raw, SAMPLE_RATE_HZ, FRAME_RATE_HZ)
    n_frames = envelope.shape[0]
    # ground truth lives on the same frame grid as the measured envelope
    activation_frames = np.clip(emg.fft_resample(activation, n_frames), 0.0, None)
    triplets = oracle(activation_frames)
    poses = pose_trajectory(n_frames, FRAME_RATE_HZ, derive_seed(snippet_seed, "pose"))
    return Snippet(
        participant=identity.participant,
        session=session,
        task=task_name,
        repetition=repetition,
        raw_emg=raw,
        envelope=envelope,
        activation_frames=activation_frames,
        triplets=triplets,
        poses=poses,
    )


def snippet_frame_params(identity: Identity, snippet: Snippet, frame: int) -> FaceParams:
    triplet = torch.tensor(snippet.triplets[frame], dtype=torch.float64)
    return FaceParams(
        shape_coeffs=identity.shape_coeffs.clone(),
        expression=triplet[:8],
        eyelids=triplet[8:10],
        jaw=triplet[10:13],
        pose=snippet.poses[frame].clone(),
    )


# ---------------------------------------------------------------------------
# dataset writing
# ---------------------------------------------------------------------------


def _session_list(spec: WorldSpec) -> list[tuple[str, int]]:
    return [(task, rep) for task in spec.tasks for rep in range(spec.repetitions)]


def generate_dataset(model: ToyMorphableModel, spec: WorldSpec, out_dir: str) -> dict:
    """Write the full image+EMG dataset for a world; returns the fingerprint.

    Layout, per participant and session::

        {out_dir}/fingerprint.json
        {out_dir}/{participant}/normalization.json
        {out_dir}/{participant}/{session}/emg_raw.csv
        {out_dir}/{participant}/{session}/emg_envelope.csv
        {out_dir}/{participant}/{session}/params.jsonl
        {out_dir}/{participant}/{session}/{normal|sensor}/{frame:06d}.png
    """
    if model.n_shape <= 0:
        raise ValueError("model must carry a shape basis")
    oracle = build_oracle(spec.seed)
    layout = build_layout(model)
    os.makedirs(out_dir, exist_ok=True)
    sessions_meta: dict[str, list[dict]] = {}
    for p_idx in range(spec.participants):
        identity = make_identity(p_idx, spec.seed, model.n_shape)
        gains = channel_gains(derive_seed("gains", spec.seed, identity.participant))
        p_dir = os.path.join(out_dir, identity.participant)
        os.makedirs(p_dir, exist_ok=True)
        envelopes = []
        snippets = []
        for task_name, rep in _session_list(spec):
            snippet = synthesize_snippet(spec, oracle, identity, gains, task_name, rep)
            snippets.append(snippet)
            envelopes.append(snippet.envelope)
        norm = emg.channel_maxima(envelopes)
        emg.write_normalization(os.path.join(p_dir, "normalization.json"), identity.participant, norm)
        sessions_meta[identity.participant] = []
        for snippet in snippets:
            s_dir = os.path.join(p_dir, snippet.session)
            for domain in DOMAINS:
                os.makedirs(os.path.join(s_dir, domain), exist_ok=True)
            n_frames = snippet.envelope.shape[0]
            task_col = np.asarray([snippet.task] * snippet.raw_emg.shape[0])
            emg.write_raw_csv(
                os.path.join(s_dir, "emg_raw.csv"),
                emg.RawEmgTable(identity.participant, snippet.session, task_col, snippet.raw_emg),
            )
            emg.write_envelope_csv(
                os.path.join(s_dir, "emg_envelope.csv"),
                emg.EnvelopeTable(
                    identity.participant,
                    snippet.session,
                    np.asarray([snippet.task] * n_frames),
                    snippet.envelope,
                ),
            )
            with open(os.path.join(s_dir, "params.jsonl"), "w", encoding="utf-8") as fh:
                for k in range(n_frames):
                    params = snippet_frame_params(identity, snippet, k)
                    pair = render_frame_pair(model, identity, params, layout, spec.resolution)
                    save_png(os.path.join(s_dir, NORMAL_DOMAIN, f"{k:06d}.png"), pair.normal)
                    save_png(os.path.join(s_dir, SENSOR_DOMAIN, f"{k:06d}.png"), pair.sensor)
                    record = {
                        "frame": k,
                        "shape": params.shape_coeffs.tolist(),
                        "expression": params.expression.tolist(),
                        "eyelids": params.eyelids.tolist(),
                        "jaw": params.jaw.tolist(),
                        "pose": params.pose.tolist(),
                        "activation": snippet.activation_frames[k].tolist(),
                    }
                    fh.write(json.dumps(record) + "\n")
            sessions_meta[identity.participant].append(
                {"session": snippet.session, "task": snippet.task, "frames": n_frames}
            )
    fingerprint = {
        "format": DATASET_FORMAT,
        "world": spec.name,
        "seed": spec.seed,
        "resolution": spec.resolution,
        "sample_rate_hz": SAMPLE_RATE_HZ,
        "frame_rate_hz": FRAME_RATE_HZ,
        "snippet_seconds": spec.snippet_seconds,
        "tasks": list(spec.tasks),
        "repetitions": spec.repetitions,
        "electrode_radius_frac": ELECTRODE_RADIUS_FRAC,
        "participants": sessions_meta,
        "spec": dataclasses.asdict(spec),
    }
    with open(os.path.join(out_dir, "fingerprint.json"), "w", encoding="utf-8") as fh:
        json.dump(fingerprint, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return fingerprint


# ---------------------------------------------------------------------------
# dataset access
# ---------------------------------------------------------------------------


@dataclass
class SessionRef:
    participant: str
    session: str
    task: str
    n_frames: int
    directory: str

    def frame_path(self, domain: str, frame: int) -> str:
        if domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")
        return os.path.join(self.directory, domain, f"{frame:06d}.png")


@dataclass
class DatasetIndex:
    root: str
    fingerprint: dict
    sessions: list[SessionRef]

    @property
    def resolution(self) -> int:
        return int(self.fingerprint["resolution"])

    def participants(self) -> list[str]:
        return sorted({s.participant for s in self.sessions})

    def sessions_for(self, participant: str) -> list[SessionRef]:
        return [s for s in self.sessions if s.participant == participant]

    def total_frames(self) -> int:
        return sum(s.n_frames for s in self.sessions)


def load_dataset_index(root: str) -> DatasetIndex:
    path = os.path.join(root, "fingerprint.json")
    with open(path, encoding="utf-8") as fh:
        fingerprint = json.load(fh)
    if fingerprint.get("format") != DATASET_FORMAT:
        raise ValueError(f"unrecognized dataset format in {path}: {fingerprint.get('format')!r}")
    sessions = []
    for participant in sorted(fingerprint["participants"]):
        for meta in fingerprint["participants"][participant]:
            sessions.append(
                SessionRef(
                    participant=participant,
                    session=meta["session"],
                    task=meta["task"],
                    n_frames=int(meta["frames"]),
                    directory=os.path.join(root, participant, meta["session"]),
                )
            )
    return DatasetIndex(root=root, fingerprint=fingerprint, sessions=sessions)


def read_session_params(ref: SessionRef) -> list[dict]:
    records = []
    with open(os.path.join(ref.directory, "params.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            records.append(json.loads(line))
    return records


def params_from_record(record: dict) -> FaceParams:
    return FaceParams(
        shape_coeffs=torch.tensor(record["shape"], dtype=torch.float64),
        expression=torch.tensor(record["expression"], dtype=torch.float64),
        eyelids=torch.tensor(record["eyelids"], dtype=torch.float64),
        jaw=torch.tensor(record["jaw"], dtype=torch.float64),
        pose=torch.tensor(record["pose"], dtype=torch.float64),
    )


@dataclass(frozen=True)
class FrameRef:
    session_index: int
    frame: int


@dataclass
class UnpairedSample:
    normal: FrameRef
    sensor: FrameRef


def unpaired_epoch(index: DatasetIndex, seed: int) -> list[UnpairedSample]:
    """One epoch of unpaired same-participant frame pairs.

    Every frame of the clean domain appears exactly once, in seeded random
    order; its partner is a uniformly drawn frame of the sensor domain from
    a *different* session of the same participant, so the pair shares an
    identity but never an instant.
    """
    rng = np.random.default_rng(seed)
    by_participant: dict[str, list[int]] = {}
    for i, ref in enumerate(index.sessions):
        by_participant.setdefault(ref.participant, []).append(i)
    frames = [
        FrameRef(i, k) for i, ref in enumerate(index.sessions) for k in range(ref.n_frames)
    ]
    order = rng.permutation(len(frames))
    samples = []
    for pos in order:
        n_ref = frames[pos]
        participant = index.sessions[n_ref.session_index].participant
        other_sessions = [i for i in by_participant[participant] if i != n_ref.session_index]
        if not other_sessions:
            raise ValueError(
                f"participant {participant} has a single session; unpaired sampling "
                "requires at least two"
            )
        s_sess = int(rng.choice(np.asarray(other_sessions)))
        s_frame = int(rng.integers(index.sessions[s_sess].n_frames))
        samples.append(UnpairedSample(normal=n_ref, sensor=FrameRef(s_sess, s_frame)))
    return samples


def load_frame(index: DatasetIndex, ref: FrameRef, domain: str) -> torch.Tensor:
    return load_image(index.sessions[ref.session_index].frame_path(domain, ref.frame))


# ---------------------------------------------------------------------------
# mapping-phase streaming (no images needed)
# ---------------------------------------------------------------------------


@dataclass
class MappingDataset:
    """Frame-aligned (normalized EMG, expression) pairs grouped by snippet."""

    emg_frames: np.ndarray  # (N, 22) normalized envelope
    triplets: np.ndarray  # (N, 13)
    snippet_ids: np.ndarray  # (N,) int: index into snippet_labels
    snippet_labels: list[str]  # "participant/session"
    participants: list[str]  # per snippet


def stream_mapping_dataset(spec: WorldSpec) -> MappingDataset:
    """Synthesize the mapping-phase dataset in memory (EMG and expression
    only; rendering is not needed to learn the mapping)."""
    oracle = build_oracle(spec.seed)
    emg_rows, triplet_rows, snippet_ids = [], [], []
    labels: list[str] = []
    participants: list[str] = []
    for p_idx in range(spec.participants):
        identity = make_identity(p_idx, spec.seed, n_shape=8)
        gains = channel_gains(derive_seed("gains", spec.seed, identity.participant))
        snippets = [
            synthesize_snippet(spec, oracle, identity, gains, task, rep)
            for task, rep in _session_list(spec)
        ]
        norm = emg.channel_maxima([s.envelope for s in snippets])
        for snippet in snippets:
            sid = len(labels)
            labels.append(f"{identity.participant}/{snippet.session}")
            participants.append(identity.participant)
            normalized = emg.normalize(snippet.envelope, norm)
            emg_rows.append(normalized)
            triplet_rows.append(snippet.triplets)
            snippet_ids.append(np.full(snippet.envelope.shape[0], sid, dtype=np.int64))
    return MappingDataset(
        emg_frames=np.concatenate(emg_rows, axis=0),
        triplets=np.concatenate(triplet_rows, axis=0),
        snippet_ids=np.concatenate(snippet_ids, axis=0),
        snippet_labels=labels,
        participants=participants,
    )


def mapping_dataset_from_index(index: DatasetIndex) -> MappingDataset:
    """Assemble the mapping-phase dataset from a dataset directory.

    Reads the per-participant normalization constants, the per-session
    envelope tables, and the per-frame expression records; snippet order
    matches :func:`stream_mapping_dataset` for the same world, so fold
    partitions agree between the streamed and on-disk routes.
    """
    emg_rows, triplet_rows, snippet_ids = [], [], []
    labels: list[str] = []
    participants: list[str] = []
    norms: dict[str, emg.EmgNormalization] = {}
    for ref in index.sessions:
        if ref.participant not in norms:
            stored, norm = emg.read_normalization(
                os.path.join(index.root, ref.participant, "normalization.json")
            )
            if stored != ref.participant:
                raise ValueError(
                    f"normalization file under {ref.participant} labeled {stored!r}"
                )
            norms[ref.participant] = norm
        table = emg.read_envelope_csv(os.path.join(ref.directory, "emg_envelope.csv"))
        records = read_session_params(ref)
        if len(records) != table.values.shape[0]:
            raise ValueError(
                f"{ref.participant}/{ref.session}: {len(records)} frame records vs "
                f"{table.values.shape[0]} envelope rows"
            )
        triplets = np.asarray(
            [rec["expression"] + rec["eyelids"] + rec["jaw"] for rec in records],
            dtype=np.float64,
        )
        sid = len(labels)
        labels.append(f"{ref.participant}/{ref.session}")
        participants.append(ref.participant)
        emg_rows.append(emg.normalize(table.values, norms[ref.participant]))
        triplet_rows.append(triplets)
        snippet_ids.append(np.full(len(records), sid, dtype=np.int64))
    return MappingDataset(
        emg_frames=np.concatenate(emg_rows, axis=0),
        triplets=np.concatenate(triplet_rows, axis=0),
        snippet_ids=np.concatenate(snippet_ids, axis=0),
        snippet_labels=labels,
        participants=participants,
    )


def five_fold_snippets(n_snippets: int, seed: int, folds: int = 5) -> list[np.ndarray]:
    """Deterministic partition of snippet indices into cross-validation
    folds; every snippet lands in exactly one fold."""
    if n_snippets < folds:
        raise ValueError(f"need at least {folds} snippets for {folds}-fold splitting, got {n_snippets}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_snippets)
    return [np.sort(order[i::folds]) for i in range(folds)]
