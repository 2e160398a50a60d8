"""Neural building blocks: parameter encoders, render-conditioned
translation generators, least-squares discriminators, and the two
expression/EMG mapping MLPs, plus the composed encoder+generator cycle
used by the adversarial phase.

Batch size is 1 throughout the adversarial phase, so all image networks use
instance normalization (no batch statistics, identical behavior in train
and eval).  Upsampling is nearest-neighbor followed by a convolution rather
than a transposed convolution, avoiding checkerboard artifacts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from torch import nn

from .config import NetworkConfig
from .face_model import FaceParams, GeometryRender, PixelMask, ToyMorphableModel, render_geometry, sample_pixels

EXPRESSION_TRIPLET_DIM_OFFSET = 5  # eyelids (2) + jaw (3) beyond the expression block


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


class SubEncoder(nn.Module):
    """Strided conv stack -> fixed 4x4 spatial pool -> linear head.

    The head sees a flattened spatial grid rather than a global average:
    rigid pose (especially translation) is only recoverable if the features
    keep their positions.
    """

    POOLED = 4

    def __init__(self, in_channels: int, out_dim: int, widths: tuple[int, ...]):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for w in widths:
            layers.append(nn.Conv2d(prev, w, kernel_size=3, stride=2, padding=1))
            layers.append(nn.ReLU(inplace=True))
            prev = w
        layers.append(nn.AdaptiveAvgPool2d(self.POOLED))
        self.backbone = nn.Sequential(*layers)
        self.head = nn.Linear(prev * self.POOLED * self.POOLED, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.backbone(x)
        return self.head(feats.flatten(1))


class EncoderBundle(nn.Module):
    """Image -> morphable-model parameters, as three sub-networks.

    The identity, expression-triplet, and rigid-pose blocks each get their
    own convolutional regressor so the training protocol can freeze or
    supervise them independently.
    """

    def __init__(self, config: NetworkConfig, n_shape: int, n_expression: int, resolution: int, image_channels: int = 3):
        super().__init__()
        self.n_shape = n_shape
        self.n_expression = n_expression
        self.resolution = resolution
        self.image_channels = image_channels
        widths = tuple(config.encoder_widths)
        self.shape_net = SubEncoder(image_channels, n_shape, widths)
        self.expression_net = SubEncoder(image_channels, n_expression + EXPRESSION_TRIPLET_DIM_OFFSET, widths)
        self.pose_net = SubEncoder(image_channels, 6, widths)

    def _to_batch(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 3 or image.shape[2] != self.image_channels:
            raise ValueError(f"expected (H, W, {self.image_channels}) image, got {tuple(image.shape)}")
        if image.shape[0] != self.resolution or image.shape[1] != self.resolution:
            raise ValueError(
                f"encoder expects {self.resolution}x{self.resolution} input, got {tuple(image.shape[:2])}"
            )
        return image.permute(2, 0, 1)[None]

    def forward(self, image: torch.Tensor) -> FaceParams:
        x = self._to_batch(image)
        shape_coeffs = self.shape_net(x)[0]
        triplet = self.expression_net(x)[0]
        pose = self.pose_net(x)[0]
        return FaceParams(
            shape_coeffs=shape_coeffs,
            expression=triplet[: self.n_expression],
            eyelids=triplet[self.n_expression : self.n_expression + 2],
            jaw=triplet[self.n_expression + 2 :],
            pose=pose,
        )

    def encode(self, image: torch.Tensor) -> FaceParams:
        return self(image)

    def encode_batch(self, images: torch.Tensor) -> torch.Tensor:
        """Batched regression of the full parameter row.

        ``images`` is (B, H, W, C); the result is (B, n_shape + triplet + 6)
        with blocks ordered shape, expression triplet, pose — the layout the
        supervised warm-up loss compares against.
        """
        if images.ndim != 4 or images.shape[3] != self.image_channels:
            raise ValueError(f"expected (B, H, W, {self.image_channels}) batch, got {tuple(images.shape)}")
        x = images.permute(0, 3, 1, 2)
        return torch.cat([self.shape_net(x), self.expression_net(x), self.pose_net(x)], dim=1)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class GeneratorNet(nn.Module):
    """Render-conditioned domain translator.

    Takes the rendered geometry (one channel) concatenated with the
    sparsely retained appearance (``image_channels``) and produces a full
    appearance image in [0, 1].  Residual trunk at half resolution;
    upsampling is nearest + conv.
    """

    def __init__(self, config: NetworkConfig, image_channels: int = 3):
        super().__init__()
        self.image_channels = image_channels
        stem, depth = config.generator_stem, config.generator_depth
        self.net = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(1 + image_channels, stem, kernel_size=7),
            nn.InstanceNorm2d(stem, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(stem, depth, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(depth, affine=True),
            nn.ReLU(inplace=True),
            *[ResidualBlock(depth) for _ in range(config.generator_blocks)],
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(depth, stem, kernel_size=3, padding=1),
            nn.InstanceNorm2d(stem, affine=True),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(stem, image_channels, kernel_size=7),
            nn.Sigmoid(),
        )

    def forward(self, render: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
        if render.ndim != 2:
            raise ValueError(f"render must be (H, W), got {tuple(render.shape)}")
        if masked.ndim != 3 or masked.shape[2] != self.image_channels:
            raise ValueError(f"masked appearance must be (H, W, {self.image_channels}), got {tuple(masked.shape)}")
        if masked.shape[:2] != render.shape:
            raise ValueError("render and masked appearance disagree on resolution")
        x = torch.cat([render[None], masked.permute(2, 0, 1)], dim=0)[None]
        out = self.net(x)[0]
        return out.permute(1, 2, 0)

    def generate(self, render: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
        return self(render, masked)


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------


class DiscriminatorNet(nn.Module):
    """Three strided conv layers into a two-logit least-squares head."""

    def __init__(self, config: NetworkConfig, image_channels: int = 3):
        super().__init__()
        self.image_channels = image_channels
        w1, w2, w3 = config.discriminator_widths
        self.features = nn.Sequential(
            nn.Conv2d(image_channels, w1, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w1, w2, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(w2, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w2, w3, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(w3, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.head = nn.Linear(w3, 2)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 3 or image.shape[2] != self.image_channels:
            raise ValueError(f"expected (H, W, {self.image_channels}) image, got {tuple(image.shape)}")
        x = image.permute(2, 0, 1)[None]
        feats = self.features(x).mean(dim=(2, 3))
        return self.head(feats)[0]


# ---------------------------------------------------------------------------
# expression <-> EMG mapping
# ---------------------------------------------------------------------------


class MappingMLP(nn.Module):
    """Six fully connected layers with ReLU between; the output head is
    Tanh toward expressions (bounded coefficients) and ReLU toward EMG
    (nonnegative envelopes)."""

    DIRECTIONS = ("emg2exp", "exp2emg")

    def __init__(self, direction: str, emg_dim: int, expression_dim: int, hidden: int = 256, layers: int = 6):
        super().__init__()
        if direction not in self.DIRECTIONS:
            raise ValueError(f"direction must be one of {self.DIRECTIONS}, got {direction!r}")
        if layers < 2:
            raise ValueError("need at least input and output layers")
        self.direction = direction
        in_dim, out_dim = (emg_dim, expression_dim) if direction == "emg2exp" else (expression_dim, emg_dim)
        self.in_dim, self.out_dim = in_dim, out_dim
        mods: list[nn.Module] = []
        prev = in_dim
        for _ in range(layers - 1):
            mods.append(nn.Linear(prev, hidden))
            mods.append(nn.ReLU(inplace=True))
            prev = hidden
        mods.append(nn.Linear(prev, out_dim))
        mods.append(nn.Tanh() if direction == "emg2exp" else nn.ReLU(inplace=True))
        self.net = nn.Sequential(*mods)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (B, {self.in_dim}) input for {self.direction}, got {tuple(x.shape)}")
        return self.net(x)


# ---------------------------------------------------------------------------
# cycle composition
# ---------------------------------------------------------------------------


@dataclass
class CyclePair:
    """One direction of the translation cycle: encode, re-render, generate."""

    encoder: EncoderBundle
    generator: GeneratorNet


@dataclass
class HalfCycle:
    """Artifacts of one encode->render->mask->generate pass."""

    params: FaceParams
    render: GeometryRender
    masked: torch.Tensor
    mask: PixelMask
    output: torch.Tensor


@dataclass
class CycleOutputs:
    first: HalfCycle  # input image -> translated (fake) image
    second: HalfCycle  # fake image -> reconstructed image

    @property
    def fake(self) -> torch.Tensor:
        return self.first.output

    @property
    def reconstruction(self) -> torch.Tensor:
        return self.second.output


def _has_trainable(module: nn.Module) -> bool:
    return any(p.requires_grad for p in module.parameters())


def half_cycle(
    pair: CyclePair,
    image: torch.Tensor,
    model: ToyMorphableModel,
    retention: float,
    seed: int,
) -> HalfCycle:
    """Encode an image, re-render its geometry, sparsely retain appearance,
    and translate.  The encode+render prefix runs without graph capture
    when neither the encoder nor the input carries gradients."""
    needs_graph = _has_trainable(pair.encoder) or image.requires_grad
    if needs_graph:
        params = pair.encoder(image)
        render = render_geometry(model, params, image.shape[0])
    else:
        with torch.no_grad():
            params = pair.encoder(image)
            render = render_geometry(model, params, image.shape[0])
    masked, mask = sample_pixels(image, render, retention, seed)
    output = pair.generator(render.image, masked)
    return HalfCycle(params=params, render=render, masked=masked, mask=mask, output=output)


def cycle_forward(
    first: CyclePair,
    second: CyclePair,
    image: torch.Tensor,
    model: ToyMorphableModel,
    retention: float,
    seed: int,
) -> CycleOutputs:
    """Full double translation: image -> fake (first pair) -> reconstruction
    (second pair).  The two sparse-retention draws use ``seed`` and
    ``seed + 1``."""
    leg1 = half_cycle(first, image, model, retention, seed)
    leg2 = half_cycle(second, leg1.output, model, retention, seed + 1)
    return CycleOutputs(first=leg1, second=leg2)


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_checksum(module: nn.Module) -> str:
    """sha256 over all parameters and buffers, in name order."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def set_requires_grad(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)
