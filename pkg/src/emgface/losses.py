"""Objective terms for the adversarial reconstruction phase.

Conventions: image-space terms are mean absolute differences over all
pixels and channels; parameter- and landmark-space terms are mean squared
differences; landmarks are normalized by the image resolution to [0, 1]
before comparison.  Every term is a mean (never a sum), so values are
comparable across resolutions and parameter counts.

Each term exists in two mirrored halves (one per translation direction)
and is reported as their sum.  The weighted generator objective is
``sum_i w_i * term_i`` where the adversarial least-squares terms enter
through the explicit ``adversarial`` weight (1.0 by default, reproducing
the published objective).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import torch

from .config import LossWeights

TERM_ORDER = (
    "reconstruction",
    "identity",
    "mask_consistency",
    "occluded_expression",
    "occluded_shape",
    "landmark",
    "rig_transform",
    "adversarial",
)


def mean_abs(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def mean_squared(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


# ---------------------------------------------------------------------------
# cycle self-supervision terms
# ---------------------------------------------------------------------------


def reconstruction_loss(
    recon_n: torch.Tensor, input_n: torch.Tensor, recon_s: torch.Tensor, input_s: torch.Tensor
) -> torch.Tensor:
    """Double-translation consistency: each image survives the full cycle."""
    return mean_abs(recon_n, input_n) + mean_abs(recon_s, input_s)


def identity_loss(
    idt_s: torch.Tensor, input_s: torch.Tensor, idt_n: torch.Tensor, input_n: torch.Tensor
) -> torch.Tensor:
    """Feeding a translator an image already in its target domain must be a
    no-op: the normal->sensor path on a sensor image (and vice versa)."""
    return mean_abs(idt_s, input_s) + mean_abs(idt_n, input_n)


def mask_consistency_loss(
    fake_s: torch.Tensor, input_n: torch.Tensor, fake_n: torch.Tensor, input_s: torch.Tensor
) -> torch.Tensor:
    """The translated image stays anchored to its source appearance (the
    domains differ only at the electrode sites)."""
    return mean_abs(fake_s, input_n) + mean_abs(fake_n, input_s)


def occluded_expression_loss(
    triplet_n: torch.Tensor,
    triplet_fake_s: torch.Tensor,
    triplet_s: torch.Tensor,
    triplet_fake_n: torch.Tensor,
) -> torch.Tensor:
    """Expression (incl. eyelids and jaw) must survive domain translation:
    the sensor encoder read of a synthesized sensor image matches the
    normal encoder read of its source, and mirrored."""
    return mean_squared(triplet_n, triplet_fake_s) + mean_squared(triplet_s, triplet_fake_n)


def occluded_shape_loss(
    shape_n: torch.Tensor,
    shape_s: torch.Tensor,
    shape_fake_s: torch.Tensor,
    shape_fake_n: torch.Tensor,
) -> torch.Tensor:
    """Identity coefficients agree across the unpaired same-person frames
    and across the two synthesized fakes."""
    return mean_squared(shape_n, shape_s) + mean_squared(shape_fake_s, shape_fake_n)


def landmark_loss(
    landmarks_n: torch.Tensor,
    landmarks_fake_s: torch.Tensor,
    landmarks_s: torch.Tensor,
    landmarks_fake_n: torch.Tensor,
    resolution: int,
) -> torch.Tensor:
    """Projected landmark agreement through translation, in normalized
    image coordinates."""
    inv = 1.0 / float(resolution)
    return mean_squared(landmarks_n * inv, landmarks_fake_s * inv) + mean_squared(
        landmarks_s * inv, landmarks_fake_n * inv
    )


def rig_transform_loss(
    pose_n: torch.Tensor,
    pose_fake_s: torch.Tensor,
    pose_s: torch.Tensor,
    pose_fake_n: torch.Tensor,
) -> torch.Tensor:
    """Rigid pose (rotation, translation, scale) survives translation."""
    return mean_squared(pose_n, pose_fake_s) + mean_squared(pose_s, pose_fake_n)


# ---------------------------------------------------------------------------
# least-squares adversarial terms
# ---------------------------------------------------------------------------


def lsgan_generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Least-squares generator objective: zero iff the discriminator
    outputs exactly the real label (1) on the fake."""
    return ((fake_logits - 1.0) ** 2).mean()


def lsgan_discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator objective, 1/2 on each half; 0.25 at the
    uninformative fixed point D(.)=0.5 everywhere."""
    return 0.5 * ((real_logits - 1.0) ** 2).mean() + 0.5 * (fake_logits**2).mean()


# ---------------------------------------------------------------------------
# weighted total
# ---------------------------------------------------------------------------


@dataclass
class GeneratorTerms:
    """Raw (unweighted) generator-side loss terms, one tensor each."""

    reconstruction: torch.Tensor
    identity: torch.Tensor
    mask_consistency: torch.Tensor
    occluded_expression: torch.Tensor
    occluded_shape: torch.Tensor
    landmark: torch.Tensor
    rig_transform: torch.Tensor
    adversarial_n: torch.Tensor
    adversarial_s: torch.Tensor


@dataclass
class LossReport:
    """Float snapshot of one generator update, for logs and audits.

    ``terms`` holds the raw term values keyed exactly like ``weights``;
    ``total`` is reproducible as ``sum(weights[k] * terms[k])`` evaluated
    in ``TERM_ORDER``.
    """

    terms: dict[str, float]
    weights: dict[str, float]
    total: float
    extras: dict[str, float]

    def recompute_total(self) -> float:
        acc = 0.0
        for name in TERM_ORDER:
            acc += self.weights[name] * self.terms[name]
        return acc

    def to_flat_dict(self) -> dict[str, float]:
        out = {f"term_{k}": v for k, v in self.terms.items()}
        out.update({f"weight_{k}": v for k, v in self.weights.items()})
        out.update(self.extras)
        out["total"] = self.total
        return out


def total_generator_objective(
    terms: GeneratorTerms, weights: LossWeights
) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of all generator-side terms.

    Aborts with a ValueError naming the first non-finite term (an exploding
    objective must stop the run, not silently poison the weights).
    """
    raw: dict[str, torch.Tensor] = {
        "reconstruction": terms.reconstruction,
        "identity": terms.identity,
        "mask_consistency": terms.mask_consistency,
        "occluded_expression": terms.occluded_expression,
        "occluded_shape": terms.occluded_shape,
        "landmark": terms.landmark,
        "rig_transform": terms.rig_transform,
        "adversarial": terms.adversarial_n + terms.adversarial_s,
    }
    for name in TERM_ORDER:
        if not torch.isfinite(raw[name]):
            raise ValueError(f"non-finite loss term '{name}': {raw[name].item()!r}")
    weight_map = weights.as_mapping()
    total = None
    for name in TERM_ORDER:
        piece = weight_map[name] * raw[name]
        total = piece if total is None else total + piece
    report = LossReport(
        terms={name: float(raw[name].detach()) for name in TERM_ORDER},
        weights={name: float(weight_map[name]) for name in TERM_ORDER},
        total=float(total.detach()),
        extras={
            "adversarial_n": float(terms.adversarial_n.detach()),
            "adversarial_s": float(terms.adversarial_s.detach()),
        },
    )
    return total, report
