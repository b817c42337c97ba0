"""Loss terms of the attentive cycle-consistent objective.

Every image loss is a mean over elements so magnitudes do not depend on
resolution. All functions accept unbatched ``C x H x W`` or batched
``N x C x H x W`` tensors and stay differentiable in their tensor inputs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Mapping

import torch
import torch.nn.functional as F

from scgan.errors import NumericError, ShapeError
from scgan.regions import AttentionWeights, RegionSet, crop_region

GAN_MODES = ("log", "lsgan")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0  # both cycle terms
    beta: float = 2.0  # total variation
    gamma: float = 0.5  # perceptual

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"loss weight {f.name} must be finite and non-negative, got {v}")


COMPONENTS = ("gan_ab", "gan_ba", "att_cyc_ab", "cyc_ba", "tv", "perceptual")


@dataclass
class LossReport:
    gan_ab: float = 0.0
    gan_ba: float = 0.0
    att_cyc_ab: float = 0.0
    cyc_ba: float = 0.0
    tv: float = 0.0
    perceptual: float = 0.0
    total: float = 0.0
    step: int = 0

    @classmethod
    def from_components(cls, components: Mapping[str, float], weights: LossWeights, step: int) -> LossReport:
        values = {name: float(components.get(name, 0.0)) for name in COMPONENTS}
        return cls(**values, total=float(full_objective(values, weights)), step=step)

    def components(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in COMPONENTS}

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: Mapping) -> LossReport:
        return cls(**{f.name: record[f.name] for f in fields(cls)})


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def adversarial_loss_discriminator(real_scores: torch.Tensor, fake_scores: torch.Tensor,
                                   mode: str = "log") -> torch.Tensor:
    """Value the discriminator ascends, from raw (pre-sigmoid) scores.

    ``log``: mean of ``log sigmoid(real) + log(1 - sigmoid(fake))``, using
    ``log(1 - sigmoid(s)) = logsigmoid(-s)``. ``lsgan``: the negated
    least-squares loss. Callers must detach the fake scores' generator path.
    """
    _check_same_shape(real_scores, fake_scores, "discriminator scores")
    if mode == "log":
        return (F.logsigmoid(real_scores) + F.logsigmoid(-fake_scores)).mean()
    if mode == "lsgan":
        return -(((real_scores - 1) ** 2).mean() + (fake_scores**2).mean())
    raise ValueError(f"unknown gan mode {mode!r}")


def adversarial_loss_generator(fake_scores: torch.Tensor, mode: str = "log") -> torch.Tensor:
    """Non-saturating generator loss, ``mean(-log sigmoid(fake))``."""
    if mode == "log":
        return -F.logsigmoid(fake_scores).mean()
    if mode == "lsgan":
        return ((fake_scores - 1) ** 2).mean()
    raise ValueError(f"unknown gan mode {mode!r}")


def cycle_loss(original: torch.Tensor, reconstruction: torch.Tensor) -> torch.Tensor:
    _check_same_shape(original, reconstruction, "cycle loss")
    return (reconstruction - original).abs().mean()


def attentive_cycle_loss(original: torch.Tensor, reconstruction: torch.Tensor,
                         regions: RegionSet, weights: AttentionWeights) -> torch.Tensor:
    """Region-weighted cycle loss: sum of ``lambda_j * L1(crop_j)``.

    Each region term is the mean absolute error inside that region's crop of
    the full-image reconstruction. Entry 0 (the whole image) makes the
    ``k = 1, lambda = [1]`` case identical to :func:`cycle_loss`.
    """
    _check_same_shape(original, reconstruction, "attentive cycle loss")
    if len(weights) != regions.k:
        raise ValueError(f"{len(weights)} attention weights for {regions.k} regions")
    total = None
    for region, lam in zip(regions.entries, weights.values):
        term = lam * cycle_loss(crop_region(original, region.bbox), crop_region(reconstruction, region.bbox))
        total = term if total is None else total + term
    return total


def tv_loss(image: torch.Tensor) -> torch.Tensor:
    """Anisotropic total variation with forward differences, per element.

    ``(sum |dx| + sum |dy|) / numel``; the last column has no horizontal and
    the last row no vertical difference.
    """
    if image.ndim < 3:
        raise ShapeError(f"expected C x H x W or N x C x H x W, got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"total variation needs at least 2x2 pixels, got {h}x{w}")
    dx = (image[..., :, 1:] - image[..., :, :-1]).abs().sum()
    dy = (image[..., 1:, :] - image[..., :-1, :]).abs().sum()
    return (dx + dy) / image.numel()


def perceptual_loss(input_image: torch.Tensor, output_image: torch.Tensor,
                    extractor: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """Mean absolute difference of the extractor's features of both images."""
    if input_image.shape[-3] != output_image.shape[-3]:
        raise ShapeError(
            f"perceptual loss: channel counts {input_image.shape[-3]} and {output_image.shape[-3]} differ")
    return (extractor(output_image) - extractor(input_image)).abs().mean()


def full_objective(components: Mapping[str, float | torch.Tensor], weights: LossWeights):
    """Weighted sum of all terms; raises :class:`NumericError` on NaN/inf.

    Works on Python floats (exact report totals) and on tensors (the
    generator's training loss). Missing components count as 0.
    """
    for name in COMPONENTS:
        value = components.get(name, 0.0)
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NumericError(name, v)
    c = {name: components.get(name, 0.0) for name in COMPONENTS}
    return (c["gan_ab"] + c["gan_ba"]
            + weights.alpha * (c["att_cyc_ab"] + c["cyc_ba"])
            + weights.beta * c["tv"]
            + weights.gamma * c["perceptual"])
