"""Attentive facial regions: region sets, providers, cropping and weights.

A region set always starts with the whole image, followed by whatever
facial components a provider found. Boxes are normalized ``[x, y, w, h]``
with ``(x, y)`` the top-left corner.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import torch

from scgan.errors import ValidationError

logger = logging.getLogger(__name__)

WHOLE = "whole"
WHOLE_BBOX = (0.0, 0.0, 1.0, 1.0)
FACIAL_LABELS = ("eyes", "nose", "mouth")

_EPS = 1e-9


def validate_bbox(bbox: Sequence[float]) -> tuple[float, float, float, float]:
    if len(bbox) != 4:
        raise ValidationError(f"bbox must have 4 entries, got {len(bbox)}")
    x, y, w, h = (float(v) for v in bbox)
    if not all(math.isfinite(v) for v in (x, y, w, h)):
        raise ValidationError(f"bbox has non-finite entries: {bbox}")
    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > 1 + _EPS or y + h > 1 + _EPS:
        raise ValidationError(f"bbox {list(bbox)} lies outside the unit square")
    return x, y, w, h


@dataclass(frozen=True)
class Region:
    label: str
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "bbox", validate_bbox(self.bbox))


@dataclass(frozen=True)
class RegionSet:
    """Ordered attentive regions; entry 0 is always the whole image."""

    entries: tuple[Region, ...] = field(default_factory=lambda: (Region(WHOLE, WHOLE_BBOX),))

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValidationError("a region set needs at least the whole-image entry")
        first = entries[0]
        if first.label != WHOLE or first.bbox != WHOLE_BBOX:
            raise ValidationError("entry 0 of a region set must be the whole image [0, 0, 1, 1]")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def whole_only(cls) -> RegionSet:
        return cls()

    @classmethod
    def from_components(cls, components: Sequence[tuple[str, Sequence[float]]]) -> RegionSet:
        """Build a set from facial components, prefixing the whole image."""
        regions = [Region(WHOLE, WHOLE_BBOX)]
        regions.extend(Region(str(label), tuple(bbox)) for label, bbox in components)
        return cls(tuple(regions))

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.entries]

    @property
    def components(self) -> tuple[Region, ...]:
        return self.entries[1:]


@dataclass(frozen=True)
class AttentionWeights:
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ValidationError(f"attention weights must be finite and non-negative: {values}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def scaled(self, c: float) -> AttentionWeights:
        return AttentionWeights(tuple(c * v for v in self.values))


def default_weights(
    region_set: RegionSet,
    whole: float = 1.0,
    component: float = 0.5,
    overrides: Mapping[str, float] | None = None,
) -> AttentionWeights:
    """Weight 1 for the whole image and 0.5 for every facial component.

    ``overrides`` maps a label to a custom weight; unknown labels fall back
    to ``component``.
    """
    overrides = overrides or {}
    values = [float(overrides.get(WHOLE, whole))]
    for region in region_set.components:
        values.append(float(overrides.get(region.label, component)))
    return AttentionWeights(tuple(values))


def bbox_to_pixels(bbox: Sequence[float], height: int, width: int) -> tuple[int, int, int, int]:
    """Return ``(top, left, crop_h, crop_w)`` for a normalized box.

    Offsets use floor, extents use half-up rounding clamped to at least one
    pixel, and the crop is shifted back inside the image if rounding pushes
    it past the border.
    """
    x, y, w, h = validate_bbox(bbox)
    left = min(math.floor(x * width), width - 1)
    top = min(math.floor(y * height), height - 1)
    crop_w = max(1, math.floor(w * width + 0.5))
    crop_h = max(1, math.floor(h * height + 0.5))
    crop_w = min(crop_w, width)
    crop_h = min(crop_h, height)
    left = min(left, width - crop_w)
    top = min(top, height - crop_h)
    return top, left, crop_h, crop_w


def crop_region(image: torch.Tensor, bbox: Sequence[float]) -> torch.Tensor:
    """Crop the last two (spatial) dims of ``image`` to ``bbox``.

    Works for ``C x H x W`` and batched ``N x C x H x W`` tensors. The whole
    box returns the input tensor itself.
    """
    height, width = image.shape[-2:]
    top, left, crop_h, crop_w = bbox_to_pixels(bbox, height, width)
    if (top, left, crop_h, crop_w) == (0, 0, height, width):
        return image
    return image[..., top : top + crop_h, left : left + crop_w]


class RegionProvider:
    """Source of facial component boxes for a selfie.

    Subclasses implement :meth:`components`, returning ``(label, bbox)``
    pairs without the whole-image entry.
    """

    concurrent_safe = True

    def components(self, sample) -> list[tuple[str, Sequence[float]]]:
        raise NotImplementedError


class NullRegionProvider(RegionProvider):
    def components(self, sample):
        return []


class SidecarRegionProvider(RegionProvider):
    """Looks regions up in a parsed annotation sidecar."""

    def __init__(self, annotations: Mapping[str, RegionSet]):
        self.annotations = dict(annotations)

    @classmethod
    def from_file(cls, path) -> SidecarRegionProvider:
        from scgan.data import load_annotations

        return cls(load_annotations(path))

    def components(self, sample):
        for key in _candidate_keys(sample.source_path):
            if key in self.annotations:
                return [(r.label, r.bbox) for r in self.annotations[key].components]
        return []


def _candidate_keys(source_path: str) -> list[str]:
    parts = str(source_path).replace("\\", "/").split("/")
    return ["/".join(parts[i:]) for i in range(len(parts))]


class LandmarkRegionProvider(RegionProvider):
    """Adapter turning a landmark detector into region boxes.

    ``detector`` takes a ``C x H x W`` image in [-1, 1] and returns a mapping
    from label to an ``N x 2`` sequence of ``(x, y)`` pixel coordinates. Each
    label's box is the landmarks' bounding box grown by ``margin`` (a
    fraction of its size) and clipped to the image.
    """

    concurrent_safe = False

    def __init__(self, detector: Callable, margin: float = 0.15):
        self.detector = detector
        self.margin = margin

    def components(self, sample):
        image = sample.image
        height, width = image.shape[-2:]
        out = []
        for label, points in self.detector(image).items():
            pts = torch.as_tensor(points, dtype=torch.float64).reshape(-1, 2)
            if len(pts) == 0:
                continue
            x0, y0 = pts.min(dim=0).values.tolist()
            x1, y1 = pts.max(dim=0).values.tolist()
            mx = (x1 - x0) * self.margin + 1
            my = (y1 - y0) * self.margin + 1
            x0, x1 = max(0.0, x0 - mx), min(float(width), x1 + mx)
            y0, y1 = max(0.0, y0 - my), min(float(height), y1 + my)
            if x1 <= x0 or y1 <= y0:
                continue
            out.append((label, (x0 / width, y0 / height, (x1 - x0) / width, (y1 - y0) / height)))
        return out


def detect_regions(sample, provider: RegionProvider | None) -> RegionSet:
    """Attentive regions for a selfie: whole image plus provider components.

    Provider failures and invalid boxes degrade to the whole-image-only set
    with a warning; they never abort training.
    """
    from scgan.data import Domain

    if sample.domain is not Domain.A:
        raise ValidationError("regions are only detected on domain-A selfies")
    if provider is None:
        return RegionSet.whole_only()
    try:
        return RegionSet.from_components(provider.components(sample))
    except Exception as exc:  # noqa: BLE001 - any provider failure degrades
        logger.warning("region provider failed on %s: %s", sample.source_path, exc)
        return RegionSet.whole_only()
