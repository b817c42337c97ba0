"""Image I/O, unpaired batching, corpus preprocessing and annotation loading.

Images travel through the package as ``C x H x W`` float tensors in
``VALUE_RANGE``. Corpus layout::

    <root>/trainA  <root>/trainB  <root>/testA  [<root>/annotations_a.jsonl]
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from scgan.errors import DataError, DecodeError, ParseError, ShapeError, ValidationError
from scgan.regions import RegionProvider, RegionSet, detect_regions

logger = logging.getLogger(__name__)

VALUE_RANGE = (-1.0, 1.0)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class Domain(enum.Enum):
    A = "A_selfie"
    B = "B_cartoon"


def check_image(image: torch.Tensor, value_range=VALUE_RANGE) -> torch.Tensor:
    """Raise unless ``image`` is a valid ``C x H x W`` tensor within range."""
    if image.ndim != 3:
        raise ShapeError(f"expected C x H x W, got shape {tuple(image.shape)}")
    c, h, w = image.shape
    if c not in (1, 3):
        raise ShapeError(f"channels must be 1 or 3, got {c}")
    if h < 8 or w < 8:
        raise ShapeError(f"spatial size must be at least 8x8, got {h}x{w}")
    lo, hi = value_range
    if not torch.isfinite(image).all() or image.min() < lo or image.max() > hi:
        raise ValidationError(f"image values fall outside {value_range}")
    return image


def to_unit_range(array: np.ndarray, value_range=VALUE_RANGE) -> np.ndarray:
    lo, hi = value_range
    return array.astype(np.float32) / np.float32(255.0) * np.float32(hi - lo) + np.float32(lo)


def to_uint8(image: torch.Tensor, value_range=VALUE_RANGE) -> np.ndarray:
    """``C x H x W`` tensor to an ``H x W x C`` uint8 array (rounded)."""
    lo, hi = value_range
    arr = image.detach().cpu().double().numpy()
    arr = np.clip((arr - lo) / (hi - lo) * 255.0, 0, 255)
    return np.floor(arr + 0.5).astype(np.uint8).transpose(1, 2, 0)


def center_crop_to_aspect(img: Image.Image, height: int, width: int) -> Image.Image:
    src_w, src_h = img.size
    target = width / height
    if src_w / src_h > target:
        new_w = max(1, round(src_h * target))
        left = (src_w - new_w) // 2
        return img.crop((left, 0, left + new_w, src_h))
    new_h = max(1, round(src_w / target))
    top = (src_h - new_h) // 2
    return img.crop((0, top, src_w, top + new_h))


def _open(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return img


def _to_mode(img: Image.Image, channels: int | None) -> Image.Image:
    if channels == 1:
        return img.convert("L")
    if channels == 3 or img.mode not in ("L", "RGB"):
        return img.convert("RGB")
    return img


def load_image(path, target_size: tuple[int, int] | None = None, channels: int | None = 3,
               value_range=VALUE_RANGE) -> torch.Tensor:
    """Decode an 8-bit image into a ``C x H x W`` tensor in ``value_range``.

    With ``target_size=(h, w)`` the image is center-cropped to the target
    aspect ratio and resized bilinearly; ``None`` keeps the native size.
    ``channels=None`` keeps grayscale images single-channel.
    """
    if target_size is not None and (target_size[0] <= 0 or target_size[1] <= 0):
        raise ValueError(f"target size must be positive, got {target_size}")
    img = _to_mode(_open(path), channels)
    if target_size is not None:
        h, w = target_size
        if img.size != (w, h):
            img = center_crop_to_aspect(img, h, w).resize((w, h), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(to_unit_range(arr.transpose(2, 0, 1).copy(), value_range))


def save_image(image: torch.Tensor, path, value_range=VALUE_RANGE) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = to_uint8(image, value_range)
    Image.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr).save(path)
    return path


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


@dataclass
class DomainSample:
    image: torch.Tensor
    domain: Domain
    source_path: str
    regions: RegionSet | None = None

    def __post_init__(self):
        if self.regions is not None and self.domain is not Domain.A:
            raise ValidationError("only domain-A samples carry attentive regions")


class ImageFolderDataset:
    """Lazily decoded images of one domain, in sorted filename order."""

    def __init__(self, directory, domain: Domain, image_size: int = 256, channels: int = 3,
                 provider: RegionProvider | None = None, cache: bool = True):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DataError(f"domain directory not found: {self.directory}")
        self.paths = list_images(self.directory)
        self.domain = domain
        self.image_size = image_size
        self.channels = channels
        self.provider = provider
        self._cache: dict[int, DomainSample] | None = {} if cache else None

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, index: int) -> DomainSample:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        path = self.paths[index]
        image = load_image(path, (self.image_size, self.image_size), self.channels)
        rel = f"{self.directory.name}/{path.name}"
        sample = DomainSample(image=image, domain=self.domain, source_path=rel)
        if self.domain is Domain.A:
            sample.regions = detect_regions(sample, self.provider)
        if self._cache is not None:
            self._cache[index] = sample
        return sample


@dataclass
class UnpairedBatch:
    """Independently drawn samples of both domains; no pairing implied."""

    batch_a: list[DomainSample]
    batch_b: list[DomainSample]
    seed_state: tuple[int, int] = field(default=(0, 0))

    def stack(self, domain: Domain) -> torch.Tensor:
        items = self.batch_a if domain is Domain.A else self.batch_b
        return torch.stack([s.image for s in items])

    def validate(self) -> None:
        for s in self.batch_a + self.batch_b:
            check_image(s.image)


def draw_indices(n: int, batch_size: int, seed: int, call_index: int, stream: int) -> list[int]:
    rng = np.random.default_rng([seed, call_index, stream])
    return rng.integers(0, n, size=batch_size).tolist()


def unpaired_batch(dataset_a: Sequence[DomainSample], dataset_b: Sequence[DomainSample],
                   batch_size: int, seed: int, call_index: int = 0) -> UnpairedBatch:
    """Draw ``batch_size`` items uniformly with replacement from each domain.

    The draw depends only on ``(seed, call_index)`` and the dataset sizes,
    so prefetching or resuming never changes batch composition.
    """
    if batch_size <= 0:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    if len(dataset_a) == 0 or len(dataset_b) == 0:
        raise DataError("both domains need at least one image")
    idx_a = draw_indices(len(dataset_a), batch_size, seed, call_index, 0)
    idx_b = draw_indices(len(dataset_b), batch_size, seed, call_index, 1)
    return UnpairedBatch([dataset_a[i] for i in idx_a], [dataset_b[i] for i in idx_b], (seed, call_index))


@dataclass
class PreprocessOptions:
    min_size: int = 64
    crop_mode: str = "center"  # "center" (square crop) or "none"
    dedup: bool = True
    output_size: int | None = None
    workers: int = 1


@dataclass
class PreprocessReport:
    kept: int = 0
    rejected: int = 0
    reasons: dict[str, int] = field(default_factory=dict)
    rejected_files: list[tuple[str, str]] = field(default_factory=list)

    def reject(self, name: str, reason: str):
        self.rejected += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1
        self.rejected_files.append((name, reason))

    def as_dict(self):
        return {"kept": self.kept, "rejected": self.rejected, "reasons": dict(self.reasons)}


def _prepare(path: Path, options: PreprocessOptions):
    try:
        img = _to_mode(_open(path), None)
    except DecodeError:
        return None, "undecodable"
    if min(img.size) < options.min_size:
        return None, "too_small"
    if options.crop_mode == "center":
        side = min(img.size)
        img = center_crop_to_aspect(img, side, side)
    elif options.crop_mode != "none":
        raise ValueError(f"unknown crop mode {options.crop_mode!r}")
    if options.output_size:
        w = h = options.output_size
        img = center_crop_to_aspect(img, h, w).resize((w, h), Image.BILINEAR)
    return img, None


def preprocess_corpus(raw_dir, out_dir, options: PreprocessOptions | None = None) -> PreprocessReport:
    """Filter, crop and deduplicate a directory of raw images.

    Every input file is either written to ``out_dir`` (as PNG) or counted as
    rejected with a reason: ``undecodable``, ``too_small`` or ``duplicate``.
    Duplicates are detected by a hash of the decoded, cropped and resized
    pixels; the first file in sorted order wins.
    """
    options = options or PreprocessOptions()
    raw_dir, out_dir = Path(raw_dir), Path(out_dir)
    if not raw_dir.is_dir() or not os.access(raw_dir, os.R_OK):
        raise OSError(f"cannot read directory {raw_dir}")
    files = sorted(p for p in raw_dir.iterdir() if p.is_file())
    out_dir.mkdir(parents=True, exist_ok=True)
    report = PreprocessReport()
    seen: set[str] = set()
    # executor.map keeps input order, so the dedup winner is deterministic
    with ThreadPoolExecutor(max_workers=max(1, options.workers)) as pool:
        results = pool.map(lambda p: _prepare(p, options), files)
        for path, (img, reason) in zip(files, results):
            if reason:
                report.reject(path.name, reason)
                continue
            arr = np.asarray(img)
            digest = hashlib.sha256(arr.tobytes() + str(arr.shape).encode()).hexdigest()
            if options.dedup and digest in seen:
                report.reject(path.name, "duplicate")
                continue
            seen.add(digest)
            img.save(out_dir / f"{path.stem}.png")
            report.kept += 1
    logger.info("preprocessed %s: kept %d, rejected %d", raw_dir, report.kept, report.rejected)
    return report


def load_annotations(path) -> dict[str, RegionSet]:
    """Parse an annotation sidecar (one JSON object per line).

    Records for the same image are merged in file order. Blank lines are
    skipped.
    """
    components: dict[str, list[tuple[str, tuple]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                image = record["image"]
                regions = record["regions"]
                if not isinstance(image, str) or not isinstance(regions, list):
                    raise TypeError("'image' must be a string and 'regions' a list")
                parsed = [(str(r["label"]), tuple(r["bbox"])) for r in regions]
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed annotation record: {exc}") from exc
            try:
                RegionSet.from_components(parsed)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            components.setdefault(image, []).extend(parsed)
    return {image: RegionSet.from_components(comps) for image, comps in components.items()}
