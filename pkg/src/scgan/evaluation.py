"""Smoothness metrics and user-study score aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path
from typing import Mapping

import torch

from scgan.data import VALUE_RANGE
from scgan.errors import ParseError, ValidationError


def _display_scale(image: torch.Tensor, scale: float, value_range) -> torch.Tensor:
    lo, hi = value_range
    return (image.double() - lo) / (hi - lo) * scale


def _forward_differences(image: torch.Tensor):
    h, w = image.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"gradient metrics need at least 2x2 pixels, got {h}x{w}")
    dx = torch.zeros_like(image)
    dy = torch.zeros_like(image)
    dx[..., :, :-1] = image[..., :, 1:] - image[..., :, :-1]
    dy[..., :-1, :] = image[..., 1:, :] - image[..., :-1, :]
    return dx, dy


def average_gradient(image: torch.Tensor, scale: float = 255.0, value_range=VALUE_RANGE) -> float:
    """Mean anisotropic L1 gradient magnitude on the ``0..scale`` display scale.

    Per pixel ``|dx| + |dy|`` with forward differences (zero past the last
    row/column), averaged over all elements.
    """
    dx, dy = _forward_differences(_display_scale(image, scale, value_range))
    return float((dx.abs() + dy.abs()).mean())


def gradient_magnitude(image: torch.Tensor) -> torch.Tensor:
    """Per-pixel ``|dx| + |dy|`` averaged over channels, shape ``1 x H x W``."""
    dx, dy = _forward_differences(image.double())
    return (dx.abs() + dy.abs()).mean(dim=-3, keepdim=True)


def display_gradient_magnitude(image: torch.Tensor, scale: float = 255.0, value_range=VALUE_RANGE) -> torch.Tensor:
    return gradient_magnitude(_display_scale(image, scale, value_range))


def gradient_map(image: torch.Tensor, value_range=VALUE_RANGE) -> torch.Tensor:
    """Gradient magnitude rescaled so its maximum maps to the top of
    ``value_range``; a constant image maps to the bottom everywhere."""
    mag = gradient_magnitude(image)
    lo, hi = value_range
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return (lo + (hi - lo) * mag).float()


SCORES = (1, 2, 3, 4, 5)


@dataclass
class SurveyTable:
    """Per-method score distributions over the 1..5 scale."""

    rows: dict[str, tuple[float, ...]]

    def __post_init__(self):
        for method, dist in self.rows.items():
            if len(dist) != len(SCORES):
                raise ValidationError(f"{method}: expected {len(SCORES)} fractions, got {len(dist)}")
            if any(not (0 <= f <= 1) for f in dist):
                raise ValidationError(f"{method}: fractions must lie in [0, 1]: {dist}")
            if abs(math.fsum(dist) - 1) > 1e-6:
                raise ValidationError(f"{method}: fractions sum to {math.fsum(dist)}, not 1")


def _parse_fraction(text: str) -> float:
    text = text.strip()
    if text.endswith("%"):
        return float(text[:-1]) / 100
    return float(text)


def read_survey_table(path) -> SurveyTable:
    """Read a delimited survey table: ``method, f1, ..., f5`` per row.

    Fractions may be given as ``0.328`` or ``32.8%``. A first row whose
    fraction cells are not numeric, or are exactly ``1 2 3 4 5``, is a
    header. The delimiter is sniffed (comma, tab or semicolon).
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        dialect = csv.Sniffer().sniff(text.splitlines()[0] if text else ",", delimiters=",\t;")
    except csv.Error:
        dialect = csv.excel
    rows: dict[str, tuple[float, ...]] = {}
    seen_any = False
    for lineno, cells in enumerate(csv.reader(text.splitlines(), dialect), start=1):
        if not cells or not "".join(cells).strip() or cells[0].startswith("#"):
            continue
        if len(cells) != 6:
            raise ParseError(f"{path}:{lineno}: expected a method name and 5 fractions, got {len(cells)} cells")
        first = not rows and not seen_any
        seen_any = True
        try:
            dist = tuple(_parse_fraction(c) for c in cells[1:])
        except ValueError as exc:
            if first:
                continue  # header
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if first and dist == tuple(float(s) for s in SCORES):
            continue  # header naming the scores 1..5
        rows[cells[0].strip()] = dist
    return SurveyTable(rows)


def bundled_survey_path() -> Path:
    return Path(str(resources.files("scgan") / "resources" / "survey_table2.csv"))


def aggregate_survey(table: SurveyTable) -> dict[str, float]:
    """Mean score per method, ``sum(s * fraction_s)``, at full precision."""
    return {method: math.fsum(s * f for s, f in zip(SCORES, dist)) for method, dist in table.rows.items()}


def round_half_up(value: float, places: int = 2) -> Decimal:
    quantum = Decimal(1).scaleb(-places)
    return Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP)


def format_averages(averages: Mapping[str, float]) -> list[str]:
    return [f"{method}\t{round_half_up(avg)}" for method, avg in averages.items()]
