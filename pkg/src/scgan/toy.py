"""Synthetic two-domain corpora for smoke runs and tests.

Domain A images are "photo-like": a face ellipse with smooth shading,
sensor noise and fine texture. Domain B images are "cartoon-like": the same
kind of layout drawn with flat colors and dark outlines. Each selfie gets an
eyes/nose/mouth entry in ``annotations_a.jsonl``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw


def _face_layout(rng, size):
    cx = size * rng.uniform(0.45, 0.55)
    cy = size * rng.uniform(0.45, 0.55)
    rx = size * rng.uniform(0.28, 0.34)
    ry = size * rng.uniform(0.36, 0.42)
    return cx, cy, rx, ry


def _feature_boxes(cx, cy, rx, ry, size):
    boxes = {
        "eyes": (cx - 0.7 * rx, cy - 0.45 * ry, 1.4 * rx, 0.3 * ry),
        "nose": (cx - 0.2 * rx, cy - 0.1 * ry, 0.4 * rx, 0.35 * ry),
        "mouth": (cx - 0.45 * rx, cy + 0.35 * ry, 0.9 * rx, 0.25 * ry),
    }
    return {k: tuple(float(np.clip(v / size, 0, 1)) for v in b) for k, b in boxes.items()}


def _draw_features(draw, boxes, size, color, width):
    ex, ey, ew, eh = (v * size for v in boxes["eyes"])
    r = eh * 0.35
    for fx in (ex + ew * 0.25, ex + ew * 0.75):
        draw.ellipse([fx - r, ey + eh / 2 - r, fx + r, ey + eh / 2 + r], fill=color)
    nx, ny, nw, nh = (v * size for v in boxes["nose"])
    draw.line([nx + nw / 2, ny, nx + nw / 2, ny + nh], fill=color, width=width)
    mx, my, mw, mh = (v * size for v in boxes["mouth"])
    draw.arc([mx, my - mh / 2, mx + mw, my + mh], 20, 160, fill=color, width=width)


def make_selfie(rng, size):
    cx, cy, rx, ry = _face_layout(rng, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    bg = rng.uniform(60, 200, size=3)
    light = 0.6 + 0.4 * (xx / size)
    img = bg[None, None, :] * light[..., None]
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1
    skin = np.array([220, 180, 150]) * rng.uniform(0.8, 1.05)
    shade = 0.75 + 0.25 * np.cos((xx - cx) / rx * 1.2)
    img[inside] = (skin[None, :] * shade[inside][:, None])
    base = Image.fromarray(np.clip(img, 0, 255).astype(np.uint8))
    boxes = _feature_boxes(cx, cy, rx, ry, size)
    _draw_features(ImageDraw.Draw(base), boxes, size, (70, 40, 40), max(1, size // 32))
    arr = np.asarray(base).astype(np.float64)
    arr += rng.normal(0, 12, size=arr.shape)
    arr += 10 * np.sin(xx / 1.5 + rng.uniform(0, 6))[..., None]
    return Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8)), boxes


def make_cartoon(rng, size):
    cx, cy, rx, ry = _face_layout(rng, size)
    palette = rng.integers(120, 255, size=3)
    img = Image.new("RGB", (size, size), tuple(int(v) for v in palette))
    draw = ImageDraw.Draw(img)
    line = max(1, size // 32)
    draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=(250, 215, 190), outline=(20, 20, 20), width=line)
    _draw_features(draw, _feature_boxes(cx, cy, rx, ry, size), size, (20, 20, 20), line)
    return img


def make_toy_corpus(root, n_a: int = 4, n_b: int = 4, size: int = 64, seed: int = 0, n_test: int = 2) -> Path:
    """Write ``trainA``, ``trainB``, ``testA`` and ``annotations_a.jsonl``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for sub in ("trainA", "trainB", "testA"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_a):
        img, boxes = make_selfie(rng, size)
        name = f"selfie_{i:03d}.png"
        img.save(root / "trainA" / name)
        records.append({"image": f"trainA/{name}",
                        "regions": [{"label": k, "bbox": list(v)} for k, v in boxes.items()]})
    for i in range(n_b):
        make_cartoon(rng, size).save(root / "trainB" / f"cartoon_{i:03d}.png")
    for i in range(n_test):
        make_selfie(rng, size)[0].save(root / "testA" / f"test_{i:03d}.png")
    with open(root / "annotations_a.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return root
