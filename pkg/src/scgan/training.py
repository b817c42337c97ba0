"""Alternating min-max training of the two translators.

One call to :func:`train_step` performs a discriminator update on real
images and pool-drawn fakes, then a generator update on the weighted
objective of the active ablation preset.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
import yaml

from scgan import losses
from scgan.data import Domain, ImageFolderDataset, UnpairedBatch, unpaired_batch
from scgan.errors import ConfigError, DataError, FingerprintError, IntegrityError, NumericError
from scgan.losses import LossReport, LossWeights
from scgan.networks import (
    DiscriminatorConfig,
    FeatureExtractor,
    FeatureExtractorHandle,
    GeneratorConfig,
    architecture_fingerprint,
    build_discriminator,
    build_generator,
)
from scgan.regions import AttentionWeights, RegionSet, SidecarRegionProvider, crop_region, default_weights

logger = logging.getLogger(__name__)

PRESETS = ("A_cycle_only", "B_attentive", "C_attentive_plus_perceptual", "full")
PRESET_ALIASES = {"A": "A_cycle_only", "B": "B_attentive", "C": "C_attentive_plus_perceptual", "full": "full"}
ATTENTIVE_MODES = ("crop_reconstruction", "crop_then_generate")


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    beta1: float = 0.5
    beta2: float = 0.999


@dataclass(frozen=True)
class AttentionRule:
    whole: float = 1.0
    component: float = 0.5
    overrides: dict = field(default_factory=dict)

    def weights_for(self, regions: RegionSet) -> AttentionWeights:
        return default_weights(regions, self.whole, self.component, self.overrides)


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    attention: AttentionRule = field(default_factory=AttentionRule)
    batch_size: int = 1
    total_steps: int = 1000
    learning_rate: float = 2e-4
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    ablation_preset: str = "full"
    gan_mode: str = "log"
    attentive_mode: str = "crop_reconstruction"
    pool_size: int = 50
    image_size: int = 256
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    checkpoint_interval: int = 1000
    extractor_weights: str | None = None
    extractor_layer: str = "conv4_4"
    annotations: str | None = None

    def __post_init__(self):
        preset = PRESET_ALIASES.get(self.ablation_preset, self.ablation_preset)
        object.__setattr__(self, "ablation_preset", preset)
        if preset not in PRESETS:
            raise ConfigError(f"unknown ablation preset {self.ablation_preset!r}")
        if self.gan_mode not in losses.GAN_MODES:
            raise ConfigError(f"unknown gan mode {self.gan_mode!r}")
        if self.attentive_mode not in ATTENTIVE_MODES:
            raise ConfigError(f"unknown attentive mode {self.attentive_mode!r}")
        if self.optimizer.name.lower() != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer.name!r}")
        if self.batch_size < 1 or self.total_steps < 0 or self.checkpoint_interval < 1:
            raise ConfigError("batch_size and checkpoint_interval must be positive, total_steps non-negative")
        if not self.learning_rate >= 0:
            raise ConfigError("learning rate must be non-negative")
        if self.pool_size < 0:
            raise ConfigError("pool size must be non-negative")
        if self.image_size % 2**self.generator.depth:
            raise ConfigError(f"image size {self.image_size} is not divisible by 2^{self.generator.depth}")

    def fingerprint(self) -> str:
        return architecture_fingerprint(self.generator, self.discriminator)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> TrainConfig:
        raw = dict(raw)
        nested = {"weights": LossWeights, "attention": AttentionRule, "optimizer": OptimizerConfig,
                  "generator": GeneratorConfig, "discriminator": DiscriminatorConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        for key, kind in nested.items():
            if key in raw and isinstance(raw[key], dict):
                raw[key] = _build(kind, raw[key])
        return cls(**raw)

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)


def _build(kind, raw: dict):
    known = {f.name for f in dataclasses.fields(kind)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    return kind(**raw)


@dataclass(frozen=True)
class ActiveTerms:
    attentive: bool
    tv: bool
    perceptual: bool


def active_terms(config: TrainConfig) -> ActiveTerms:
    """Which optional terms a preset switches on.

    The adversarial terms and the B-direction cycle are always on. Preset A
    uses the plain cycle loss for the A direction (whole-image region only).
    """
    preset = config.ablation_preset
    return ActiveTerms(
        attentive=preset != "A_cycle_only",
        tv=preset == "full",
        perceptual=preset in ("C_attentive_plus_perceptual", "full"),
    )


class ReplayPool:
    """Buffer of past fakes shown to the discriminator.

    Until the pool is full every candidate is stored and returned. Once
    full, each candidate is returned with probability 0.5; otherwise a
    random stored fake is returned and replaced by the candidate.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.images: list[torch.Tensor] = []

    def draw(self, candidate: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
        if self.capacity == 0:
            return candidate
        candidate = candidate.detach().clone()
        if len(self.images) < self.capacity:
            self.images.append(candidate)
            return candidate
        if rng.random() < 0.5:
            return candidate
        idx = int(rng.integers(0, self.capacity))
        stored = self.images[idx]
        self.images[idx] = candidate
        return stored

    def query(self, batch: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
        if self.capacity == 0:
            return batch.detach()
        return torch.stack([self.draw(img, rng) for img in batch])


def replay_pool_draw(pool: ReplayPool, candidate: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    return pool.draw(candidate, rng)


@dataclass
class TrainState:
    config: TrainConfig
    g_ab: torch.nn.Module
    g_ba: torch.nn.Module
    d_a: torch.nn.Module
    d_b: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    pool_a: ReplayPool
    pool_b: ReplayPool
    rng: np.random.Generator
    step: int = 0

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def generators(self):
        return (self.g_ab, self.g_ba)

    def discriminators(self):
        return (self.d_a, self.d_b)


def _optimizers(config: TrainConfig, g_ab, g_ba, d_a, d_b):
    betas = (config.optimizer.beta1, config.optimizer.beta2)
    opt_g = torch.optim.Adam(itertools.chain(g_ab.parameters(), g_ba.parameters()),
                             lr=config.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(itertools.chain(d_a.parameters(), d_b.parameters()),
                             lr=config.learning_rate, betas=betas)
    return opt_g, opt_d


def init_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)
    g_ab = build_generator(config.generator)
    g_ba = build_generator(config.generator)
    disc_cfg = config.discriminator
    d_a = build_discriminator(dataclasses.replace(disc_cfg, in_channels=config.generator.in_channels))
    d_b = build_discriminator(dataclasses.replace(disc_cfg, in_channels=config.generator.out_channels))
    opt_g, opt_d = _optimizers(config, g_ab, g_ba, d_a, d_b)
    return TrainState(config, g_ab, g_ba, d_a, d_b, opt_g, opt_d,
                      ReplayPool(config.pool_size), ReplayPool(config.pool_size),
                      np.random.default_rng([config.seed, 0x5C6A]))


def _set_requires_grad(modules, flag: bool):
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


def _attentive_term(state: TrainState, real_a: torch.Tensor, rec_a: torch.Tensor,
                    region_sets: list[RegionSet], config: TrainConfig) -> torch.Tensor:
    rule = config.attention
    terms = []
    for i, regions in enumerate(region_sets):
        weights = rule.weights_for(regions)
        if config.attentive_mode == "crop_reconstruction":
            terms.append(losses.attentive_cycle_loss(real_a[i], rec_a[i], regions, weights))
            continue
        # literal reading: translate each resized crop through both generators
        size = real_a.shape[-2:]
        total = weights.values[0] * losses.cycle_loss(real_a[i], rec_a[i])
        for region, lam in zip(regions.components, weights.values[1:]):
            crop = crop_region(real_a[i : i + 1], region.bbox)
            crop = F.interpolate(crop, size=size, mode="bilinear", align_corners=False)
            total = total + lam * losses.cycle_loss(crop, state.g_ba(state.g_ab(crop)))
        terms.append(total)
    return torch.stack(terms).mean()


def _snapshot(state: TrainState):
    return (
        copy.deepcopy(state.d_a.state_dict()),
        copy.deepcopy(state.d_b.state_dict()),
        copy.deepcopy(state.opt_d.state_dict()),
        list(state.pool_a.images),
        list(state.pool_b.images),
        copy.deepcopy(state.rng.bit_generator.state),
    )


def _restore(state: TrainState, snap) -> None:
    d_a, d_b, opt_d, pool_a, pool_b, rng = snap
    state.d_a.load_state_dict(d_a)
    state.d_b.load_state_dict(d_b)
    state.opt_d.load_state_dict(opt_d)
    state.pool_a.images = pool_a
    state.pool_b.images = pool_b
    state.rng.bit_generator.state = rng


def train_step(state: TrainState, batch: UnpairedBatch, config: TrainConfig | None = None,
               extractor: torch.nn.Module | None = None) -> tuple[TrainState, LossReport]:
    """One discriminator update followed by one generator update.

    Mutates and returns ``state``. Terms switched off by the preset are not
    computed and are reported as exactly 0. A non-finite loss raises
    :class:`NumericError` naming the component, after rolling back the
    discriminator half-step so the state is left as it was.
    """
    config = config or state.config
    if config.fingerprint() != state.fingerprint:
        raise FingerprintError("training config does not match the state's architecture")
    terms = active_terms(config)
    if terms.perceptual and config.weights.gamma > 0 and extractor is None:
        raise ConfigError("the perceptual term needs a feature extractor")
    mode = config.gan_mode
    real_a = batch.stack(Domain.A)
    real_b = batch.stack(Domain.B)
    gens, discs = state.generators(), state.discriminators()
    snap = _snapshot(state)

    fake_b = state.g_ab(real_a)
    fake_a = state.g_ba(real_b)

    # discriminator half-step
    _set_requires_grad(discs, True)
    pooled_a = state.pool_a.query(fake_a.detach(), state.rng)
    pooled_b = state.pool_b.query(fake_b.detach(), state.rng)
    value_a = losses.adversarial_loss_discriminator(state.d_a(real_a), state.d_a(pooled_a), mode)
    value_b = losses.adversarial_loss_discriminator(state.d_b(real_b), state.d_b(pooled_b), mode)
    d_loss = -(value_a + value_b)
    if not torch.isfinite(d_loss):
        _restore(state, snap)
        raise NumericError("discriminator", float(d_loss))
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    state.opt_d.step()

    # generator half-step
    _set_requires_grad(discs, False)
    try:
        rec_a = state.g_ba(fake_b)
        rec_b = state.g_ab(fake_a)
        components: dict[str, Any] = {
            "gan_ab": losses.adversarial_loss_generator(state.d_b(fake_b), mode),
            "gan_ba": losses.adversarial_loss_generator(state.d_a(fake_a), mode),
            "cyc_ba": losses.cycle_loss(real_b, rec_b),
        }
        if terms.attentive:
            region_sets = [s.regions or RegionSet.whole_only() for s in batch.batch_a]
        else:
            region_sets = [RegionSet.whole_only()] * len(batch.batch_a)
        components["att_cyc_ab"] = _attentive_term(state, real_a, rec_a, region_sets, config)
        if terms.tv:
            components["tv"] = losses.tv_loss(fake_b)
        if terms.perceptual and extractor is not None:
            with torch.no_grad():
                target = extractor(real_a)
            components["perceptual"] = (extractor(fake_b) - target).abs().mean()
        total = losses.full_objective(components, config.weights)
    except NumericError:
        _set_requires_grad(discs, True)
        _restore(state, snap)
        raise
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    _set_requires_grad(discs, True)
    for g in gens:
        g.zero_grad(set_to_none=True)

    state.step += 1
    values = {k: float(v.detach()) for k, v in components.items()}
    return state, LossReport.from_components(values, config.weights, state.step)


# --- checkpoints ---------------------------------------------------------

MAGIC = b"SCGANCKP"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct(">8sIQ32s")


def _state_payload(state: TrainState) -> dict:
    return {
        "fingerprint": state.fingerprint,
        "config": json.dumps(state.config.to_dict(), sort_keys=True),
        "step": state.step,
        "g_ab": state.g_ab.state_dict(),
        "g_ba": state.g_ba.state_dict(),
        "d_a": state.d_a.state_dict(),
        "d_b": state.d_b.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "pool_a": list(state.pool_a.images),
        "pool_b": list(state.pool_b.images),
        "rng": json.dumps(state.rng.bit_generator.state),
    }


def save_checkpoint(state: TrainState, path) -> Path:
    """Write ``state`` atomically (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(_state_payload(state), buf)
    payload = buf.getvalue()
    header = _HEADER.pack(MAGIC, CHECKPOINT_VERSION, len(payload), hashlib.sha256(payload).digest())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def _read_payload(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated checkpoint header")
    magic, version, length, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"{path}: checkpoint version mismatch, expected {CHECKPOINT_VERSION}, found {version}")
    payload = raw[_HEADER.size :]
    if len(payload) != length:
        raise IntegrityError(f"{path}: truncated checkpoint, expected {length} payload bytes, found {len(payload)}")
    if hashlib.sha256(payload).digest() != digest:
        raise IntegrityError(f"{path}: checkpoint checksum mismatch")
    return torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)


def load_checkpoint(path, expected_fingerprint: str | None = None) -> TrainState:
    payload = _read_payload(path)
    config = TrainConfig.from_dict(json.loads(payload["config"]))
    if config.fingerprint() != payload["fingerprint"]:
        raise IntegrityError(f"{path}: stored fingerprint does not match stored config")
    if expected_fingerprint is not None and payload["fingerprint"] != expected_fingerprint:
        raise FingerprintError(
            f"{path}: architecture fingerprint mismatch, expected {expected_fingerprint}, "
            f"found {payload['fingerprint']}")
    state = init_state(config)
    for name in ("g_ab", "g_ba", "d_a", "d_b", "opt_g", "opt_d"):
        getattr(state, name).load_state_dict(payload[name])
    state.pool_a.images = list(payload["pool_a"])
    state.pool_b.images = list(payload["pool_b"])
    state.rng.bit_generator.state = json.loads(payload["rng"])
    state.step = int(payload["step"])
    return state


def _tensors_equal(a, b) -> bool:
    if isinstance(a, torch.Tensor) or isinstance(b, torch.Tensor):
        return isinstance(a, torch.Tensor) and isinstance(b, torch.Tensor) and a.shape == b.shape and torch.equal(a, b)
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(_tensors_equal(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)):
        return isinstance(b, (list, tuple)) and len(a) == len(b) and all(_tensors_equal(x, y) for x, y in zip(a, b))
    return a == b


def states_equal(a: TrainState, b: TrainState) -> bool:
    """Equality of everything a checkpoint stores."""
    pa, pb = _state_payload(a), _state_payload(b)
    return all(_tensors_equal(pa[k], pb[k]) for k in pa)


# --- training loop -----------------------------------------------------

def check_corpus(data_root) -> Path:
    root = Path(data_root)
    for sub in ("trainA", "trainB"):
        if not (root / sub).is_dir():
            raise DataError(f"corpus at {root} is missing the {sub} directory")
    return root


def make_extractor(config: TrainConfig) -> FeatureExtractor | None:
    if not (active_terms(config).perceptual and config.weights.gamma > 0):
        return None
    return FeatureExtractor(FeatureExtractorHandle(config.extractor_layer, config.extractor_weights))


def make_datasets(config: TrainConfig, data_root):
    root = check_corpus(data_root)
    ann = Path(config.annotations) if config.annotations else root / "annotations_a.jsonl"
    provider = SidecarRegionProvider.from_file(ann) if ann.is_file() else None
    if config.annotations and provider is None:
        raise DataError(f"annotation file not found: {ann}")
    channels_a, channels_b = config.generator.in_channels, config.generator.out_channels
    ds_a = ImageFolderDataset(root / "trainA", Domain.A, config.image_size, channels_a, provider)
    ds_b = ImageFolderDataset(root / "trainB", Domain.B, config.image_size, channels_b)
    if len(ds_a) == 0 or len(ds_b) == 0:
        raise DataError(f"corpus at {root} has an empty domain directory")
    return ds_a, ds_b


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"step_{step:06d}.ckpt"


def write_config(config: TrainConfig, path, extra: dict | None = None) -> Path:
    doc = {"train": config.to_dict()}
    if extra:
        doc.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def read_loss_log(path) -> list[LossReport]:
    with open(path, encoding="utf-8") as fh:
        return [LossReport.from_dict(json.loads(line)) for line in fh if line.strip()]


def train(config: TrainConfig, data_root, out_dir, resume_from=None, run_info: dict | None = None) -> Path:
    """Run ``config.total_steps`` steps and return the final checkpoint path.

    Writes ``config.yaml``, ``loss_log.jsonl`` (one report per step) and
    checkpoints under ``out_dir/checkpoints``. Step ``s`` always trains on
    batch ``s`` of the seeded stream, so a resumed run reproduces an
    uninterrupted one.
    """
    torch.use_deterministic_algorithms(True)
    ds_a, ds_b = make_datasets(config, data_root)
    extractor = make_extractor(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(config, out_dir / "config.yaml", run_info)
    log_path = out_dir / "loss_log.jsonl"

    if resume_from is not None:
        state = load_checkpoint(resume_from, expected_fingerprint=config.fingerprint())
        kept = [r for r in read_loss_log(log_path) if r.step <= state.step] if log_path.exists() else []
        log_path.write_text("".join(json.dumps(r.as_dict()) + "\n" for r in kept))
    else:
        state = init_state(config)
        log_path.write_text("")
        save_checkpoint(state, checkpoint_path(out_dir, 0))

    last = checkpoint_path(out_dir, state.step)
    with open(log_path, "a", encoding="utf-8") as log:
        while state.step < config.total_steps:
            batch = unpaired_batch(ds_a, ds_b, config.batch_size, config.seed, call_index=state.step)
            state, report = train_step(state, batch, config, extractor)
            log.write(json.dumps(report.as_dict()) + "\n")
            log.flush()
            if state.step % config.checkpoint_interval == 0 or state.step == config.total_steps:
                last = save_checkpoint(state, checkpoint_path(out_dir, state.step))
            if state.step % 50 == 0:
                logger.info("step %d: total %.4f", state.step, report.total)
    return last


def translate(generator: torch.nn.Module, image: torch.Tensor) -> torch.Tensor:
    """Run a generator on one ``C x H x W`` image of any size.

    Sizes not divisible by ``2^depth`` are resized to the nearest valid size
    and the output resized back.
    """
    factor = 2**generator.config.depth
    h, w = image.shape[-2:]
    th, tw = max(factor, round(h / factor) * factor), max(factor, round(w / factor) * factor)
    x = image.unsqueeze(0)
    with torch.no_grad():
        if (th, tw) != (h, w):
            x = F.interpolate(x, size=(th, tw), mode="bilinear", align_corners=False)
        y = generator(x)
        if (th, tw) != (h, w):
            y = F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False).clamp(-1, 1)
    return y[0]
