"""Generators, patch discriminators and the frozen VGG19 feature extractor."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn

from scgan.errors import ConfigError, ResourceError, ShapeError

INIT_STD = 0.02
WEIGHTS_ENV = "SCGAN_EXTRACTOR_WEIGHTS"


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 4
    base_channels: int = 64
    in_channels: int = 3
    out_channels: int = 3
    skip_connections: bool = True

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ConfigError("generator depth and base_channels must be positive")
        if self.in_channels not in (1, 3) or self.out_channels not in (1, 3):
            raise ConfigError("generator channels must be 1 or 3")

    def channels(self) -> list[int]:
        """Encoder output channels per stage, doubling up to 8x base."""
        return [self.base_channels * min(2**i, 8) for i in range(self.depth)]


@dataclass(frozen=True)
class DiscriminatorConfig:
    num_layers: int = 3
    base_channels: int = 64
    in_channels: int = 3

    def __post_init__(self):
        if self.num_layers < 1 or self.base_channels < 1:
            raise ConfigError("discriminator num_layers and base_channels must be positive")


def architecture_fingerprint(*configs) -> str:
    payload = json.dumps([asdict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def init_weights(module: nn.Module, std: float = INIT_STD) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class UnetGenerator(nn.Module):
    """Encoder-decoder with optional skip connections and a tanh output.

    Each encoder stage is a stride-2 4x4 convolution plus LeakyReLU, with
    instance norm on all but the outermost and innermost stages; each decoder
    stage mirrors it with a transposed convolution. With skips on, decoder stage ``i``
    sees its input concatenated with encoder stage ``i``'s output.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        chans = config.channels()
        self.down = nn.ModuleList()
        prev = config.in_channels
        for i, c in enumerate(chans):
            layers = [nn.Conv2d(prev, c, 4, 2, 1)]
            if 0 < i < config.depth - 1:
                layers.append(nn.InstanceNorm2d(c))
            layers.append(nn.LeakyReLU(0.2))
            self.down.append(nn.Sequential(*layers))
            prev = c
        self.up = nn.ModuleList()
        for i in reversed(range(config.depth)):
            cin = chans[i] if (i == config.depth - 1 or not config.skip_connections) else 2 * chans[i]
            if i == 0:
                self.up.append(nn.Sequential(nn.ConvTranspose2d(cin, config.out_channels, 4, 2, 1), nn.Tanh()))
            else:
                cout = chans[i - 1]
                self.up.append(nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, 2, 1), nn.InstanceNorm2d(cout), nn.ReLU()))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        factor = 2**self.config.depth
        if x.shape[-1] % factor or x.shape[-2] % factor:
            raise ShapeError(f"input size {tuple(x.shape[-2:])} is not divisible by {factor}")
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
        skips.pop()
        for block in self.up:
            x = block(x)
            if skips:
                skip = skips.pop()
                if self.config.skip_connections:
                    x = torch.cat([x, skip], dim=1)
        return x


class PatchDiscriminator(nn.Module):
    """Convolutional patch classifier emitting a raw score grid.

    ``num_layers`` stride-2 4x4 convolutions followed by two stride-1 4x4
    convolutions, all with padding 1; see :func:`patch_grid_size`.
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        nf = config.base_channels
        layers = [nn.Conv2d(config.in_channels, nf, 4, 2, 1), nn.LeakyReLU(0.2)]
        mult = 1
        for n in range(1, config.num_layers):
            prev, mult = mult, min(2**n, 8)
            layers += [nn.Conv2d(nf * prev, nf * mult, 4, 2, 1), nn.InstanceNorm2d(nf * mult), nn.LeakyReLU(0.2)]
        prev, mult = mult, min(2**config.num_layers, 8)
        layers += [nn.Conv2d(nf * prev, nf * mult, 4, 1, 1), nn.InstanceNorm2d(nf * mult), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(nf * mult, 1, 4, 1, 1))
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        gh, gw = patch_grid_size(h, self.config.num_layers), patch_grid_size(w, self.config.num_layers)
        if gh < 1 or gw < 1:
            raise ShapeError(f"input {h}x{w} is smaller than the discriminator's receptive field")
        return self.model(x)


def patch_grid_size(size: int, num_layers: int) -> int:
    """Output grid side for an input side ``size``.

    Stride-2 layers map ``n -> floor(n / 2)`` (k=4, p=1); each of the two
    stride-1 layers maps ``n -> n - 1``. Returns a value < 1 when the input
    is too small.
    """
    for _ in range(num_layers):
        if size < 2:
            return 0
        size = (size + 2 - 4) // 2 + 1
    return size - 2


def build_generator(config: GeneratorConfig, seed: int | None = None) -> UnetGenerator:
    if seed is not None:
        torch.manual_seed(seed)
    net = UnetGenerator(config)
    init_weights(net)
    return net


def build_discriminator(config: DiscriminatorConfig, seed: int | None = None) -> PatchDiscriminator:
    if seed is not None:
        torch.manual_seed(seed)
    net = PatchDiscriminator(config)
    init_weights(net)
    return net


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# --- feature extractor -------------------------------------------------

def _vgg19_layer_names() -> list[str]:
    """Names of ``torchvision.models.vgg19().features`` entries, in order."""
    names = []
    for block, convs in enumerate((2, 2, 4, 4, 4), start=1):
        for i in range(1, convs + 1):
            names += [f"conv{block}_{i}_pre", f"conv{block}_{i}"]
        names.append(f"pool{block}")
    return names


VGG19_LAYERS = _vgg19_layer_names()
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class FeatureExtractorHandle:
    """``layer_id`` names a VGG19 layer; ``conv4_4`` is taken after its ReLU
    and ``conv4_4_pre`` before it."""

    layer_id: str = "conv4_4"
    weights_source: str | None = None


def resolve_weights_path(path=None) -> Path:
    path = path or os.environ.get(WEIGHTS_ENV)
    if not path:
        raise ResourceError(f"no extractor weights given; pass a path or set {WEIGHTS_ENV}")
    path = Path(path)
    if not path.is_file():
        raise ResourceError(f"extractor weights file not found: {path}")
    return path


class FeatureExtractor(nn.Module):
    """Frozen VGG19 truncated at ``layer_id``.

    Inputs are images in ``value_range``; they are remapped to [0, 1] and
    standardized with ImageNet statistics before the network.
    """

    def __init__(self, handle: FeatureExtractorHandle | None = None, value_range=(-1.0, 1.0)):
        super().__init__()
        from torchvision.models import vgg19

        handle = handle or FeatureExtractorHandle()
        if handle.layer_id not in VGG19_LAYERS:
            raise ConfigError(f"unknown VGG19 layer {handle.layer_id!r}")
        path = resolve_weights_path(handle.weights_source)
        state = torch.load(path, map_location="cpu", weights_only=True)
        state = {k.removeprefix("features."): v for k, v in state.items() if not k.startswith("classifier.")}
        features = vgg19(weights=None).features
        try:
            features.load_state_dict(state)
        except RuntimeError as exc:
            raise ResourceError(f"{path} does not hold VGG19 feature weights: {exc}") from exc
        self.handle = FeatureExtractorHandle(handle.layer_id, str(path))
        self.body = features[: VGG19_LAYERS.index(handle.layer_id) + 1]
        for p in self.body.parameters():
            p.requires_grad_(False)
        self.body.eval()
        lo, hi = value_range
        self.lo, self.hi = lo, hi
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def train(self, mode: bool = True):
        # stays in eval mode whatever the enclosing module does
        super().train(False)
        return self

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        squeeze = image.ndim == 3
        x = image.unsqueeze(0) if squeeze else image
        if x.shape[1] != 3:
            raise ShapeError(f"feature extractor needs 3 channels, got {x.shape[1]}")
        x = (x - self.lo) / (self.hi - self.lo)
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        out = self.body(x)
        return out.squeeze(0) if squeeze else out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.body.parameters():
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()


def extract_features(extractor: FeatureExtractor, image: torch.Tensor) -> torch.Tensor:
    return extractor(image)


def write_reference_weights(path, seed: int = 0) -> Path:
    """Write a seeded, randomly initialized VGG19 feature state dict.

    Useful for tests and smoke runs where the pretrained ImageNet weights are
    not available; it is not a substitute for them in real training.
    """
    from torchvision.models import vgg19

    torch.manual_seed(seed)
    features = vgg19(weights=None).features
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(features.state_dict(), path)
    return path
