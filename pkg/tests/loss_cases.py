"""Worked examples for the loss functions, each with its expected value.

Expected values are closed forms or hand arithmetic, written out here
rather than computed by the code under test. Golden values come from
``tests/golden``.
"""

import json
import math
from pathlib import Path

import numpy as np
import torch

from fixtures import checkerboard, ramp
from scgan import losses
from scgan.networks import FeatureExtractor, FeatureExtractorHandle
from scgan.regions import AttentionWeights, RegionSet

GOLDEN = Path(__file__).parent / "golden"


def logit(p):
    return math.log(p / (1 - p))


def uniform(p, shape=(1, 6, 6)):
    return torch.full(shape, logit(p), dtype=torch.float64)


def cases(extractor_weights=None):
    """Yield ``(name, computed, expected, tolerance)`` tuples."""
    x = torch.randn(3, 8, 8, generator=torch.Generator().manual_seed(0), dtype=torch.float64).clamp(-1, 1)
    big = torch.full((1, 4, 4), 40.0, dtype=torch.float64)
    eyes = RegionSet.from_components([("eyes", (0.25, 0.25, 0.5, 0.25))])

    # adversarial, discriminator side
    yield "disc saturated ideal", losses.adversarial_loss_discriminator(big, -big), 0.0, 1e-6
    yield "disc both 0.5", losses.adversarial_loss_discriminator(uniform(0.5), uniform(0.5)), -2 * math.log(2), 1e-6
    yield "disc -2 ln 2 literal", losses.adversarial_loss_discriminator(uniform(0.5), uniform(0.5)), -1.3862944, 1e-6
    yield ("disc 0.8/0.3", losses.adversarial_loss_discriminator(uniform(0.8), uniform(0.3)),
           math.log(0.8) + math.log(0.7), 1e-6)
    yield "disc 0.8/0.3 literal", losses.adversarial_loss_discriminator(uniform(0.8), uniform(0.3)), -0.5798185, 1e-6
    # adversarial, generator side
    yield "gen 0.5", losses.adversarial_loss_generator(uniform(0.5)), math.log(2), 1e-6
    yield "gen saturated", losses.adversarial_loss_generator(big), 0.0, 1e-6
    yield "gen 0.25", losses.adversarial_loss_generator(uniform(0.25)), -math.log(0.25), 1e-6
    yield "gen 0.25 literal", losses.adversarial_loss_generator(uniform(0.25)), 1.3862944, 1e-6
    # cycle
    yield "cycle identical", losses.cycle_loss(x, x.clone()), 0.0, 1e-6
    yield "cycle offset 0.1", losses.cycle_loss(x, x + 0.1), 0.1, 1e-6
    a = torch.tensor([[[0.0, 0.5]]], dtype=torch.float64)
    b = torch.tensor([[[0.2, 0.1]]], dtype=torch.float64)
    yield "cycle hand sum", losses.cycle_loss(a, b), 0.3, 1e-6
    # attentive cycle
    yield "att perfect", losses.attentive_cycle_loss(x, x.clone(), eyes, AttentionWeights((1, 0.5))), 0.0, 1e-6
    y = x + 0.25
    yield ("att whole reduces", losses.attentive_cycle_loss(x, y, RegionSet.whole_only(), AttentionWeights((1,))),
           float(losses.cycle_loss(x, y)), 1e-6)
    yield "att offset 0.2", losses.attentive_cycle_loss(x, x + 0.2, eyes, AttentionWeights((1, 0.5))), 0.3, 1e-6
    # total variation
    yield "tv constant", losses.tv_loss(torch.full((3, 5, 7), 0.3, dtype=torch.float64)), 0.0, 1e-6
    two = torch.tensor([[[0.0, 1.0], [0.0, 1.0]]], dtype=torch.float64)
    yield "tv 2x2 hand", losses.tv_loss(two), 0.5, 1e-6
    yield "tv flip", losses.tv_loss(x.flip(-1)), float(losses.tv_loss(x)), 1e-6
    # perceptual
    yield "perceptual identity stub equal", losses.perceptual_loss(x, x.clone(), lambda t: t), 0.0, 1e-6
    yield "perceptual identity stub offset", losses.perceptual_loss(x, x + 0.3, lambda t: t), 0.3, 1e-6
    if extractor_weights is not None:
        ext = FeatureExtractor(FeatureExtractorHandle("conv4_4", str(extractor_weights)))
        img = checkerboard()
        yield "perceptual real equal", losses.perceptual_loss(img, img.clone(), ext), 0.0, 1e-4
        golden = json.loads((GOLDEN / "perceptual_pair.json").read_text())["perceptual_loss"]
        yield "perceptual real golden", losses.perceptual_loss(img, ramp(), ext), golden, 1e-4
        feats = ext(img).detach().numpy()
        yield ("checkerboard features golden", float(np.abs(feats - np.load(GOLDEN / "checkerboard_conv4_4.npy")).max()),
               0.0, 1e-4)
    # full objective
    zero = dict.fromkeys(losses.COMPONENTS, 0.0)
    yield "objective zeros", losses.full_objective(zero, losses.LossWeights()), 0.0, 1e-6
    comps = dict(zip(losses.COMPONENTS, (-1.0, -1.2, 0.3, 0.25, 0.5, 0.2)))
    yield "objective default weights", losses.full_objective(comps, losses.LossWeights(10, 2, 0.5)), 4.4, 1e-6
    yield "objective zero weights", losses.full_objective(comps, losses.LossWeights(0, 0, 0)), -2.2, 1e-6
