"""Training losses: joint two-judge adversarial terms, L1
reconstruction, and a perceptual term over pluggable feature maps.
"""

import dataclasses

import torch
from torch import nn

SCORE_EPS = 1e-7  # probability clamp before taking logs


@dataclasses.dataclass
class LossWeights:
    """Scales for the adversarial, L1, and perceptual terms."""

    adversarial: float = 5.0
    l1: float = 10.0
    perceptual: float = 10.0

    def validate(self):
        for name in ("adversarial", "l1", "perceptual"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError("%s weight must be >= 0, got %r" % (name, v))


# Per the usual dataset-specific tuning: the sharper dataset trains with
# stronger reconstruction terms.
MARKET_WEIGHTS = LossWeights(5.0, 10.0, 10.0)
DEEPFASHION_WEIGHTS = LossWeights(5.0, 1.0, 1.0)


def _check_same_shape(generated, target):
    if generated.shape != target.shape:
        raise ValueError("shape mismatch: generated %r vs target %r"
                         % (tuple(generated.shape), tuple(target.shape)))


def l1_loss(generated, target):
    """Mean absolute difference over every element."""
    _check_same_shape(generated, target)
    return (generated - target).abs().mean()


def perceptual_loss(generated, target, extractor):
    """Sum over feature channels of the per-channel mean absolute
    difference, accumulated over all maps the extractor returns.

    With the identity extractor this is exactly 3x the L1 loss (3 image
    channels, each contributing its own mean).
    """
    _check_same_shape(generated, target)
    feats_g = extractor.extract(generated)
    feats_t = extractor.extract(target)
    if len(feats_g) != len(feats_t):
        raise RuntimeError("extractor returned %d maps for generated but %d "
                           "for target" % (len(feats_g), len(feats_t)))
    total = None
    for fg, ft in zip(feats_g, feats_t):
        if fg.shape != ft.shape:
            raise RuntimeError("extractor map shapes differ: %r vs %r"
                               % (tuple(fg.shape), tuple(ft.shape)))
        diff = (fg - ft).abs()
        dims = tuple(d for d in range(diff.dim()) if d != diff.dim() - 3)
        per_channel = diff.mean(dim=dims)
        term = per_channel.sum()
        total = term if total is None else total + term
    if total is None:
        raise RuntimeError("extractor returned no feature maps")
    return total


def adversarial_losses(scores_real, scores_fake, eps=SCORE_EPS):
    """Discriminator and generator objectives from paired judge scores.

    scores_real / scores_fake are (appearance, pose) score tensors. The
    discriminator maximizes log of the product of real scores plus log of
    the product of fake complements; the generator non-saturatingly
    maximizes log of the product of its fake scores. Scores are clamped
    to [eps, 1 - eps] so both losses stay finite.
    """
    sa_r, sp_r = scores_real
    sa_f, sp_f = scores_fake
    sa_r = torch.clamp(sa_r, eps, 1.0 - eps)
    sp_r = torch.clamp(sp_r, eps, 1.0 - eps)
    sa_f = torch.clamp(sa_f, eps, 1.0 - eps)
    sp_f = torch.clamp(sp_f, eps, 1.0 - eps)
    d_loss = (-(torch.log(sa_r) + torch.log(sp_r)).mean()
              - (torch.log(1.0 - sa_f) + torch.log(1.0 - sp_f)).mean())
    g_loss = -(torch.log(sa_f) + torch.log(sp_f)).mean()
    return d_loss, g_loss


def full_loss(adversarial, l1, perceptual, weights):
    """Weighted sum of the three generator terms."""
    weights.validate()
    return (weights.adversarial * adversarial
            + weights.l1 * l1
            + weights.perceptual * perceptual)


class IdentityExtractor(nn.Module):
    """Returns the image itself as the single feature map."""

    layer_tag = "identity"

    def extract(self, image):
        return [image]


class RandomConvExtractor(nn.Module):
    """A frozen random convolution with a smooth activation.

    Stands in for a pretrained perceptual network where no weights may
    be shipped: fixed by seed, deterministic, and differentiable with
    respect to its input.
    """

    def __init__(self, out_channels=8, seed=0, kernel=3):
        super().__init__()
        self.layer_tag = "random_conv_s%d" % seed
        gen = torch.Generator().manual_seed(seed)
        weight = torch.randn(
            (out_channels, 3, kernel, kernel), generator=gen) * 0.2
        bias = torch.randn((out_channels,), generator=gen) * 0.1
        # the Conv2d constructor samples its default init from the global
        # RNG; fork so building an extractor never perturbs callers
        with torch.random.fork_rng(devices=[]):
            self.conv = nn.Conv2d(3, out_channels, kernel,
                                  padding=kernel // 2)
        with torch.no_grad():
            self.conv.weight.copy_(weight)
            self.conv.bias.copy_(bias)
        for p in self.parameters():
            p.requires_grad_(False)

    def extract(self, image):
        return [torch.tanh(self.conv(image))]
