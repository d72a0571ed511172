"""Appearance and pose discriminators.

Both share one trunk: the concatenated inputs go through a stem
convolution, one stride-2 downsampling, a short residual stack with
self-attention inserted after the second residual block, and a 1x1 head
whose spatial mean is squashed by a sigmoid. The appearance judge sees
(condition image, candidate); the pose judge sees (candidate, target
heatmap).
"""

import dataclasses

import torch
import torch.nn.functional as F
from torch import nn

from .attention import AttentionParams
from .generator import init_weights, make_norm
from .pose_encoding import NUM_JOINTS


@dataclasses.dataclass
class DiscriminatorConfig:
    num_residual_blocks: int = 3
    base_channels: int = 64
    leaky_slope: float = 0.2

    def validate(self):
        if self.num_residual_blocks < 1:
            raise ValueError("num_residual_blocks must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1), got %r"
                             % (self.leaky_slope,))


class ResidualBlock(nn.Module):
    def __init__(self, channels, slope):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm1 = make_norm("batch", channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm2 = make_norm("batch", channels)
        self.slope = slope

    def forward(self, x):
        h = F.leaky_relu(self.norm1(self.conv1(x)), self.slope)
        h = self.norm2(self.conv2(h))
        return F.leaky_relu(x + h, self.slope)


class _Discriminator(nn.Module):
    """Trunk shared by both judges; subclasses fix the input channels."""

    def __init__(self, in_channels, config):
        super().__init__()
        config.validate()
        self.config = config
        b = config.base_channels
        s = config.leaky_slope
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, b, 3, padding=1, bias=False),
            make_norm("batch", b),
            nn.LeakyReLU(s, inplace=True),
        )
        self.down = nn.Sequential(
            nn.Conv2d(b, 2 * b, 3, stride=2, padding=1, bias=False),
            make_norm("batch", 2 * b),
            nn.LeakyReLU(s, inplace=True),
        )
        self.res_blocks = nn.ModuleList(
            ResidualBlock(2 * b, s) for _ in range(config.num_residual_blocks))
        self.attention_after = min(2, config.num_residual_blocks)
        self.attention = AttentionParams(2 * b)
        self.head = nn.Conv2d(2 * b, 1, 1)
        init_weights(self)

    def score(self, x):
        h = self.down(self.stem(x))
        for i, block in enumerate(self.res_blocks):
            h = block(h)
            if i + 1 == self.attention_after:
                h = self.attention(h)
        logits = self.head(h).mean(dim=(1, 2, 3))
        return torch.sigmoid(logits)


class AppearanceDiscriminator(_Discriminator):
    """Scores whether a candidate plausibly shows the conditioned person."""

    def __init__(self, config):
        super().__init__(6, config)

    def forward(self, condition_image, candidate):
        if condition_image.shape != candidate.shape:
            raise ValueError("condition %r and candidate %r shapes differ"
                             % (tuple(condition_image.shape),
                                tuple(candidate.shape)))
        return self.score(torch.cat([condition_image, candidate], dim=1))


class PoseDiscriminator(_Discriminator):
    """Scores whether a candidate matches the target pose heatmap."""

    def __init__(self, config):
        super().__init__(3 + NUM_JOINTS, config)

    def forward(self, candidate, target_pose):
        if candidate.shape[-2:] != target_pose.shape[-2:]:
            raise ValueError("candidate %r and pose %r are not spatially "
                             "aligned" % (tuple(candidate.shape),
                                          tuple(target_pose.shape)))
        if target_pose.shape[1] != NUM_JOINTS:
            raise ValueError("target pose must have %d channels, got %d"
                             % (NUM_JOINTS, target_pose.shape[1]))
        return self.score(torch.cat([candidate, target_pose], dim=1))


def score_appearance(condition_image, candidate, params):
    """params is an AppearanceDiscriminator; scores lie strictly in (0, 1)."""
    return params(condition_image, candidate)


def score_pose(candidate, target_pose, params):
    """params is a PoseDiscriminator; scores lie strictly in (0, 1)."""
    return params(candidate, target_pose)
