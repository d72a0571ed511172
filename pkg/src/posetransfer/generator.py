"""Person image generator: shared-topology encoders, a stack of
pose-guided attention blocks, and a mirrored upsampling decoder.

Each block carries two pathways. The pose pathway fuses appearance into
the pose code (at a configurable point) and refines it with stacked
convolutions; the image pathway is refined by plain convolutions and
then deformed by attention whose map is keyed entirely by the pose code.
"""

import dataclasses

import numpy as np
import torch
from torch import nn

from .attention import AttentionParams, apply_attention, compute_attention_map, self_attention
from .pose_encoding import NUM_JOINTS, concat_pose_pair

FUSION_PLACES = ("head", "middle", "tail", "none")
NORM_KINDS = ("batch", "instance")


@dataclasses.dataclass
class GeneratorConfig:
    num_blocks: int = 3
    base_channels: int = 64
    norm_kind: str = "batch"
    fusion_place: str = "head"
    use_self_attention: bool = True
    use_cross_modal: bool = True
    image_size: tuple = (128, 64)  # (height, width)
    attention_reduction: int = 8
    # key the deformation map on the block's refined pose code (default)
    # or on the incoming one
    map_from_input_pose: bool = False

    def validate(self):
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1, got %d" % self.num_blocks)
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.norm_kind not in NORM_KINDS:
            raise ValueError("norm_kind must be one of %r, got %r"
                             % (NORM_KINDS, self.norm_kind))
        if self.fusion_place not in FUSION_PLACES:
            raise ValueError("fusion_place must be one of %r, got %r"
                             % (FUSION_PLACES, self.fusion_place))
        if self.attention_reduction < 1:
            raise ValueError("attention_reduction must be >= 1")
        h, w = self.image_size
        if h < 4 or w < 4 or h % 4 or w % 4:
            raise ValueError(
                "image_size must be divisible by 4 for the two "
                "downsampling stages, got %r" % (self.image_size,))

    @property
    def code_channels(self):
        return self.base_channels * 4

    @property
    def code_size(self):
        return self.image_size[0] // 4, self.image_size[1] // 4


def make_norm(kind, channels):
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    raise ValueError("unknown norm kind %r" % (kind,))


def conv_norm_relu(in_ch, out_ch, norm_kind, stride=1, kernel=3):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride,
                  padding=kernel // 2, bias=False),
        make_norm(norm_kind, out_ch),
        nn.ReLU(inplace=True),
    )


def init_weights(module):
    """Convs N(0, 0.02), norms weight 1 / bias 0. Attention gates are
    zero-initialized at construction and left untouched here."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d)):
            if m.weight is not None:
                nn.init.ones_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class Encoder(nn.Module):
    """3x3 stem plus two stride-2 convolutions; output has 4x base
    channels at 1/4 resolution."""

    def __init__(self, in_channels, base_channels, norm_kind):
        super().__init__()
        b = base_channels
        self.layers = nn.Sequential(
            conv_norm_relu(in_channels, b, norm_kind),
            conv_norm_relu(b, 2 * b, norm_kind, stride=2),
            conv_norm_relu(2 * b, 4 * b, norm_kind, stride=2),
        )

    def forward(self, x):
        return self.layers(x)


class Decoder(nn.Module):
    """Two nearest-upsample + conv stages mirroring the encoder, then a
    3-channel projection squashed by tanh."""

    def __init__(self, base_channels, norm_kind):
        super().__init__()
        b = base_channels
        self.layers = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            conv_norm_relu(4 * b, 2 * b, norm_kind),
            nn.Upsample(scale_factor=2, mode="nearest"),
            conv_norm_relu(2 * b, b, norm_kind),
            nn.Conv2d(b, 3, 3, padding=1),
            nn.Tanh(),
        )

    def forward(self, x):
        return self.layers(x)


class CrossModalBlock(nn.Module):
    """One refinement block over an (image code, pose code) pair.

    The pose pathway is four 3x3 convolutions; fusing the image code in
    doubles the width, and one later layer halves it back to C:

      head:   fuse, then convs [2C->2C, 2C->2C, 2C->2C, 2C->C]
      middle: convs [C->C, C->C], fuse, convs [2C->2C, 2C->C]
      tail:   convs [C->C x4], fuse, 1x1 projection [2C->C]
      none:   convs [C->C x4], no fusion

    Fusion is channel concatenation (pose first) refined by
    self-attention unless use_self_attention is off.

    The image pathway is four C->C convolutions followed by the
    pose-keyed deformation: the attention map is computed from the pose
    code alone and applied to the image code through a zero-initialized
    residual gate.
    """

    def __init__(self, channels, config):
        super().__init__()
        c = channels
        nk = config.norm_kind
        place = config.fusion_place
        self.fusion_place = place
        self.map_from_input_pose = config.map_from_input_pose
        self.image_path = nn.Sequential(
            *[conv_norm_relu(c, c, nk) for _ in range(4)])
        self.fusion_attention = None
        self.tail_projection = None
        if place == "head":
            self.pose_pre = nn.Identity()
            self.pose_post = nn.Sequential(
                conv_norm_relu(2 * c, 2 * c, nk),
                conv_norm_relu(2 * c, 2 * c, nk),
                conv_norm_relu(2 * c, 2 * c, nk),
                conv_norm_relu(2 * c, c, nk),
            )
        elif place == "middle":
            self.pose_pre = nn.Sequential(
                conv_norm_relu(c, c, nk),
                conv_norm_relu(c, c, nk),
            )
            self.pose_post = nn.Sequential(
                conv_norm_relu(2 * c, 2 * c, nk),
                conv_norm_relu(2 * c, c, nk),
            )
        elif place == "tail":
            self.pose_pre = nn.Sequential(
                *[conv_norm_relu(c, c, nk) for _ in range(4)])
            self.pose_post = nn.Identity()
            self.tail_projection = conv_norm_relu(2 * c, c, nk, kernel=1)
        else:  # none
            self.pose_pre = nn.Sequential(
                *[conv_norm_relu(c, c, nk) for _ in range(4)])
            self.pose_post = nn.Identity()
        if place != "none" and config.use_self_attention:
            self.fusion_attention = AttentionParams(
                2 * c, reduction=config.attention_reduction)
        self.cross_attention = None
        if config.use_cross_modal:
            self.cross_attention = AttentionParams(
                c, reduction=config.attention_reduction)

    def _fuse(self, pose_code, image_code):
        fused = torch.cat([pose_code, image_code], dim=1)
        if self.fusion_attention is not None:
            fused = self_attention(fused, self.fusion_attention)
        return fused

    def forward(self, image_code, pose_code):
        if image_code.shape[-2:] != pose_code.shape[-2:]:
            raise ValueError("image code %r and pose code %r are not "
                             "spatially aligned"
                             % (tuple(image_code.shape), tuple(pose_code.shape)))
        new_image = self.image_path(image_code)
        pose = self.pose_pre(pose_code)
        if self.fusion_place != "none":
            pose = self._fuse(pose, image_code)
        pose = self.pose_post(pose)
        if self.tail_projection is not None:
            pose = self.tail_projection(pose)
        if self.cross_attention is not None:
            key_source = pose_code if self.map_from_input_pose else pose
            amap = compute_attention_map(key_source, self.cross_attention)
            new_image = apply_attention(new_image, amap, self.cross_attention)
        return new_image, pose


class Generator(nn.Module):
    def __init__(self, config):
        super().__init__()
        config.validate()
        self.config = config
        b = config.base_channels
        self.appearance_encoder = Encoder(3, b, config.norm_kind)
        self.pose_encoder = Encoder(2 * NUM_JOINTS, b, config.norm_kind)
        self.blocks = nn.ModuleList(
            CrossModalBlock(config.code_channels, config)
            for _ in range(config.num_blocks))
        self.decoder = Decoder(b, config.norm_kind)
        init_weights(self)

    def forward(self, condition_image, pose_pair):
        h, w = self.config.image_size
        if condition_image.dim() != 4 or condition_image.shape[1] != 3:
            raise ValueError("condition image must be Bx3xHxW, got %r"
                             % (tuple(condition_image.shape),))
        if pose_pair.dim() != 4 or pose_pair.shape[1] != 2 * NUM_JOINTS:
            raise ValueError("pose pair must be Bx%dxHxW, got %r"
                             % (2 * NUM_JOINTS, tuple(pose_pair.shape)))
        if condition_image.shape[-2:] != (h, w) or pose_pair.shape[-2:] != (h, w):
            raise ValueError(
                "inputs must match the configured %dx%d image size; got "
                "image %r, pose %r" % (h, w, tuple(condition_image.shape[-2:]),
                                       tuple(pose_pair.shape[-2:])))
        image_code = self.appearance_encoder(condition_image)
        pose_code = self.pose_encoder(pose_pair)
        for block in self.blocks:
            image_code, pose_code = block(image_code, pose_code)
        return self.decoder(image_code)

    @torch.no_grad()
    def generate(self, condition_image, condition_pose, target_pose):
        """Numpy convenience wrapper: HWC float [-1, 1] in and out."""
        h, w = self.config.image_size
        img = np.asarray(condition_image, dtype=np.float32)
        if img.shape != (h, w, 3):
            raise ValueError("condition image must be %dx%dx3, got %r"
                             % (h, w, img.shape))
        if img.min() < -1.0 or img.max() > 1.0:
            raise ValueError("condition image must lie in [-1, 1]")
        pair = concat_pose_pair(condition_pose, target_pose)
        if pair.shape[:2] != (h, w):
            raise ValueError("pose heatmaps are %r, expected %dx%d"
                             % (pair.shape[:2], h, w))
        dev = next(self.parameters()).device
        img_t = torch.from_numpy(img.transpose(2, 0, 1)).unsqueeze(0).to(dev)
        pair_t = torch.from_numpy(
            np.ascontiguousarray(pair.transpose(2, 0, 1))).unsqueeze(0).to(dev)
        was_training = self.training
        self.eval()
        try:
            out = self.forward(img_t, pair_t)
        finally:
            self.train(was_training)
        return out.squeeze(0).cpu().numpy().transpose(1, 2, 0)


def count_parameters(gen_config, disc_config=None):
    """Total learnable parameters of the generator plus, when a
    discriminator config is given, both discriminators."""
    from .discriminators import AppearanceDiscriminator, PoseDiscriminator

    total = sum(p.numel() for p in Generator(gen_config).parameters())
    if disc_config is not None:
        total += sum(p.numel()
                     for p in AppearanceDiscriminator(disc_config).parameters())
        total += sum(p.numel()
                     for p in PoseDiscriminator(disc_config).parameters())
    return total
