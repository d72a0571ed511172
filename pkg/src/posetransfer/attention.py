"""Global attention primitives shared by the generator and discriminators.

Attention here always follows the gated non-local pattern: 1x1 key/query
projections produce an NxN map over spatial locations, a 1x1 value
projection is mixed through the map, a 1x1 output projection and a
learned scalar gate close the residual. The gate starts at exactly zero
so a freshly built module is an identity map.
"""

import torch
import torch.nn.functional as F
from torch import nn


class AttentionParams(nn.Module):
    """Key/query/value/output projections plus the residual gate.

    key_channels defaults to max(1, channels // reduction). All
    projections are bias-free 1x1 convolutions.
    """

    def __init__(self, channels, reduction=8, key_channels=None):
        super().__init__()
        if channels < 1:
            raise ValueError("channels must be >= 1, got %d" % channels)
        if reduction < 1:
            raise ValueError("reduction must be >= 1, got %d" % reduction)
        if key_channels is None:
            key_channels = max(1, channels // reduction)
        self.channels = channels
        self.key = nn.Conv2d(channels, key_channels, 1, bias=False)
        self.query = nn.Conv2d(channels, key_channels, 1, bias=False)
        self.value = nn.Conv2d(channels, channels, 1, bias=False)
        self.out = nn.Conv2d(channels, channels, 1, bias=False)
        self.gamma = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        return self_attention(x, self)


def _as_batched(x, what):
    if not torch.is_tensor(x):
        raise TypeError("%s must be a tensor, got %s" % (what, type(x).__name__))
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ValueError("%s must be CxHxW or BxCxHxW, got shape %r"
                     % (what, tuple(x.shape)))


def _check_finite(x, what):
    if not torch.isfinite(x).all():
        raise ValueError("non-finite values in %s" % what)


def compute_attention_map(code, params):
    """Dot-product attention map over the spatial locations of `code`.

    Entry [j, i] is softmax over i of key(code)_i . query(code)_j, so
    each output row j is a distribution over source locations i.
    Accepts CxHxW or BxCxHxW; returns NxN or BxNxN with N = H*W.
    """
    x, squeeze = _as_batched(code, "attention input")
    _check_finite(x, "attention input")
    b, _, h, w = x.shape
    n = h * w
    keys = params.key(x).reshape(b, -1, n)
    queries = params.query(x).reshape(b, -1, n)
    logits = torch.bmm(queries.transpose(1, 2), keys)  # [b, j, i]
    amap = F.softmax(logits, dim=2)
    return amap.squeeze(0) if squeeze else amap


def apply_attention(code, attention_map, params):
    """Mix value features of `code` through `attention_map`, gated residual.

    Output location j receives sum_i map[j, i] * value(code)_i, passed
    through the output projection and added back as gamma * o + code.
    With gamma == 0 the input is returned bit-for-bit.
    """
    x, squeeze = _as_batched(code, "attention input")
    _check_finite(x, "attention input")
    amap = attention_map
    if amap.dim() == 2:
        amap = amap.unsqueeze(0)
    if amap.dim() != 3:
        raise ValueError("attention map must be NxN or BxNxN, got shape %r"
                         % (tuple(attention_map.shape),))
    _check_finite(amap, "attention map")
    b, c, h, w = x.shape
    n = h * w
    if amap.shape[1] != n or amap.shape[2] != n:
        raise ValueError(
            "attention map covers %dx%d locations but code has %d"
            % (amap.shape[1], amap.shape[2], n))
    if amap.shape[0] != b:
        raise ValueError("attention map batch %d != code batch %d"
                         % (amap.shape[0], b))
    values = params.value(x).reshape(b, c, n)
    mixed = torch.bmm(values, amap.transpose(1, 2)).reshape(b, c, h, w)
    o = params.out(mixed)
    out = params.gamma * o + x
    return out.squeeze(0) if squeeze else out


def self_attention(code, params):
    """compute_attention_map and apply_attention on the same tensor."""
    amap = compute_attention_map(code, params)
    return apply_attention(code, amap, params)
