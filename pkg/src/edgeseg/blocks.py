"""Layers shared by the encoder and decoders.

Tensors are ``[batch, channels, x, y, z]``; kernels are given in the same
``(x, y, z)`` order, so ``(3, 3, 1)`` is an in-plane kernel and ``(1, 1, 3)``
looks across slices.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from edgeseg.errors import ContractError


def conv3d(
    in_chs: int,
    out_chs: int,
    kernel=1,
    stride=1,
    dilation=1,
    bias: bool = False,
) -> nn.Conv3d:
    """3D convolution with "same" padding for odd kernels (per axis, dilation aware)."""
    kernel = _triple(kernel)
    dilation = _triple(dilation)
    padding = tuple(d * (k - 1) // 2 for k, d in zip(kernel, dilation))
    return nn.Conv3d(in_chs, out_chs, kernel_size=kernel, stride=stride, padding=padding, dilation=dilation, bias=bias)


def _triple(value) -> tuple[int, int, int]:
    if isinstance(value, int):
        return (value, value, value)
    return tuple(value)


class AdaptiveNorm3d(nn.Module):
    """Per-channel normalization over the spatial axes.

    Statistics are taken over the batch and spatial axes when the batch holds
    more than one sample and over the spatial axes of each sample otherwise.
    No running statistics are kept, so train and eval behave the same.
    """

    def __init__(self, channels: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        dims = (0, 2, 3, 4) if x.shape[0] > 1 else (2, 3, 4)
        mean = x.mean(dim=dims, keepdim=True)
        var = x.var(dim=dims, keepdim=True, unbiased=False)
        x = (x - mean) * torch.rsqrt(var + self.eps)
        return x * self.weight.view(1, -1, 1, 1, 1) + self.bias.view(1, -1, 1, 1, 1)


def conv_norm_relu(in_chs: int, out_chs: int, kernel=3, stride=1, dilation=1) -> nn.Sequential:
    return nn.Sequential(
        conv3d(in_chs, out_chs, kernel, stride, dilation),
        AdaptiveNorm3d(out_chs),
        nn.ReLU(inplace=True),
    )


class Bottleneck(nn.Module):
    """ResNet bottleneck: 1x1x1 reduce, 3x3x3 (optionally dilated), 1x1x1 expand.

    Dilation enlarges the receptive field without adding parameters.
    """

    expansion = 4

    def __init__(self, inplanes: int, planes: int, stride=1, dilation: int = 1, downsample: nn.Module | None = None):
        super().__init__()
        self.conv1 = conv3d(inplanes, planes, 1)
        self.bn1 = AdaptiveNorm3d(planes)
        self.conv2 = conv3d(planes, planes, 3, stride=stride, dilation=dilation)
        self.bn2 = AdaptiveNorm3d(planes)
        self.conv3 = conv3d(planes, planes * self.expansion, 1)
        self.bn3 = AdaptiveNorm3d(planes * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def residual_norm(self) -> AdaptiveNorm3d:
        return self.bn3

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ResidualRefinementBlock(nn.Module):
    """RRB: ``relu(x' + f(x'))`` with ``x' = conv1x1(x)``.

    ``f`` factorizes a 3x3x3 convolution into an in-plane ``(3, 3, 1)`` conv
    and a between-slice ``(1, 1, 3)`` conv, each followed by a norm.
    """

    def __init__(self, in_chs: int, out_chs: int) -> None:
        super().__init__()
        self.project = conv3d(in_chs, out_chs, 1, bias=True)
        self.conv_plane = conv3d(out_chs, out_chs, (3, 3, 1))
        self.norm_plane = AdaptiveNorm3d(out_chs)
        self.relu = nn.ReLU(inplace=True)
        self.conv_slice = conv3d(out_chs, out_chs, (1, 1, 3))
        self.norm_slice = AdaptiveNorm3d(out_chs)

    def residual_norm(self) -> AdaptiveNorm3d:
        return self.norm_slice

    def refine(self, x: torch.Tensor) -> torch.Tensor:
        """The residual branch ``f``."""
        out = self.relu(self.norm_plane(self.conv_plane(x)))
        return self.norm_slice(self.conv_slice(out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.project(x)
        return F.relu(x + self.refine(x))


PYRAMID_KERNELS = ((3, 3, 3), (5, 5, 3), (7, 7, 3))


class PyramidAttention(nn.Module):
    """PAM: fuse an encoder skip feature with the upsampled decoder feature.

    ``P`` is the sum of three parallel large-kernel convolutions of the encoder
    feature, ``A = sigmoid(conv1x1(dec_up))`` weights it, and the projected
    encoder feature is added back: ``out = conv1x1(enc) + A * P``.
    """

    def __init__(self, enc_chs: int, dec_chs: int, out_chs: int, kernels=PYRAMID_KERNELS) -> None:
        super().__init__()
        self.pyramid = nn.ModuleList(conv3d(enc_chs, out_chs, k, bias=True) for k in kernels)
        self.attention = conv3d(dec_chs, out_chs, 1, bias=True)
        self.skip = conv3d(enc_chs, out_chs, 1, bias=True)

    def forward(self, enc: torch.Tensor, dec_up: torch.Tensor) -> torch.Tensor:
        if enc.shape[2:] != dec_up.shape[2:]:
            raise ContractError(
                f"PAM inputs differ spatially: encoder {tuple(enc.shape[2:])}, decoder {tuple(dec_up.shape[2:])}"
            )
        pyramid = sum(conv(enc) for conv in self.pyramid)
        weight = torch.sigmoid(self.attention(dec_up))
        return self.skip(enc) + weight * pyramid


class MultiLevelEdgeAttention(nn.Module):
    """MLEAM: edge heads on three decoder levels that gate their features.

    For level ``i``, ``edge_i = sigmoid(conv1x1(F_i))`` and the gated feature
    is ``F_i * (1 + edge_i)``, so a zero edge response leaves ``F_i`` as is.
    """

    def __init__(self, channels: tuple[int, int, int]) -> None:
        super().__init__()
        self.heads = nn.ModuleList(conv3d(c, 1, 1, bias=True) for c in channels)

    def attend(self, level: int, feature: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(edge_pred, gated_feature)`` for one level."""
        edge = torch.sigmoid(self.heads[level](feature))
        return edge, feature * (1.0 + edge)

    def forward(
        self, features: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    ) -> tuple[list[torch.Tensor], list[torch.Tensor], list[torch.Tensor]]:
        """Apply every head.

        :returns: ``(edge_preds, gated_features, upsampled)`` where ``upsampled``
            holds the two coarse edge maps resized to the finest level.
        """
        edges, gated = [], []
        for level, feature in enumerate(features):
            edge, feature = self.attend(level, feature)
            edges.append(edge)
            gated.append(feature)
        return edges, gated, upsample_edges(edges)


def upsample_edges(edges: list[torch.Tensor]) -> list[torch.Tensor]:
    """Resize every edge map except the last to the last one's spatial size."""
    size = edges[-1].shape[2:]
    return [F.interpolate(e, size=size, mode="trilinear", align_corners=False) for e in edges[:-1]]


def init_weights(module: nn.Module, zero_init_residual: bool = False) -> None:
    """Fan-in scaled normal conv weights, zero biases, unit norm scales.

    With ``zero_init_residual`` the last norm scale of every residual branch
    starts at 0, making each residual block an identity map (after ReLU).
    """
    for m in module.modules():
        if isinstance(m, nn.Conv3d):
            fan_in = m.in_channels // m.groups * math.prod(m.kernel_size)
            nn.init.normal_(m.weight, 0.0, math.sqrt(2.0 / fan_in))
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, AdaptiveNorm3d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    if zero_init_residual:
        for m in module.modules():
            if isinstance(m, (Bottleneck, ResidualRefinementBlock)):
                nn.init.zeros_(m.residual_norm().weight)
