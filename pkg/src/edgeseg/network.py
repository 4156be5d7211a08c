"""The segmentation network: dilated 3D ResNet encoder plus one of two decoders.

Encoder (ResNet101 layout by default, bottleneck counts 3/4/23/3)::

    stem   7x7x7 conv, stride (2,2,1)  -> T0   64ch  @ input / (2,2,1)
    pool   3x3x3 max, stride 2
    block1                             -> E1  256ch  @ input / (4,4,2)
    block2 stride 2                    ->     512ch  @ input / (8,8,4)
    block3 dilation 2                  ->    1024ch  @ input / (8,8,4)
    block4 dilation 4                  -> E4 2048ch  @ input / (8,8,4)

``full`` mode adds the multi-scale decoder: RRB blocks, PAM fusion of the
E1 and T0 skips, and MLEAM edge heads on the last three levels. ``pretrain``
mode adds a small three-stage decoder so training concentrates on the
encoder. Channel widths scale with ``width_multiplier``.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F

from edgeseg.blocks import (
    AdaptiveNorm3d,
    Bottleneck,
    MultiLevelEdgeAttention,
    PyramidAttention,
    ResidualRefinementBlock,
    conv3d,
    conv_norm_relu,
    init_weights,
)
from edgeseg.errors import ShapeError

logger = logging.getLogger(__name__)

# Total encoder stride per axis; legal inputs are multiples of it.
OUTPUT_STRIDE = (8, 8, 4)


class Mode(str, Enum):
    PRETRAIN = "pretrain"
    FULL = "full"


@dataclass(frozen=True)
class NetworkConfig:
    width_multiplier: float = 1.0
    blocks: tuple[int, int, int, int] = (3, 4, 23, 3)
    zero_init_residual: bool = False
    in_channels: int = 1

    def width(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_multiplier)))

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "NetworkConfig":
        return cls(
            width_multiplier=float(config["network.width_multiplier"]),
            blocks=tuple(config["network.blocks"]),
            zero_init_residual=bool(config["network.zero_init_residual"]),
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "width_multiplier": self.width_multiplier,
            "blocks": list(self.blocks),
            "zero_init_residual": self.zero_init_residual,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NetworkConfig":
        return cls(
            width_multiplier=float(data["width_multiplier"]),
            blocks=tuple(data["blocks"]),
            zero_init_residual=bool(data["zero_init_residual"]),
            in_channels=int(data.get("in_channels", 1)),
        )


@dataclass
class EncoderFeatures:
    t0: torch.Tensor
    e1: torch.Tensor
    e4: torch.Tensor


@dataclass
class ForwardOutput:
    """Network output: foreground probability and, in full mode, edge predictions.

    ``edge_preds`` is ordered coarsest first; it is empty in pretrain mode.
    """

    prob: torch.Tensor
    edge_preds: tuple[torch.Tensor, ...] = field(default_factory=tuple)


def check_input_shape(spatial: tuple[int, ...]) -> None:
    """Raise :class:`ShapeError` unless every axis is a positive multiple of :data:`OUTPUT_STRIDE`."""
    if len(spatial) != 3 or any(n < s or n % s for n, s in zip(spatial, OUTPUT_STRIDE)):
        raise ShapeError(
            f"input spatial shape {tuple(spatial)} must be a positive multiple of {OUTPUT_STRIDE} per axis"
        )


def upsample(x: torch.Tensor, factor: tuple[int, int, int]) -> torch.Tensor:
    return F.interpolate(x, scale_factor=factor, mode="trilinear", align_corners=False)


class DilatedResNetEncoder(nn.Module):
    def __init__(self, config: NetworkConfig) -> None:
        super().__init__()
        w = config.width
        self.inplanes = w(64)
        self.stem = nn.Sequential(
            conv3d(config.in_channels, w(64), 7, stride=(2, 2, 1)),
            AdaptiveNorm3d(w(64)),
            nn.ReLU(inplace=True),
        )
        self.maxpool = nn.MaxPool3d(kernel_size=3, stride=2, padding=1)
        self.block1 = self._make_block(w(64), config.blocks[0])
        self.block2 = self._make_block(w(128), config.blocks[1], stride=2)
        self.block3 = self._make_block(w(256), config.blocks[2], dilation=2)
        self.block4 = self._make_block(w(512), config.blocks[3], dilation=4)
        self.out_channels = {"t0": w(64), "e1": w(64) * 4, "e4": w(512) * 4}

    def _make_block(self, planes: int, blocks: int, stride: int = 1, dilation: int = 1) -> nn.Sequential:
        downsample = None
        if stride != 1 or self.inplanes != planes * Bottleneck.expansion:
            # for downsample, dilation makes no difference.
            downsample = nn.Sequential(
                conv3d(self.inplanes, planes * Bottleneck.expansion, 1, stride=stride),
                AdaptiveNorm3d(planes * Bottleneck.expansion),
            )
        layers = [Bottleneck(self.inplanes, planes, stride, dilation, downsample)]
        self.inplanes = planes * Bottleneck.expansion
        for _ in range(1, blocks):
            layers.append(Bottleneck(self.inplanes, planes, dilation=dilation))
        return nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> EncoderFeatures:
        t0 = self.stem(x)
        e1 = self.block1(self.maxpool(t0))
        e4 = self.block4(self.block3(self.block2(e1)))
        return EncoderFeatures(t0=t0, e1=e1, e4=e4)


def build_encoder(config: NetworkConfig) -> DilatedResNetEncoder:
    """Build and initialise the encoder alone."""
    encoder = DilatedResNetEncoder(config)
    init_weights(encoder, config.zero_init_residual)
    return encoder


class MultiScaleDecoder(nn.Module):
    """Decoder used for segmentation training (``full`` mode).

    The decoder path runs ungated. Edge attention is applied afterwards over
    the three level features, and only the gated finest feature reaches the
    classifier, together with the three edge maps.
    """

    def __init__(self, config: NetworkConfig, enc_channels: Mapping[str, int]) -> None:
        super().__init__()
        w = config.width
        c0, c1, c2, c3 = w(256), w(128), w(64), w(32)
        self.reduce = conv3d(enc_channels["e4"], c0, 1, bias=True)
        self.rrb0 = ResidualRefinementBlock(c0, c0)
        self.pam1 = PyramidAttention(enc_channels["e1"], c0, c1)
        self.rrb1 = ResidualRefinementBlock(c1 + c0, c1)
        self.pam2 = PyramidAttention(enc_channels["t0"], c1, c2)
        self.rrb2 = ResidualRefinementBlock(c2 + c1, c2)
        self.rrb3 = ResidualRefinementBlock(c2, c3)
        self.mleam = MultiLevelEdgeAttention((c1, c2, c3))
        self.classifier = conv3d(c3 + 3, 1, 1, bias=True)

    def forward(self, feats: EncoderFeatures) -> ForwardOutput:
        d0 = self.rrb0(self.reduce(feats.e4))

        up = upsample(d0, (2, 2, 2))
        d1 = self.rrb1(torch.cat([self.pam1(feats.e1, up), up], dim=1))

        up = upsample(d1, (2, 2, 2))
        d2 = self.rrb2(torch.cat([self.pam2(feats.t0, up), up], dim=1))

        d3 = self.rrb3(upsample(d2, (2, 2, 1)))

        edges, gated, coarse = self.mleam((d1, d2, d3))
        logits = self.classifier(torch.cat([gated[2], *coarse, edges[2]], dim=1))
        return ForwardOutput(prob=torch.sigmoid(logits), edge_preds=tuple(edges))


class SimpleDecoder(nn.Module):
    """Decoder used while pretraining the encoder: three upsample-conv stages."""

    FACTORS = ((2, 2, 2), (2, 2, 2), (2, 2, 1))

    def __init__(self, config: NetworkConfig, in_channels: int) -> None:
        super().__init__()
        w = config.width
        widths = (in_channels, w(32), w(16), w(8))
        self.stages = nn.ModuleList(conv_norm_relu(widths[i], widths[i + 1], 3) for i in range(3))
        self.classifier = conv3d(widths[-1], 1, 1, bias=True)

    def forward(self, e4: torch.Tensor) -> torch.Tensor:
        x = e4
        for factor, stage in zip(self.FACTORS, self.stages):
            x = stage(upsample(x, factor))
        return torch.sigmoid(self.classifier(x))


class SegmentationNetwork(nn.Module):
    """Encoder plus the decoder selected by ``mode``.

    Not safe to mutate from two threads; inference-mode forwards from several
    threads are fine because parameters are only read.
    """

    def __init__(self, config: NetworkConfig | None = None, mode: Mode | str = Mode.FULL) -> None:
        super().__init__()
        self.config = config or NetworkConfig()
        self.mode = Mode(mode)
        self.encoder = DilatedResNetEncoder(self.config)
        if self.mode is Mode.FULL:
            self.decoder = MultiScaleDecoder(self.config, self.encoder.out_channels)
        else:
            self.decoder = SimpleDecoder(self.config, self.encoder.out_channels["e4"])
        init_weights(self, self.config.zero_init_residual)

    def forward(self, x: torch.Tensor) -> ForwardOutput:
        check_input_shape(tuple(x.shape[2:]))
        feats = self.encoder(x)
        if self.mode is Mode.FULL:
            return self.decoder(feats)
        return ForwardOutput(prob=self.decoder(feats.e4))

    def encoder_state(self) -> dict[str, torch.Tensor]:
        return {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}

    def topology(self) -> list[dict[str, Any]]:
        """Layer list (kernels, strides, dilations, channels) that fixes all output shapes."""
        layers: list[dict[str, Any]] = [{"mode": self.mode.value, **self.config.as_dict()}]
        for name, m in self.named_modules():
            if isinstance(m, nn.Conv3d):
                layers.append(
                    {
                        "name": name,
                        "kind": "conv",
                        "in": m.in_channels,
                        "out": m.out_channels,
                        "kernel": list(m.kernel_size),
                        "stride": list(m.stride),
                        "dilation": list(m.dilation),
                        "padding": list(m.padding),
                    }
                )
            elif isinstance(m, nn.MaxPool3d):
                layers.append({"name": name, "kind": "maxpool", "kernel": m.kernel_size, "stride": m.stride})
            elif isinstance(m, AdaptiveNorm3d):
                layers.append({"name": name, "kind": "norm", "channels": m.weight.numel()})
        return layers

    def topology_hash(self, prefix: str = "") -> str:
        """SHA-256 of the topology entries whose names start with ``prefix``."""
        entries = [e for e in self.topology()[1:] if e["name"].startswith(prefix)]
        if not prefix:
            entries.insert(0, self.topology()[0])
        return hashlib.sha256(json.dumps(entries, sort_keys=True).encode("utf-8")).hexdigest()


def build_model(config: NetworkConfig | None = None, mode: Mode | str = Mode.FULL) -> SegmentationNetwork:
    model = SegmentationNetwork(config, mode)
    logger.debug(
        "built %s network: %d parameters", model.mode.value, sum(p.numel() for p in model.parameters())
    )
    return model


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
