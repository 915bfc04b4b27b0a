"""Gradient-mapping network.

A shallow feature from the low-resolution image runs through a few spatial
attention blocks and a small dense block; the input gradient pair rejoins
through a global residual, and a subpixel (pixel-shuffle) stage lifts the
two-channel field to the target resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class DranConfig:
    num_sam_blocks: int = 3
    channels: int = 32
    scale: int = 4
    num_dense_layers: int = 4
    attention_hidden: int = 8
    learning_rate: float = 1e-4
    epochs: int = 30
    batch_size: int = 4
    crop_size: int = 32  # low-resolution pixels
    seed: int = 0


class SpatialAttentionBlock(nn.Module):
    """Channel-pooled attention map that modulates its input feature."""

    def __init__(self, hidden: int):
        super().__init__()
        self.conv1 = nn.Conv2d(2, hidden, 3, padding=1)
        self.act = nn.PReLU()
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat(
            [feat.mean(dim=1, keepdim=True), feat.amax(dim=1, keepdim=True)], dim=1
        )
        weights = torch.sigmoid(self.conv2(self.act(self.conv1(pooled))))
        return feat * weights


class SpatialAttentionModule(nn.Module):
    """Residual pair of convolutions, attention modulation, and a learnable
    scalar skip from the shallow feature."""

    def __init__(self, channels: int, attention_hidden: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.PReLU()
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.attention = SpatialAttentionBlock(attention_hidden)
        self.shallow_gain = nn.Parameter(torch.tensor(1.0))

    def forward(self, feat: torch.Tensor, shallow: torch.Tensor) -> torch.Tensor:
        residual = self.conv2(self.act(self.conv1(feat)))
        modulated = self.attention(residual)
        return modulated + self.shallow_gain * shallow


class ResidualDenseModule(nn.Module):
    """Densely connected convolutions with 1x1 fusion after each concat."""

    def __init__(self, channels: int, layers: int):
        super().__init__()
        self.fusions = nn.ModuleList(
            nn.Conv2d(channels * (i + 1), channels, 1) for i in range(layers)
        )
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=1) for _ in range(layers)
        )
        self.acts = nn.ModuleList(nn.PReLU() for _ in range(layers))

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        feats = [feat]
        out = feat
        for fuse, conv, act in zip(self.fusions, self.convs, self.acts):
            merged = fuse(torch.cat(feats, dim=1))
            out = act(conv(merged))
            feats.append(out)
        return out


class GradientNet(nn.Module):
    """Predicts the high-resolution gradient pair from a low-resolution
    image and its gradient pair."""

    def __init__(self, config: DranConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.shallow = nn.Conv2d(1, c, 3, padding=1)
        self.sams = nn.ModuleList(
            SpatialAttentionModule(c, config.attention_hidden)
            for _ in range(config.num_sam_blocks)
        )
        self.dense = ResidualDenseModule(c, config.num_dense_layers)
        self.to_gradient = nn.Conv2d(c, 2, 3, padding=1)
        s = config.scale
        self.pre_up = nn.Conv2d(2, 2 * s * s, 3, padding=1)
        self.shuffle = nn.PixelShuffle(s)
        self.final = nn.Conv2d(2, 2, 3, padding=1)
        self._init_upsample_passthrough(s)

    def _init_upsample_passthrough(self, s: int) -> None:
        # Start the subpixel stage as nearest-neighbor upsampling and the
        # final convolution as identity, so the gradient residual reaches
        # the output at full scale from the first step.
        with torch.no_grad():
            self.pre_up.weight.zero_()
            self.pre_up.bias.zero_()
            for c in range(2):
                for k in range(s * s):
                    self.pre_up.weight[c * s * s + k, c, 1, 1] = 1.0
            self.final.weight.zero_()
            self.final.bias.zero_()
            for c in range(2):
                self.final.weight[c, c, 1, 1] = 1.0

    def forward(self, image: torch.Tensor, gradients: torch.Tensor) -> torch.Tensor:
        if image.shape[-2] < 8 or image.shape[-1] < 8:
            raise ValueError(f"input too small: {tuple(image.shape)}")
        if gradients.shape[-2:] != image.shape[-2:] or gradients.shape[1] != 2:
            raise ValueError(
                f"gradient tensor {tuple(gradients.shape)} does not match "
                f"image {tuple(image.shape)}"
            )
        # Work at unit scale internally; inputs and outputs stay on the
        # [0, 255] intensity scale of the file formats.
        shallow = self.shallow(image / 255.0)
        feat = shallow
        for sam in self.sams:
            feat = sam(feat, shallow)
        feat = self.dense(feat)
        fused = self.to_gradient(feat) + gradients / 255.0  # global residual
        return 255.0 * self.final(self.shuffle(self.pre_up(fused)))


def gradient_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all output elements."""
    return torch.mean(torch.abs(predicted - target))
