"""Tête de carte de chaleur : projection affine par patch, une convolution transposée, interpolation."""

from dataclasses import dataclass

import torch.nn.functional as F
from torch import nn

from ..exceptions import InvalidStateError


@dataclass(frozen=True)
class HeatmapHeadConfig:
    grid: tuple
    d_l: int
    out_size: tuple = (64, 64)
    kernel_size: int = 4
    stride: int = 2
    padding: int = 1


class HeatmapHead(nn.Module):
    """Produit des scores (avant sigmoïde) de forme (B, H_out, W_out) à partir des états visuels (B, Gh, Gw, d_l)."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.projection = nn.Linear(config.d_l, 1)
        self.upscale = nn.ConvTranspose2d(
            1, 1,
            kernel_size=config.kernel_size,
            stride=config.stride,
            padding=config.padding,
        )

    def forward(self, states):
        gh, gw = self.config.grid
        if states.dim() != 4 or tuple(states.shape[1:3]) != (gh, gw):
            raise InvalidStateError(
                f"États visuels de forme {tuple(states.shape)} ; attendu (B, {gh}, {gw}, d_l)."
            )
        scores = self.projection(states).squeeze(-1).unsqueeze(1)  # (B, 1, Gh, Gw)
        scores = self.upscale(scores)
        scores = F.interpolate(scores, size=tuple(self.config.out_size), mode="bilinear", align_corners=False)
        return scores.squeeze(1)
