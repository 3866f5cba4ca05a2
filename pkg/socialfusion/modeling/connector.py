"""Connecteur visuel-linguistique : MLP à trois couches appliqué patch par patch."""

from dataclasses import dataclass

from torch import nn

from ..exceptions import InvalidConfigError


@dataclass(frozen=True)
class ConnectorConfig:
    d_v: int
    d_l: int
    d_h: int = 4096
    depth: int = 3

    def __post_init__(self):
        if self.depth != 3:
            raise InvalidConfigError(f"Le connecteur a exactement trois couches (reçu {self.depth}).")
        if min(self.d_v, self.d_h, self.d_l) < 1:
            raise InvalidConfigError("Les dimensions du connecteur doivent être positives.")


class Connector(nn.Module):
    """d_v → d_h → d_h → d_l avec ReLU entre les couches ; initialisation par défaut de PyTorch (fan-in)."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.mlp = nn.Sequential(
            nn.Linear(config.d_v, config.d_h),
            nn.ReLU(),
            nn.Linear(config.d_h, config.d_h),
            nn.ReLU(),
            nn.Linear(config.d_h, config.d_l),
        )

    def forward(self, z):
        if z.shape[-1] != self.config.d_v:
            raise InvalidConfigError(
                f"Dimension visuelle {z.shape[-1]} incompatible avec le connecteur (d_v={self.config.d_v})."
            )
        return self.mlp(z)
