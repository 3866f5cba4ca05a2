"""
Boîtes englobantes et plongement p_bbox.

Le masque M vaut 1 pour chaque patch dont l'étendue normalisée recouvre une boîte
avec une aire strictement positive ; z devient z + M ⊙ p_bbox après le connecteur.
"""

from dataclasses import dataclass

import torch
from torch import nn

from ..exceptions import InvalidInputError


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        values = (self.x_min, self.y_min, self.x_max, self.y_max)
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise InvalidInputError(f"Boîte hors de [0,1] : {values}.")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidInputError(f"Boîte dégénérée : {values}.")

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def make_bboxes(boxes, arity=None):
    """Construit un BBoxSet (tuple de BBox) et vérifie l'arité attendue."""
    result = tuple(box if isinstance(box, BBox) else BBox(*map(float, box)) for box in boxes)
    if len(result) > 2:
        raise InvalidInputError(f"Au plus deux boîtes par échantillon ({len(result)} reçues).")
    if arity is not None and len(result) != arity:
        raise InvalidInputError(f"{len(result)} boîte(s) reçue(s), {arity} attendue(s).")
    return result


def patch_mask(boxes, grid):
    """Masque booléen (Gh, Gw) des patchs recouvrant au moins une boîte."""
    gh, gw = grid
    mask = torch.zeros(gh, gw, dtype=torch.bool)
    if not boxes:
        return mask
    rows = torch.arange(gh, dtype=torch.float64)
    cols = torch.arange(gw, dtype=torch.float64)
    top, bottom = rows / gh, (rows + 1) / gh
    left, right = cols / gw, (cols + 1) / gw
    for box in boxes:
        overlap_y = bottom.clamp(max=box.y_max) > top.clamp(min=box.y_min)
        overlap_x = right.clamp(max=box.x_max) > left.clamp(min=box.x_min)
        mask |= overlap_y.unsqueeze(1) & overlap_x.unsqueeze(0)
    return mask


class BBoxEmbedding(nn.Module):
    """Vecteur appris p_bbox partagé par toutes les boîtes de toutes les tâches, initialisé à zéro."""

    def __init__(self, d_l):
        super().__init__()
        self.p_bbox = nn.Parameter(torch.zeros(d_l))

    def forward(self, z, masks):
        # Les patchs hors masque sont recopiés tels quels (bit à bit).
        if masks.shape != z.shape[:-1]:
            raise InvalidInputError(f"Masque {tuple(masks.shape)} incompatible avec la grille {tuple(z.shape)}.")
        return torch.where(masks.unsqueeze(-1), z + self.p_bbox, z)
