"""
Encodeurs visuels figés.

Un encodeur transforme une image (B, 3, H_in, W_in) en grille de caractéristiques
(B, Gh, Gw, d_v). Les encodeurs sont enregistrés par nom pour pouvoir être
échangés dans le modèle sans toucher au reste de l'architecture.
"""

import logging
from dataclasses import dataclass

import torch
from torch import nn
from transformers import AutoImageProcessor, AutoModel, CLIPVisionModel

from ..exceptions import InvalidConfigError, InvalidInputError, NumericError

logger = logging.getLogger(__name__)

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass(frozen=True)
class VisualEncoderHandle:
    """Géométrie d'un encodeur : taille d'entrée, taille de patch, grille et dimension des caractéristiques."""

    name: str
    input_size: tuple
    patch_size: int
    feature_dim: int
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.5, 0.5, 0.5)
    frozen: bool = True

    def __post_init__(self):
        height, width = self.input_size
        if height % self.patch_size or width % self.patch_size:
            raise InvalidConfigError(
                f"L'entrée {height}x{width} n'est pas divisible par la taille de patch {self.patch_size}."
            )
        if not self.frozen:
            raise InvalidConfigError("L'encodeur visuel reste figé.")

    @property
    def grid(self):
        height, width = self.input_size
        return height // self.patch_size, width // self.patch_size

    @property
    def num_patches(self):
        gh, gw = self.grid
        return gh * gw


def check_finite(tensor, what):
    if not torch.isfinite(tensor).all():
        raise NumericError(f"Valeurs non finies dans {what}.")
    return tensor


class VisualEncoder(nn.Module):
    """Base des encodeurs : gèle les paramètres et vérifie les formes."""

    handle: VisualEncoderHandle

    def freeze(self):
        for parameter in self.parameters():
            parameter.requires_grad_(False)
        return self.eval()

    def train(self, mode=True):
        # L'encodeur reste en mode évaluation, même quand le modèle entier s'entraîne.
        return super().train(False)

    def features(self, images):
        raise NotImplementedError

    def forward(self, images):
        expected = (3, *self.handle.input_size)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise InvalidInputError(
                f"Images de forme {tuple(images.shape)} ; attendu (B, {expected[0]}, {expected[1]}, {expected[2]})."
            )
        with torch.no_grad():
            grid = self.features(images)
        gh, gw = self.handle.grid
        if tuple(grid.shape[1:]) != (gh, gw, self.handle.feature_dim):
            raise InvalidInputError(f"Grille de forme inattendue {tuple(grid.shape)}.")
        return check_finite(grid, f"la sortie de l'encodeur {self.handle.name}")


class ToyPatchEncoder(VisualEncoder):
    """Encodeur jouet : projection convolutive par patch, initialisée aléatoirement avec une graine fixe."""

    def __init__(self, input_size=(28, 28), patch_size=14, feature_dim=16, seed=0):
        super().__init__()
        self.handle = VisualEncoderHandle(
            name="toy",
            input_size=tuple(input_size),
            patch_size=patch_size,
            feature_dim=feature_dim,
        )
        generator = torch.Generator().manual_seed(seed)
        self.patchify = nn.Conv2d(3, feature_dim, kernel_size=patch_size, stride=patch_size)
        with torch.no_grad():
            fan_in = 3 * patch_size * patch_size
            bound = 1.0 / fan_in ** 0.5
            self.patchify.weight.copy_(
                (torch.rand(self.patchify.weight.shape, generator=generator) * 2 - 1) * bound * 4
            )
            self.patchify.bias.copy_((torch.rand(feature_dim, generator=generator) * 2 - 1) * bound)
        self.freeze()

    def features(self, images):
        # (B, d_v, Gh, Gw) -> (B, Gh, Gw, d_v)
        return torch.tanh(self.patchify(images)).permute(0, 2, 3, 1).contiguous()


class CLIPPatchEncoder(VisualEncoder):
    """Encodeur CLIP pré-entraîné (ex. ViT-L/14-336) ; le token CLS est retiré de la grille."""

    def __init__(self, path, cache_dir=None, name="clip"):
        super().__init__()
        self.model = CLIPVisionModel.from_pretrained(path, cache_dir=cache_dir)
        config = self.model.config
        self.handle = VisualEncoderHandle(
            name=name,
            input_size=(config.image_size, config.image_size),
            patch_size=config.patch_size,
            feature_dim=config.hidden_size,
            mean=CLIP_MEAN,
            std=CLIP_STD,
        )
        logger.info("Encodeur CLIP chargé depuis %s (grille %s)", path, self.handle.grid)
        self.freeze()

    def features(self, images):
        hidden = self.model(pixel_values=images).last_hidden_state[:, 1:, :]
        gh, gw = self.handle.grid
        return hidden.reshape(hidden.shape[0], gh, gw, hidden.shape[-1])


class AutoPatchEncoder(VisualEncoder):
    """
    Encodeur ViT générique chargé par `AutoModel` (SigLIP, DINOv2, ViT...).

    Pour un modèle double (image et texte), seule la tour visuelle est gardée. Les
    tokens en tête de séquence (CLS, registres) sont retirés : la grille est faite
    des Gh·Gw derniers états.
    """

    def __init__(self, path, cache_dir=None, name="auto"):
        super().__init__()
        model = AutoModel.from_pretrained(path, cache_dir=cache_dir)
        self.model = getattr(model, "vision_model", model)
        config = getattr(model.config, "vision_config", model.config)
        size = config.image_size
        input_size = tuple(size) if isinstance(size, (list, tuple)) else (size, size)
        try:
            processor = AutoImageProcessor.from_pretrained(path, cache_dir=cache_dir)
            mean, std = tuple(processor.image_mean), tuple(processor.image_std)
        except (OSError, ValueError):
            logger.warning("Pas de préprocesseur d'image dans %s : normalisation par défaut.", path)
            mean, std = (0.5, 0.5, 0.5), (0.5, 0.5, 0.5)
        self.handle = VisualEncoderHandle(
            name=name,
            input_size=input_size,
            patch_size=config.patch_size,
            feature_dim=config.hidden_size,
            mean=mean,
            std=std,
        )
        logger.info("Encodeur %s chargé depuis %s (grille %s)", type(self.model).__name__, path, self.handle.grid)
        self.freeze()

    def features(self, images):
        gh, gw = self.handle.grid
        hidden = self.model(pixel_values=images).last_hidden_state[:, -gh * gw:, :]
        return hidden.reshape(hidden.shape[0], gh, gw, hidden.shape[-1])


ENCODERS = {
    "toy": ToyPatchEncoder,
    "clip": CLIPPatchEncoder,
    "auto": AutoPatchEncoder,
}


def build_encoder(config, cache_dir=None):
    """Construit l'encodeur décrit par la section `model.encoder` de la configuration."""
    if config.name not in ENCODERS:
        raise InvalidConfigError(f"Encodeur inconnu '{config.name}' ({', '.join(ENCODERS)}).")
    if config.name == "toy":
        return ToyPatchEncoder(
            input_size=(config.input_size, config.input_size),
            patch_size=config.patch_size,
            feature_dim=config.feature_dim,
            seed=config.seed,
        )
    if not config.path:
        raise InvalidConfigError("model.encoder.path est requis pour un encodeur pré-entraîné.")
    return ENCODERS[config.name](config.path, cache_dir=cache_dir, name=config.label or config.name)


def encode_image(image, encoder):
    """Encode une image (H_in, W_in, 3) en grille (Gh, Gw, d_v)."""
    if image.dim() != 3 or image.shape[-1] != 3:
        raise InvalidInputError(f"Image de forme {tuple(image.shape)} ; attendu (H, W, 3).")
    return encoder(image.permute(2, 0, 1).unsqueeze(0))[0]
