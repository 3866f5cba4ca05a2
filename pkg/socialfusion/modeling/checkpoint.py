"""
Construction du modèle à partir de la configuration et points de contrôle.

Un point de contrôle ne contient que les groupes entraînables (connecteur, p_bbox,
deltas LoRA, tête de carte de chaleur) et l'empreinte de configuration qui permet
de vérifier qu'il est rechargé dans un modèle compatible. Le format est versionné :
une version plus ancienne reste lisible, une version plus récente est refusée.
"""

import hashlib
import logging
from pathlib import Path

import torch

from ..conf import sf_setting
from ..exceptions import InvalidConfigError
from ..tasks import load_registry
from .backbone import LanguageBackbone
from .encoders import build_encoder
from .model import TRAINABLE_GROUPS, SocialFusionModel

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "socialfusion-checkpoint"
DTYPES = {"float32": torch.float32, "float64": torch.float64}


def toy_corpus():
    """Textes couverts par le tokenizer jouet : prompts et étiquettes de toutes les tâches."""
    corpus = []
    for spec in load_registry().values():
        corpus.append(spec.prompt_template)
        corpus.extend(spec.labels)
    return corpus


def build_model(model_config, seed=0, cache_dir=None):
    """
    Assemble encodeur, modèle de langue, connecteur, p_bbox et tête de carte de chaleur.

    Toutes les initialisations aléatoires (y compris celle des adaptateurs LoRA) sont
    tirées sous la graine `seed` sans toucher à l'état global du générateur.
    """
    cache_dir = cache_dir or sf_setting("CACHE_DIR")
    backbone_config = model_config.backbone
    if backbone_config.name != "toy" and not backbone_config.path:
        raise InvalidConfigError("model.backbone.path est requis pour un modèle pré-entraîné.")
    size = model_config.heatmap_size
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        encoder = build_encoder(model_config.encoder, cache_dir=cache_dir)
        if backbone_config.name == "toy":
            backbone = LanguageBackbone.toy(
                toy_corpus(),
                d_l=backbone_config.d_l,
                layers=backbone_config.layers,
                heads=backbone_config.heads,
                lora=model_config.lora,
                seed=backbone_config.seed,
                max_context=backbone_config.max_context,
            )
        else:
            backbone = LanguageBackbone.from_pretrained(
                backbone_config.path, lora=model_config.lora, cache_dir=cache_dir
            )
        model = SocialFusionModel(
            encoder,
            backbone,
            connector_hidden=model_config.connector_hidden,
            heatmap_size=(size, size),
        )
    model.to(DTYPES[model_config.dtype])
    return model.enforce_freezing()


def config_fingerprint(model):
    """Empreinte vérifiée au rechargement : encodeur, modèle de langue, d_h, rang LoRA, taille de sortie."""
    return {
        "encoder": model.handle.name,
        "backbone": model.backbone.name,
        "d_h": model.connector.config.d_h,
        "rank": model.backbone.lora.rank,
        "heatmap_size": list(model.heatmap_head.config.out_size),
    }


def trainable_state(model):
    return {
        "connector": {k: v.detach().cpu() for k, v in model.connector.state_dict().items()},
        "bbox_embedding": {k: v.detach().cpu() for k, v in model.bbox_embedding.state_dict().items()},
        "lora": model.backbone.lora_state_dict(),
        "heatmap_head": {k: v.detach().cpu() for k, v in model.heatmap_head.state_dict().items()},
    }


def save_checkpoint(model, path, **extra):
    """Écrit le point de contrôle (écriture atomique via un fichier temporaire)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": sf_setting("CHECKPOINT_VERSION"),
        "fingerprint": config_fingerprint(model),
        "groups": trainable_state(model),
        "extra": extra,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.info("Point de contrôle écrit : %s", path)
    return path


def load_checkpoint(model, path):
    """Recharge les groupes entraînables dans `model` ; retourne les métadonnées `extra`."""
    path = Path(path)
    if not path.exists():
        raise InvalidConfigError(f"Point de contrôle introuvable : {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise InvalidConfigError(f"{path} n'est pas un point de contrôle SocialFusion.")
    version = payload.get("version", 0)
    if version > sf_setting("CHECKPOINT_VERSION"):
        raise InvalidConfigError(f"Version de point de contrôle {version} plus récente que celle supportée.")

    expected = config_fingerprint(model)
    stored = payload.get("fingerprint", {})
    mismatches = {key: (stored.get(key), value) for key, value in expected.items() if stored.get(key) != value}
    if mismatches:
        details = ", ".join(f"{key}: {found} ≠ {wanted}" for key, (found, wanted) in mismatches.items())
        raise InvalidConfigError(f"Point de contrôle incompatible avec le modèle ({details}).")

    groups = payload["groups"]
    missing = [name for name in TRAINABLE_GROUPS if name not in groups]
    if missing:
        raise InvalidConfigError(f"Groupes absents du point de contrôle : {', '.join(missing)}.")
    device = model.device
    model.connector.load_state_dict(groups["connector"])
    model.bbox_embedding.load_state_dict(groups["bbox_embedding"])
    model.backbone.load_lora_state_dict({k: v.to(device) for k, v in groups["lora"].items()})
    model.heatmap_head.load_state_dict(groups["heatmap_head"])
    logger.info("Point de contrôle chargé : %s (version %d)", path, version)
    return payload.get("extra", {})


def parameter_checksums(named_parameters):
    """Somme SHA-256 de chaque paramètre, pour vérifier qu'un groupe n'a pas bougé."""
    checksums = {}
    for name, parameter in named_parameters:
        data = parameter.detach().cpu().contiguous()
        checksums[name] = hashlib.sha256(data.numpy().tobytes()).hexdigest()
    return checksums
