"""
Registre déclaratif des cinq tâches sociales.

Chaque tâche est décrite par un `TaskSpec` chargé depuis `prompts/registry.json`
(prompt, mode de sortie, étiquettes, nombre de boîtes). PISC est une seule tâche
du point de vue des régimes d'entraînement mais deux spécifications
(domaine et relation) du point de vue du modèle.
"""

import json
import logging
import math
import weakref
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from .exceptions import InvalidTargetError, InvalidTaskError, RegistryError

logger = logging.getLogger(__name__)

PROMPTS_DIR = Path(__file__).resolve().parent / "prompts"


class TaskId(str, Enum):
    LAM = "LAM"
    AFFECTNET = "AFFECTNET"
    HAGRIDV2 = "HAGRIDV2"
    PISC_DOMAIN = "PISC_DOMAIN"
    PISC_RELATION = "PISC_RELATION"
    GAZEFOLLOW = "GAZEFOLLOW"

    def __str__(self):
        return self.value


class OutputMode(str, Enum):
    TEXT = "TEXT"
    HEATMAP = "HEATMAP"


@dataclass(frozen=True)
class TaskSpec:
    """Description d'une tâche : prompt, mode de sortie, étiquettes ordonnées et arité des boîtes."""

    id: TaskId
    group: str
    prompt_template: str
    output_mode: OutputMode
    labels: tuple = ()
    bbox_arity: int = 0

    def __post_init__(self):
        if self.bbox_arity not in (0, 1, 2):
            raise RegistryError(f"Arité de boîtes invalide pour {self.id}: {self.bbox_arity}")
        if self.output_mode is OutputMode.HEATMAP and self.labels:
            raise RegistryError(f"La tâche {self.id} produit une carte de chaleur : aucune étiquette attendue.")
        if self.output_mode is OutputMode.TEXT and len(set(self.labels)) != len(self.labels):
            raise RegistryError(f"Étiquettes dupliquées pour {self.id}.")

    @property
    def is_text(self):
        return self.output_mode is OutputMode.TEXT

    @property
    def num_classes(self):
        return len(self.labels)

    def label_index(self, label):
        """Retourne l'indice de l'étiquette dans l'ordre figé du registre."""
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidTargetError(
                f"Étiquette '{label}' inconnue pour {self.id} (valeurs possibles : {', '.join(self.labels)})."
            ) from None


@dataclass(frozen=True)
class Target:
    """Cible d'un échantillon : une étiquette de classe OU une liste de points de regard normalisés."""

    class_label: str = None
    gaze_points: tuple = field(default=None)

    def __post_init__(self):
        if (self.class_label is None) == (self.gaze_points is None):
            raise InvalidTargetError("Une cible contient exactement une étiquette ou des points de regard.")
        if self.gaze_points is not None:
            points = tuple((float(x), float(y)) for x, y in self.gaze_points)
            if not points:
                raise InvalidTargetError("Au moins un point de regard est requis.")
            for x, y in points:
                if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                    raise InvalidTargetError(f"Point de regard hors de [0,1]² : ({x}, {y}).")
            object.__setattr__(self, "gaze_points", points)

    def matches(self, spec):
        return (self.class_label is not None) == spec.is_text


@lru_cache(maxsize=None)
def load_registry(path=None):
    """Charge le registre des tâches (id → TaskSpec) depuis le fichier JSON et les fichiers de prompts."""
    registry_path = Path(path) if path else PROMPTS_DIR / "registry.json"
    with open(registry_path, encoding="utf-8") as handle:
        document = json.load(handle)

    registry = {}
    for entry in document["tasks"]:
        prompt_file = registry_path.parent / entry["prompt"]
        spec = TaskSpec(
            id=TaskId(entry["id"]),
            group=entry["group"],
            prompt_template=prompt_file.read_text(encoding="utf-8").strip(),
            output_mode=OutputMode(entry["output_mode"]),
            labels=tuple(entry["labels"]),
            bbox_arity=int(entry["bbox_arity"]),
        )
        registry[spec.id] = spec
    logger.debug("Registre chargé : %d tâches depuis %s", len(registry), registry_path)
    return registry


def get_task(task_id):
    """Retourne le TaskSpec d'un identifiant (chaîne ou TaskId)."""
    try:
        key = TaskId(str(task_id).upper())
    except ValueError:
        raise RegistryError(
            f"Tâche inconnue '{task_id}'. Tâches valides : {', '.join(t.value for t in TaskId)}."
        ) from None
    return load_registry()[key]


def task_groups():
    """Groupes de tâches (au sens des régimes) → identifiants, dans l'ordre du registre."""
    groups = {}
    for spec in load_registry().values():
        groups.setdefault(spec.group, []).append(spec.id)
    return {name: tuple(ids) for name, ids in groups.items()}


def resolve_tasks(names):
    """Développe des noms de groupes ou d'identifiants (ex. 'PISC') en identifiants de tâches."""
    groups = task_groups()
    resolved = []
    for name in names:
        key = str(name).strip().upper()
        ids = groups[key] if key in groups else (get_task(key).id,)
        for task_id in ids:
            if task_id not in resolved:
                resolved.append(task_id)
    return tuple(resolved)


# ---------------------------
# Prompts et étiquettes
# ---------------------------
_PROMPT_CACHE = weakref.WeakKeyDictionary()


def _tokenizer_cache(tokenizer):
    return _PROMPT_CACHE.setdefault(tokenizer, {})


def render_prompt(spec, tokenizer):
    """Tokenise le prompt de la tâche ; le résultat est mis en cache par tokenizer et par tâche."""
    cache = _tokenizer_cache(tokenizer)
    key = ("prompt", spec.id)
    if key not in cache:
        cache[key] = tuple(tokenizer(spec.prompt_template, add_special_tokens=True)["input_ids"])
    return list(cache[key])


def label_token_ids(spec, tokenizer):
    """Séquences de tokens de chaque étiquette, dans l'ordre de `spec.labels`."""
    if not spec.is_text:
        raise InvalidTaskError(f"La tâche {spec.id} n'a pas d'étiquettes textuelles.")
    cache = _tokenizer_cache(tokenizer)
    key = ("labels", spec.id)
    if key not in cache:
        cache[key] = tuple(
            tuple(tokenizer(label, add_special_tokens=False)["input_ids"]) for label in spec.labels
        )
    return [list(tokens) for tokens in cache[key]]


def score_labels(source, spec, label_tokens):
    """
    Score de chaque étiquette, ordonné comme `spec.labels`.

    `source` est soit un vecteur de logits du prochain token (toutes les étiquettes
    doivent alors tenir en un token : le score est le logit de ce token), soit un
    callable renvoyant la log-vraisemblance d'une séquence de tokens (forçage par
    l'enseignant) pour les étiquettes de plusieurs tokens.
    """
    if not spec.is_text:
        raise InvalidTaskError(f"La tâche {spec.id} produit une carte de chaleur, pas une étiquette.")
    if len(label_tokens) != spec.num_classes:
        raise InvalidTaskError(f"{len(label_tokens)} séquences reçues pour {spec.num_classes} étiquettes.")

    if callable(source):
        return torch.tensor([float(source(list(tokens))) for tokens in label_tokens], dtype=torch.float64)

    logits = torch.as_tensor(source)
    if logits.dim() != 1:
        raise InvalidTaskError("Un vecteur de logits 1-D est attendu.")
    if any(len(tokens) != 1 for tokens in label_tokens):
        raise InvalidTaskError(
            f"La tâche {spec.id} a des étiquettes de plusieurs tokens : un évaluateur de séquence est requis."
        )
    return torch.stack([logits[tokens[0]] for tokens in label_tokens]).to(torch.float64)


def predict_label(scores):
    """Indice de l'étiquette prédite ; en cas d'égalité, l'indice le plus bas."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


# ---------------------------
# Cibles de carte de chaleur
# ---------------------------
def round_half_away(value):
    """Arrondi au plus proche, les demi-entiers s'éloignant de zéro."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def quantize_point(point, height, width):
    """Pixel (colonne, ligne) correspondant à un point normalisé."""
    x, y = point
    return round_half_away(x * (width - 1)), round_half_away(y * (height - 1))


def target_point(points):
    """Point cible d'une carte : l'annotation unique, ou la moyenne des annotations d'un enregistrement d'évaluation."""
    points = [tuple(map(float, point)) for point in points]
    if not points:
        raise InvalidTargetError("Aucun point de regard.")
    count = len(points)
    return (sum(x for x, _ in points) / count, sum(y for _, y in points) / count)


def synth_heatmap(points, height=64, width=64, sigma=3.0, dtype=torch.float32):
    """
    Carte cible : gaussienne non normalisée de pic 1 centrée sur le pixel quantifié du point de regard.

    Un seul point est accepté (cibles d'entraînement) ; sigma est exprimé en pixels de la grille de sortie.
    """
    points = list(points)
    if len(points) != 1:
        raise InvalidTargetError(f"Exactement un point de regard est attendu, {len(points)} reçus.")
    if not sigma > 0:
        raise InvalidTargetError(f"Sigma doit être strictement positif (reçu {sigma}).")
    x, y = points[0]
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise InvalidTargetError(f"Point de regard hors de [0,1]² : ({x}, {y}).")

    cx, cy = quantize_point((x, y), height, width)
    rows = torch.arange(height, dtype=torch.float64).unsqueeze(1)
    cols = torch.arange(width, dtype=torch.float64).unsqueeze(0)
    heatmap = torch.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma ** 2))
    return heatmap.to(dtype)
