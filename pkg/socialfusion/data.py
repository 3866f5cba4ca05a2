"""
Manifestes, jeux de données par tâche et échantillonneur conjoint.

Format de manifeste : une ligne JSON par enregistrement, champs nommés

    {"task": "PISC_RELATION", "image": "pisc/0001.png", "split": "train",
     "bboxes": [[x0, y0, x1, y1], [x0, y0, x1, y1]], "label": "b"}
    {"task": "GAZEFOLLOW", "image": "gaze/0001.png", "split": "test",
     "bboxes": [[x0, y0, x1, y1]], "gaze": [[x, y], ...]}

Les chemins d'images relatifs sont résolus par rapport à la racine donnée (par
défaut le dossier du manifeste). L'existence des images n'est vérifiée qu'au
chargement du lot.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision import transforms

from .exceptions import ImageReadError, InvalidConfigError, InvalidInputError, ManifestError
from .serializers import ManifestRecordSerializer, flatten_errors
from .tasks import Target, TaskId, get_task, synth_heatmap, target_point

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestRecord:
    task_id: TaskId
    image_path: Path
    bboxes: tuple
    target: Target
    split: str
    line: int = 0

    @property
    def spec(self):
        return get_task(self.task_id)


def load_manifest(path, root=None):
    """Lit et valide un manifeste ; toutes les lignes fautives sont rapportées ensemble."""
    path = Path(path)
    root = Path(root) if root else path.parent
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidConfigError(f"Manifeste illisible {path} : {exc}") from None

    records, errors = [], {}
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            document = json.loads(line)
        except json.JSONDecodeError as exc:
            errors[number] = f"JSON invalide ({exc.msg})"
            continue
        serializer = ManifestRecordSerializer(data=document)
        if not serializer.is_valid():
            errors[number] = "; ".join(f"{k}: {v}" for k, v in flatten_errors(serializer.errors).items())
            continue
        data = serializer.validated_data
        spec = data["task"]
        if spec.is_text:
            target = Target(class_label=data["label"])
        else:
            target = Target(gaze_points=tuple(tuple(point) for point in data["gaze"]))
        image = Path(data["image"])
        records.append(ManifestRecord(
            task_id=spec.id,
            image_path=image if image.is_absolute() else root / image,
            bboxes=data["bboxes"],
            target=target,
            split=data["split"],
            line=number,
        ))
    if errors:
        raise ManifestError(path, errors)
    logger.debug("Manifeste %s : %d enregistrements", path, len(records))
    return records


class TaskDataset:
    """Enregistrements d'une tâche pour une partition (train, val ou test)."""

    def __init__(self, task_id, records, split="train"):
        self.spec = get_task(task_id)
        self.split = split
        self.records = [r for r in records if r.task_id == self.spec.id and r.split == split]

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        return self.records[index]

    def __repr__(self):
        return f"TaskDataset({self.spec.id.value}, {self.split}, n={len(self)})"


def load_task_datasets(data_config, task_ids, split="train"):
    """
    Jeux de données des tâches demandées pour une partition.

    GazeFollow n'a pas de partition de validation : à défaut d'enregistrements `val`,
    la partition `test` est utilisée.
    """
    cache, datasets = {}, {}
    for task_id in task_ids:
        manifest = data_config.manifest_for(task_id)
        if manifest not in cache:
            cache[manifest] = load_manifest(manifest, data_config.root)
        dataset = TaskDataset(task_id, cache[manifest], split)
        if split == "val" and not len(dataset) and not dataset.spec.is_text:
            logger.info("Pas de partition val pour %s : évaluation sur test.", task_id)
            dataset = TaskDataset(task_id, cache[manifest], "test")
        datasets[TaskId(task_id)] = dataset
    return datasets


# ---------------------------
# Plan d'époque conjoint
# ---------------------------
class BatchKind(str, Enum):
    TEXT = "TEXT"
    HEATMAP = "HEATMAP"


@dataclass(frozen=True)
class PlannedBatch:
    kind: BatchKind
    items: tuple  # ((TaskId, indice), ...)

    @property
    def task_ids(self):
        return tuple(task for task, _ in self.items)

    def describe(self):
        counts = {}
        for task in self.task_ids:
            counts[task.value] = counts.get(task.value, 0) + 1
        return f"{self.kind.value} " + ", ".join(f"{task}×{n}" for task, n in counts.items())


@dataclass(frozen=True)
class JointEpochPlan:
    epoch: int
    seed: int
    min_size: int
    samples: dict  # TaskId -> indices tirés sans remise
    batches: tuple

    def __len__(self):
        return len(self.batches)

    def __getitem__(self, index):
        return self.batches[index]


def _chunks(items, size):
    return [tuple(items[start:start + size]) for start in range(0, len(items), size)]


def plan_epoch(datasets, batch_size, seed, epoch=0):
    """
    Plan d'une époque : sous-échantillonnage sans remise de chaque tâche à la taille
    minimale, lots texte mélangés entre tâches, lots de carte de chaleur intercalés à
    des positions uniformément aléatoires. Déterministe pour (seed, epoch).
    """
    if not datasets:
        raise InvalidConfigError("Aucune tâche active pour l'époque.")
    if batch_size < 1:
        raise InvalidConfigError("La taille de lot doit être positive.")
    sizes = {TaskId(task): len(dataset) for task, dataset in datasets.items()}
    empty = [task.value for task, size in sizes.items() if size == 0]
    if empty:
        raise InvalidConfigError(f"Jeu d'entraînement vide pour : {', '.join(empty)}.")

    rng = np.random.default_rng([seed, epoch])
    min_size = min(sizes.values())
    samples = {task: tuple(int(i) for i in rng.choice(size, size=min_size, replace=False))
               for task, size in sizes.items()}

    text_pool, heatmap_batches = [], []
    for task, indices in samples.items():
        if get_task(task).is_text:
            text_pool.extend((task, index) for index in indices)
        else:
            order = rng.permutation(len(indices))
            items = [(task, indices[i]) for i in order]
            heatmap_batches.extend(PlannedBatch(BatchKind.HEATMAP, chunk) for chunk in _chunks(items, batch_size))
    order = rng.permutation(len(text_pool))
    text_batches = [
        PlannedBatch(BatchKind.TEXT, chunk)
        for chunk in _chunks([text_pool[i] for i in order], batch_size)
    ]

    total = len(text_batches) + len(heatmap_batches)
    heatmap_slots = set(int(i) for i in rng.choice(total, size=len(heatmap_batches), replace=False))
    text_iter, heatmap_iter = iter(text_batches), iter(heatmap_batches)
    batches = tuple(next(heatmap_iter) if slot in heatmap_slots else next(text_iter) for slot in range(total))
    logger.debug(
        "Époque %d : %d tâches × %d échantillons, %d lots texte, %d lots carte de chaleur",
        epoch, len(sizes), min_size, len(text_batches), len(heatmap_batches),
    )
    return JointEpochPlan(epoch=epoch, seed=seed, min_size=min_size, samples=samples, batches=batches)


def steps_per_epoch(datasets, batch_size):
    """Nombre de lots d'une époque, identique pour toutes les époques."""
    min_size = min(len(dataset) for dataset in datasets.values())
    text_tasks = sum(1 for dataset in datasets.values() if dataset.spec.is_text)
    heatmap_tasks = len(datasets) - text_tasks
    return math.ceil(text_tasks * min_size / batch_size) + heatmap_tasks * math.ceil(min_size / batch_size)


# ---------------------------
# Chargement des lots
# ---------------------------
@dataclass
class Batch:
    kind: BatchKind
    records: list
    images: torch.Tensor
    bbox_sets: list
    heatmaps: torch.Tensor = None
    description: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def specs(self):
        return [record.spec for record in self.records]

    @property
    def task_ids(self):
        return [record.task_id for record in self.records]

    @property
    def prompts(self):
        return [spec.prompt_template for spec in self.specs]

    @property
    def targets(self):
        return [record.target for record in self.records]


class BatchLoader:
    """Charge les images (redimensionnées, normalisées) et synthétise les cibles de carte de chaleur."""

    def __init__(self, datasets, handle, heatmap_size=64, heatmap_sigma=3.0, workers=0, dtype=torch.float32):
        self.datasets = {TaskId(task): dataset for task, dataset in datasets.items()}
        self.handle = handle
        self.heatmap_size = heatmap_size
        self.heatmap_sigma = heatmap_sigma
        self.workers = workers
        self.dtype = dtype
        self.transform = transforms.Compose([
            transforms.Resize(tuple(handle.input_size), interpolation=transforms.InterpolationMode.BILINEAR),
            transforms.ToTensor(),
            transforms.Normalize(mean=handle.mean, std=handle.std),
        ])

    def load_image(self, path):
        try:
            with Image.open(path) as image:
                return self.transform(image.convert("RGB")).to(self.dtype)
        except (OSError, UnidentifiedImageError) as exc:
            raise ImageReadError(path, str(exc)) from None

    def _load_images(self, records):
        paths = [record.image_path for record in records]
        if self.workers > 0 and len(paths) > 1:
            # map conserve l'ordre du plan.
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(self.load_image, paths))
        return [self.load_image(path) for path in paths]

    def collate(self, records, kind=None, description=""):
        if not records:
            raise InvalidInputError("Lot vide.")
        if kind is None:
            kind = BatchKind.TEXT if records[0].spec.is_text else BatchKind.HEATMAP
        heatmaps = None
        if kind is BatchKind.HEATMAP:
            # Les enregistrements à plusieurs annotations sont ciblés sur leur point moyen.
            heatmaps = torch.stack([
                synth_heatmap(
                    [target_point(r.target.gaze_points)],
                    height=self.heatmap_size,
                    width=self.heatmap_size,
                    sigma=self.heatmap_sigma,
                    dtype=self.dtype,
                )
                for r in records
            ])
        return Batch(
            kind=kind,
            records=list(records),
            images=torch.stack(self._load_images(records)),
            bbox_sets=[record.bboxes for record in records],
            heatmaps=heatmaps,
            description=description,
        )

    def fetch_batch(self, plan, index):
        """Lot `index` du plan, prêt pour le modèle."""
        if not 0 <= index < len(plan):
            raise InvalidInputError(f"Indice de lot {index} hors du plan ({len(plan)} lots).")
        planned = plan[index]
        records = [self.datasets[task][i] for task, i in planned.items]
        description = f"époque {plan.epoch}, lot {index} ({planned.describe()})"
        return self.collate(records, planned.kind, description)

    def iter_dataset(self, dataset, batch_size):
        """Parcourt un jeu de données dans l'ordre, par lots (évaluation, gradients de tâche)."""
        for start in range(0, len(dataset), batch_size):
            records = dataset.records[start:start + batch_size]
            yield self.collate(records, description=f"{dataset.spec.id.value} [{start}:{start + len(records)}]")
