"""
Jeu de données synthétique pour les exécutions à l'échelle bureau.

Chaque tâche est remplacée par des images de formes colorées dont la classe se lit
dans la couleur et la forme (donc séparables à partir des caractéristiques de
l'encodeur jouet). PISC partage ses images entre relation et domaine, le domaine
découlant de la relation. Les enregistrements GazeFollow de test portent dix
annotations légèrement bruitées autour du point visé.
"""

import colorsys
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .exceptions import InvalidConfigError
from .tasks import TaskId, get_task

logger = logging.getLogger(__name__)

# amis, famille, couple → intime ; professionnel, commercial → non intime ; aucune → aucune
RELATION_TO_DOMAIN = {"a": "a", "b": "a", "c": "a", "d": "b", "e": "b", "f": "c"}
GAZE_ANNOTATIONS = 10
GAZE_JITTER = 0.02

MANIFESTS = {
    TaskId.LAM: "lam.jsonl",
    TaskId.AFFECTNET: "affectnet.jsonl",
    TaskId.HAGRIDV2: "hagridv2.jsonl",
    TaskId.PISC_DOMAIN: "pisc.jsonl",
    TaskId.PISC_RELATION: "pisc.jsonl",
    TaskId.GAZEFOLLOW: "gazefollow.jsonl",
}


@dataclass(frozen=True)
class FixtureSet:
    root: Path
    manifests: dict
    config: Path


def class_color(index, num_classes, offset=0.0):
    hue = (offset + index / num_classes) % 1.0
    value = 0.55 + 0.45 * ((index // 3) % 2)
    r, g, b = colorsys.hsv_to_rgb(hue, 0.9, value)
    return int(r * 255), int(g * 255), int(b * 255)


class FixtureWriter:
    """Écrit images et manifestes d'un dossier de fixtures, de façon déterministe pour une graine."""

    def __init__(self, root, seed=0, image_size=56):
        self.root = Path(root)
        self.rng = np.random.default_rng(seed)
        self.image_size = image_size

    def _canvas(self, color):
        size = self.image_size
        base = np.empty((size, size, 3), dtype=np.int16)
        base[:] = color
        noise = self.rng.integers(-8, 9, size=base.shape)
        return Image.fromarray(np.clip(base + noise, 0, 255).astype(np.uint8))

    def _save(self, image, task, split, index):
        relative = Path("images") / task.lower() / f"{split}-{index:04d}.png"
        path = self.root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        image.save(path)
        return relative.as_posix()

    def _shape(self, draw, kind, box, fill):
        if kind == 0:
            draw.ellipse(box, fill=fill)
        elif kind == 1:
            draw.rectangle(box, fill=fill)
        else:
            x0, y0, x1, y1 = box
            draw.polygon([((x0 + x1) / 2, y0), (x1, y1), (x0, y1)], fill=fill)

    def classification_image(self, task, class_index, num_classes, offset):
        image = self._canvas(class_color(class_index, num_classes, offset))
        draw = ImageDraw.Draw(image)
        size = self.image_size
        margin = int(self.rng.integers(size // 8, size // 4))
        contrast = (255, 255, 255) if class_index % 2 else (20, 20, 20)
        self._shape(draw, class_index % 3, (margin, margin, size - margin, size - margin), contrast)
        return image

    def pisc_image(self, relation_index):
        size = self.image_size
        image = self._canvas((90, 90, 90))
        draw = ImageDraw.Draw(image)
        color = class_color(relation_index, 6, offset=0.3)
        boxes = []
        for left in (True, False):
            width = int(self.rng.integers(size // 5, size // 3))
            height = int(self.rng.integers(size // 3, size // 2))
            x0 = int(self.rng.integers(0, size // 2 - width)) if left else int(self.rng.integers(size // 2, size - width))
            y0 = int(self.rng.integers(0, size - height))
            draw.rectangle((x0, y0, x0 + width - 1, y0 + height - 1), fill=color)
            boxes.append([x0 / size, y0 / size, (x0 + width) / size, (y0 + height) / size])
        return image, boxes

    def gaze_image(self):
        size = self.image_size
        image = self._canvas((30, 30, 40))
        draw = ImageDraw.Draw(image)
        head = int(size * 0.2)
        hx = int(self.rng.integers(0, size - head))
        hy = int(self.rng.integers(0, size - head))
        draw.ellipse((hx, hy, hx + head - 1, hy + head - 1), fill=(200, 170, 140))
        gx, gy = (float(v) for v in self.rng.uniform(0.05, 0.95, size=2))
        radius = max(2, size // 14)
        cx, cy = gx * (size - 1), gy * (size - 1)
        draw.ellipse((cx - radius, cy - radius, cx + radius, cy + radius), fill=(255, 240, 0))
        bbox = [hx / size, hy / size, (hx + head) / size, (hy + head) / size]
        return image, bbox, (gx, gy)

    def write(self, samples=200, val=40, test=40, hagrid_classes=None):
        self.root.mkdir(parents=True, exist_ok=True)
        splits = {"train": samples, "val": val, "test": test}
        lines = {name: [] for name in set(MANIFESTS.values())}

        offsets = {TaskId.LAM: 0.0, TaskId.AFFECTNET: 0.1, TaskId.HAGRIDV2: 0.2}
        for task_id, offset in offsets.items():
            spec = get_task(task_id)
            labels = spec.labels[:hagrid_classes] if task_id is TaskId.HAGRIDV2 and hagrid_classes else spec.labels
            for split, count in splits.items():
                for index in range(count):
                    class_index = index % len(labels)
                    image = self.classification_image(task_id.value, class_index, len(labels), offset)
                    lines[MANIFESTS[task_id]].append({
                        "task": task_id.value,
                        "image": self._save(image, task_id.value, split, index),
                        "split": split,
                        "label": labels[class_index],
                    })

        relations = get_task(TaskId.PISC_RELATION).labels
        for split, count in splits.items():
            for index in range(count):
                relation = relations[index % len(relations)]
                image, boxes = self.pisc_image(relations.index(relation))
                relative = self._save(image, "pisc", split, index)
                for task_id, label in ((TaskId.PISC_RELATION, relation), (TaskId.PISC_DOMAIN, RELATION_TO_DOMAIN[relation])):
                    lines["pisc.jsonl"].append({
                        "task": task_id.value, "image": relative, "split": split, "bboxes": boxes, "label": label,
                    })

        # GazeFollow n'a pas de partition de validation.
        for split in ("train", "test"):
            for index in range(splits[split]):
                image, bbox, point = self.gaze_image()
                if split == "train":
                    gaze = [list(point)]
                else:
                    jitter = self.rng.normal(0.0, GAZE_JITTER, size=(GAZE_ANNOTATIONS, 2))
                    gaze = np.clip(np.asarray(point) + jitter, 0.0, 1.0).tolist()
                lines["gazefollow.jsonl"].append({
                    "task": TaskId.GAZEFOLLOW.value,
                    "image": self._save(image, "gazefollow", split, index),
                    "split": split,
                    "bboxes": [bbox],
                    "gaze": gaze,
                })

        for name, records in lines.items():
            with open(self.root / name, "w", encoding="utf-8") as handle:
                for record in records:
                    handle.write(json.dumps(record) + "\n")
        return {task_id: self.root / name for task_id, name in MANIFESTS.items()}


def toy_config(seed=0, image_size=56, regime="joint"):
    """Configuration prête à l'emploi pour les fixtures (encodeur et modèle de langue jouets)."""
    return {
        "name": "fixtures",
        "seed": seed,
        "regime": regime,
        "model": {
            "encoder": {"name": "toy", "input_size": image_size, "patch_size": 14, "feature_dim": 16, "seed": seed},
            "backbone": {"name": "toy", "d_l": 32, "layers": 2, "heads": 4, "seed": seed},
            "connector_hidden": 64,
            "lora": {"rank": 8},
            "heatmap_size": 64,
        },
        "data": {"manifests": {task_id.value: name for task_id, name in MANIFESTS.items()}},
        "train": {"lr": 1e-3, "warmup_steps": 10, "batch_size": 16, "epochs": 20},
    }


def generate_fixtures(out_dir, seed=0, samples=200, val=40, test=40, image_size=56, hagrid_classes=None):
    """Écrit images, manifestes et `config.json` dans `out_dir`."""
    if image_size % 14:
        raise InvalidConfigError("La taille d'image des fixtures doit être un multiple de 14.")
    if hagrid_classes is not None and not 2 <= hagrid_classes <= get_task(TaskId.HAGRIDV2).num_classes:
        raise InvalidConfigError("Nombre de classes HaGRIDv2 hors de [2, 33].")
    writer = FixtureWriter(out_dir, seed=seed, image_size=image_size)
    manifests = writer.write(samples=samples, val=val, test=test, hagrid_classes=hagrid_classes)
    config = writer.root / "config.json"
    config.write_text(json.dumps(toy_config(seed, image_size), indent=2), encoding="utf-8")
    logger.info("Fixtures écrites dans %s (%d échantillons d'entraînement par tâche)", writer.root, samples)
    return FixtureSet(root=writer.root, manifests=manifests, config=config)
