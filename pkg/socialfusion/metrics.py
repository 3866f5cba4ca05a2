"""
Métriques d'évaluation, pilote d'évaluation par tâche et rapport de transfert.

- mAP : moyenne non pondérée, sur les classes, de la précision moyenne un-contre-tous
  (précision au rang de chaque positif, sans interpolation).
- Regard : point prédit = argmax de la carte (égalité → plus petit indice ligne par
  ligne), distances L2 min/moyenne aux annotations, AUC pixel par pixel (Mann–Whitney).
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure
from sklearn.metrics import roc_auc_score

from .exceptions import InvalidConfigError, InvalidInputError
from .serializers import MetricsSerializer, flatten_errors
from .tasks import TaskId, predict_label, quantize_point

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    (TaskId.HAGRIDV2, "map"),
    (TaskId.HAGRIDV2, "accuracy"),
    (TaskId.PISC_DOMAIN, "map"),
    (TaskId.PISC_RELATION, "map"),
    (TaskId.LAM, "map"),
    (TaskId.LAM, "accuracy"),
    (TaskId.GAZEFOLLOW, "min_l2"),
    (TaskId.GAZEFOLLOW, "avg_l2"),
    (TaskId.GAZEFOLLOW, "auc"),
    (TaskId.AFFECTNET, "map"),
    (TaskId.AFFECTNET, "accuracy"),
)
HEADLINE_COLUMNS = tuple(column for column in METRIC_COLUMNS if column[1] != "auc")
LOWER_IS_BETTER = frozenset({"min_l2", "avg_l2"})


# ---------------------------
# Classification
# ---------------------------
@dataclass
class ClassificationEval:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.ndim != 2 or self.scores.shape[0] != self.labels.shape[0]:
            raise InvalidInputError(f"Scores {self.scores.shape} et étiquettes {self.labels.shape} incompatibles.")
        if not np.isfinite(self.scores).all():
            raise InvalidInputError("Scores non finis.")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.scores.shape[1]):
            raise InvalidInputError("Étiquette hors de [0, C).")

    @property
    def num_classes(self):
        return self.scores.shape[1]

    def predictions(self):
        return np.array([predict_label(row) for row in self.scores], dtype=np.int64)


def accuracy(evaluation):
    """Part des échantillons dont l'argmax (égalité → plus petit indice) est la vérité terrain."""
    if len(evaluation.labels) == 0:
        raise InvalidInputError("Aucun échantillon à évaluer.")
    return float(np.mean(evaluation.predictions() == evaluation.labels))


def average_precision(scores, positives):
    """Précision moyenne d'un classement : moyenne des précisions au rang de chaque positif."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        raise InvalidInputError("Aucun positif : précision moyenne indéfinie.")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].mean())


def mean_average_precision(evaluation):
    """mAP sur les classes présentes ; une classe sans positif est exclue avec un avertissement."""
    values = []
    for index in range(evaluation.num_classes):
        positives = evaluation.labels == index
        if not positives.any():
            logger.warning("Classe %d sans exemple positif : exclue du mAP.", index)
            continue
        values.append(average_precision(evaluation.scores[:, index], positives))
    if not values:
        return float("nan")
    return float(np.mean(values))


# ---------------------------
# Regard
# ---------------------------
@dataclass
class GazeEval:
    heatmaps: np.ndarray
    annotations: list
    predicted: np.ndarray = field(default=None)

    def __post_init__(self):
        self.heatmaps = np.asarray(self.heatmaps, dtype=np.float64)
        if self.heatmaps.ndim != 3 or len(self.annotations) != self.heatmaps.shape[0]:
            raise InvalidInputError("Une carte (H, W) et une liste d'annotations par échantillon.")
        if self.heatmaps.size and (self.heatmaps.min() < 0 or self.heatmaps.max() > 1):
            raise InvalidInputError("Les cartes de chaleur doivent être dans [0, 1].")
        self.annotations = [np.asarray(points, dtype=np.float64).reshape(-1, 2) for points in self.annotations]
        if any(len(points) == 0 for points in self.annotations):
            raise InvalidInputError("Au moins une annotation par échantillon.")
        if self.predicted is None:
            self.predicted = np.array([heatmap_argmax_point(h) for h in self.heatmaps]).reshape(-1, 2)


def heatmap_argmax_point(heatmap):
    """Point normalisé (x, y) du maximum ; égalité → plus petit indice ligne par ligne."""
    heatmap = np.asarray(heatmap)
    height, width = heatmap.shape
    row, col = divmod(int(np.argmax(heatmap)), width)
    return (col / (width - 1), row / (height - 1))


@dataclass(frozen=True)
class GazeL2:
    per_sample_min: np.ndarray
    per_sample_avg: np.ndarray

    @property
    def min_l2(self):
        return float(np.mean(self.per_sample_min))

    @property
    def avg_l2(self):
        return float(np.mean(self.per_sample_avg))


def gaze_l2(evaluation):
    """Distances euclidiennes (coordonnées normalisées) entre point prédit et annotations."""
    mins, avgs = [], []
    for point, annotations in zip(evaluation.predicted, evaluation.annotations):
        distances = np.linalg.norm(annotations - point, axis=1)
        mins.append(distances.min())
        avgs.append(distances.mean())
    return GazeL2(np.array(mins), np.array(avgs))


def roc_auc(scores, positives):
    """AUC ROC ; les ex æquo comptent pour moitié (statistique de Mann–Whitney)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("AUC indéfinie sans positifs et négatifs.")
    return float(roc_auc_score(positives, scores))


def annotation_mask(annotations, height, width, radius=0.0):
    """Grille binaire : 1 sur le pixel quantifié de chaque annotation (et ses voisins à distance ≤ radius)."""
    mask = np.zeros((height, width), dtype=bool)
    rows, cols = np.mgrid[0:height, 0:width]
    for point in annotations:
        cx, cy = quantize_point(point, height, width)
        if radius > 0:
            mask |= (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2
        else:
            mask[cy, cx] = True
    return mask


def gaze_auc(evaluation, radius=0.0):
    """Moyenne des AUC par échantillon ; les grilles dégénérées sont ignorées avec un avertissement."""
    values = []
    for index, (heatmap, annotations) in enumerate(zip(evaluation.heatmaps, evaluation.annotations)):
        mask = annotation_mask(annotations, *heatmap.shape, radius=radius)
        if mask.all() or not mask.any():
            logger.warning("Échantillon %d : grille de vérité dégénérée, AUC ignorée.", index)
            continue
        values.append(roc_auc(heatmap, mask))
    if not values:
        return float("nan")
    return float(np.mean(values))


# ---------------------------
# Pilote d'évaluation
# ---------------------------
def evaluate(model, datasets, loader, batch_size=32, auc_radius=0.0):
    """
    Évalue `model` sur chaque jeu de `datasets` (TaskId → TaskDataset).

    Retourne (métriques {tâche: {métrique: valeur}}, prédictions par échantillon).
    """
    model.eval()
    metrics, predictions = {}, []
    for task_id, dataset in datasets.items():
        spec = dataset.spec
        if not len(dataset):
            logger.warning("Aucun échantillon %s pour %s : tâche ignorée.", dataset.split, task_id)
            continue
        if spec.is_text:
            scores, labels = [], []
            for batch in loader.iter_dataset(dataset, batch_size):
                scores.append(model.score_text(spec, batch.images, batch.bbox_sets).cpu().numpy())
                labels.extend(spec.label_index(t.class_label) for t in batch.targets)
            evaluation = ClassificationEval(np.concatenate(scores), np.array(labels))
            metrics[spec.id.value] = {
                "map": mean_average_precision(evaluation),
                "accuracy": accuracy(evaluation),
            }
            for record, predicted in zip(dataset.records, evaluation.predictions()):
                predictions.append({
                    "task": spec.id.value,
                    "image": str(record.image_path),
                    "label": record.target.class_label,
                    "predicted": spec.labels[predicted],
                })
        else:
            heatmaps, annotations = [], []
            for batch in loader.iter_dataset(dataset, batch_size):
                heatmaps.append(model.predict_heatmaps(spec, batch.images, batch.bbox_sets).cpu().numpy())
                annotations.extend(t.gaze_points for t in batch.targets)
            evaluation = GazeEval(np.concatenate(heatmaps), annotations)
            distances = gaze_l2(evaluation)
            metrics[spec.id.value] = {
                "min_l2": distances.min_l2,
                "avg_l2": distances.avg_l2,
                "auc": gaze_auc(evaluation, radius=auc_radius),
            }
            for record, point in zip(dataset.records, evaluation.predicted):
                predictions.append({
                    "task": spec.id.value,
                    "image": str(record.image_path),
                    "gaze": [list(p) for p in record.target.gaze_points],
                    "predicted": [float(point[0]), float(point[1])],
                })
        logger.info("%s (%s) : %s", spec.id.value, dataset.split, metrics[spec.id.value])
    return metrics, predictions


def selection_score(metrics):
    """Score scalaire de sélection du meilleur point de contrôle (plus haut = meilleur)."""
    values = []
    for task, task_metrics in metrics.items():
        if "map" in task_metrics and not math.isnan(task_metrics["map"]):
            values.append(task_metrics["map"])
        elif "avg_l2" in task_metrics:
            values.append(1.0 - task_metrics["avg_l2"])
    return float(np.mean(values)) if values else float("-inf")


def clean_metrics(metrics):
    """Remplace les NaN par None (cellule vide) pour la sérialisation JSON."""
    return {
        task: {k: None if v is None or (isinstance(v, float) and math.isnan(v)) else v for k, v in values.items()}
        for task, values in metrics.items()
    }


def validate_metrics(document):
    """Valide un document de métriques ; lève InvalidConfigError avec les chemins fautifs."""
    serializer = MetricsSerializer(data=document)
    if not serializer.is_valid():
        errors = flatten_errors(serializer.errors)
        raise InvalidConfigError(
            "Document de métriques invalide : " + "; ".join(f"{k}: {v}" for k, v in errors.items()), errors
        )
    return serializer.validated_data


def write_metrics(directory, metrics, predictions=(), split="test", regime=None):
    """Écrit `metrics.json` et `predictions.jsonl` dans `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    document = {
        "metrics": clean_metrics(metrics),
        "split": split,
    }
    if regime is not None:
        document["regime"] = str(regime)
    validate_metrics(document)
    path = directory / "metrics.json"
    path.write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
    with open(directory / "predictions.jsonl", "w", encoding="utf-8") as handle:
        for row in predictions:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    logger.info("Métriques écrites : %s", path)
    return path


def read_metrics(path):
    """Lit un `metrics.json` (ou le dossier qui le contient)."""
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.json"
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidConfigError(f"Fichier de métriques introuvable : {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"JSON invalide dans {path} : {exc.msg}") from None
    return validate_metrics(document)


# ---------------------------
# Rapport de transfert
# ---------------------------
@dataclass(frozen=True)
class TransferRow:
    task: TaskId
    metric: str
    single: float = None
    joint: float = None

    @property
    def available(self):
        return self.single is not None and self.joint is not None

    @property
    def delta(self):
        """joint − seul, signe inversé pour les distances L2 : positif = amélioration."""
        if not self.available:
            return None
        raw = self.joint - self.single
        return -raw if self.metric in LOWER_IS_BETTER else raw

    @property
    def headline(self):
        return (self.task, self.metric) in HEADLINE_COLUMNS


@dataclass(frozen=True)
class TransferReport:
    rows: tuple

    @property
    def improved(self):
        return sum(1 for row in self.rows if row.headline and row.delta is not None and row.delta > 0)

    @property
    def total(self):
        return sum(1 for row in self.rows if row.headline)

    @property
    def verdict(self):
        return f"{self.improved}/{self.total}"

    def as_dict(self):
        return {
            "sign_convention": "delta = joint - single ; signe inversé pour min_l2 et avg_l2 (positif = amélioration)",
            "positive_transfer": {"improved": self.improved, "total": self.total},
            "rows": [
                {
                    "task": row.task.value,
                    "metric": row.metric,
                    "single": row.single,
                    "joint": row.joint,
                    "delta": row.delta,
                    "headline": row.headline,
                }
                for row in self.rows
            ],
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=2), encoding="utf-8")
        return Path(path)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["task", "metric", "single", "joint", "delta"])
            for row in self.rows:
                writer.writerow([
                    row.task.value,
                    row.metric,
                    "" if row.single is None else f"{row.single:.6g}",
                    "" if row.joint is None else f"{row.joint:.6g}",
                    "" if row.delta is None else f"{row.delta:.6g}",
                ])
        return Path(path)

    def plot(self, path):
        """Diagramme en barres des deltas (une barre par métrique disponible)."""
        rows = [row for row in self.rows if row.headline and row.delta is not None]
        labels = [f"{row.task.value}\n{row.metric}" for row in rows]
        deltas = [row.delta for row in rows]
        fig = Figure(figsize=(max(6, 0.9 * len(rows)), 4))
        ax = fig.subplots()
        ax.bar(range(len(rows)), deltas, color=["tab:green" if d > 0 else "tab:red" for d in deltas])
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("Δ (joint − seul)")
        ax.set_title(f"Transfert positif : {self.verdict}")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        return Path(path)


def transfer_report(single, joint):
    """
    Compare des métriques seules et jointes, colonne par colonne.

    `single` et `joint` sont des documents {tâche: {métrique: valeur}} ; une colonne
    absente d'un côté a un delta indisponible.
    """
    rows = []
    for task, metric in METRIC_COLUMNS:
        rows.append(TransferRow(
            task=task,
            metric=metric,
            single=single.get(task.value, {}).get(metric),
            joint=joint.get(task.value, {}).get(metric),
        ))
    return TransferReport(tuple(rows))
