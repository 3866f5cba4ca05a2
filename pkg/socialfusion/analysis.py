"""
Analyses de dégradation : sondes linéaires (décodabilité des caractéristiques figées)
et degré de conflit des gradients (compatibilité des tâches), plus la grille de
synergie par paires.
"""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from transformers import get_cosine_schedule_with_warmup

from .config import ProbeConfig
from .exceptions import ComparabilityError, DegenerateGradientError, InvalidConfigError, InvalidInputError
from .metrics import METRIC_COLUMNS, ClassificationEval, accuracy, mean_average_precision
from .regimes import RegimeKind
from .training import batch_loss_sums

logger = logging.getLogger(__name__)


# ---------------------------
# Sondes linéaires
# ---------------------------
@torch.no_grad()
def extract_features(encoder, loader, dataset, pooling="flatten", batch_size=64):
    """Caractéristiques figées de l'encodeur seul (N, Gh·Gw·d_v) ou moyennées (N, d_v), et étiquettes."""
    spec = dataset.spec
    if not spec.is_text:
        raise InvalidInputError(f"Sonde impossible sur {spec.id} : pas d'étiquettes de classe.")
    features, labels = [], []
    for batch in loader.iter_dataset(dataset, batch_size):
        grid = encoder(batch.images)
        pooled = grid.mean(dim=(1, 2)) if pooling == "mean" else grid.flatten(start_dim=1)
        features.append(pooled.to(torch.float64).cpu())
        labels.extend(spec.label_index(target.class_label) for target in batch.targets)
    return torch.cat(features), torch.tensor(labels, dtype=torch.long)


class LinearProbe(nn.Module):
    """W·x + b sur des caractéristiques standardisées avec les statistiques d'entraînement."""

    def __init__(self, in_features, num_classes, mean=None, std=None):
        super().__init__()
        self.linear = nn.Linear(in_features, num_classes)
        self.register_buffer("mean", torch.zeros(in_features) if mean is None else mean)
        self.register_buffer("std", torch.ones(in_features) if std is None else std)

    def forward(self, features):
        return self.linear((features - self.mean) / self.std)


@dataclass
class ProbeResult:
    probe: LinearProbe
    train_accuracy: float
    val_metrics: dict


def train_probe(train_features, train_labels, val_features, val_labels, num_classes, config=None):
    """
    Entraîne une couche affine par entropie croisée sur des caractéristiques précalculées.

    Même famille d'optimiseur que l'entraînement principal (AdamW, échauffement puis
    décroissance cosinus) sur un budget plus court.
    """
    config = config or ProbeConfig()
    train_features = torch.as_tensor(train_features, dtype=torch.float64)
    val_features = torch.as_tensor(val_features, dtype=torch.float64)
    train_labels = torch.as_tensor(train_labels, dtype=torch.long)
    val_labels = torch.as_tensor(val_labels, dtype=torch.long)
    absent = sorted(set(range(num_classes)) - set(train_labels.tolist()))
    if absent:
        raise InvalidConfigError(f"Classes absentes de l'entraînement de la sonde : {absent}.")

    generator = torch.Generator().manual_seed(config.seed)
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        probe = LinearProbe(
            train_features.shape[1],
            num_classes,
            mean=train_features.mean(dim=0),
            std=train_features.std(dim=0).clamp_min(1e-6) if len(train_features) > 1 else None,
        ).to(torch.float64)
    optimizer = torch.optim.AdamW(probe.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    steps_per_epoch = -(-len(train_features) // config.batch_size)
    total = config.epochs * steps_per_epoch
    scheduler = get_cosine_schedule_with_warmup(optimizer, num_warmup_steps=total // 10, num_training_steps=total)

    probe.train()
    for _ in range(config.epochs):
        order = torch.randperm(len(train_features), generator=generator)
        for start in range(0, len(order), config.batch_size):
            index = order[start:start + config.batch_size]
            optimizer.zero_grad(set_to_none=True)
            loss = F.cross_entropy(probe(train_features[index]), train_labels[index])
            loss.backward()
            optimizer.step()
            scheduler.step()

    probe.eval()
    with torch.no_grad():
        train_eval = ClassificationEval(probe(train_features).numpy(), train_labels.numpy())
        val_eval = ClassificationEval(probe(val_features).numpy(), val_labels.numpy())
    return ProbeResult(
        probe=probe,
        train_accuracy=accuracy(train_eval),
        val_metrics={"map": mean_average_precision(val_eval), "accuracy": accuracy(val_eval)},
    )


def probe_report(encoder, loader, train_sets, val_sets, config=None):
    """Sonde chaque tâche textuelle ; rapport {encodeur, tâches: {tâche: {map, accuracy}}}."""
    config = config or ProbeConfig()
    tasks = {}
    for task_id, train_set in train_sets.items():
        if not train_set.spec.is_text:
            logger.info("Tâche %s ignorée par la sonde (carte de chaleur).", task_id)
            continue
        x_train, y_train = extract_features(encoder, loader, train_set, config.pooling, config.batch_size)
        x_val, y_val = extract_features(encoder, loader, val_sets[task_id], config.pooling, config.batch_size)
        result = train_probe(x_train, y_train, x_val, y_val, train_set.spec.num_classes, config)
        tasks[train_set.spec.id.value] = result.val_metrics
        logger.info("Sonde %s : %s", task_id, result.val_metrics)
    return {"encoder": encoder.handle.name, "pooling": config.pooling, "tasks": tasks}


# ---------------------------
# Gradients de tâche et conflit
# ---------------------------
def parameter_fingerprint(named_parameters):
    """Empreinte de l'ensemble de paramètres (noms et formes, dans l'ordre)."""
    digest = hashlib.sha256()
    for name, parameter in named_parameters:
        digest.update(f"{name}:{tuple(parameter.shape)};".encode("utf-8"))
    return digest.hexdigest()[:16]


@dataclass(frozen=True)
class GradientVector:
    task_id: str
    values: torch.Tensor
    fingerprint: str = None

    def __post_init__(self):
        values = torch.as_tensor(self.values, dtype=torch.float64).flatten()
        if not torch.isfinite(values).all():
            raise InvalidInputError(f"Gradient non fini pour {self.task_id}.")
        object.__setattr__(self, "values", values)

    @property
    def norm(self):
        return float(torch.linalg.vector_norm(self.values))


def task_gradient(model, dataset, loader, batch_size=32):
    """
    Gradient de la perte moyenne sur tout le jeu de la tâche, par rapport aux groupes
    entraînables, accumulé exactement sur des micro-lots (somme des pertes / effectif).
    La perte de carte de chaleur n'est pas pondérée par λ.
    """
    named = model.enforce_freezing().trainable_named_parameters()
    parameters = [parameter for _, parameter in named]
    model.eval()
    model.zero_grad(set_to_none=True)
    count = 0
    for batch in loader.iter_dataset(dataset, batch_size):
        sums = batch_loss_sums(model, batch)
        loss = sum(value for value, _ in sums.values())
        loss.backward()
        count += sum(n for _, n in sums.values())
    if count == 0:
        raise InvalidConfigError(f"Jeu vide pour {dataset.spec.id}.")
    flat = torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).detach().flatten().to(torch.float64)
        for p in parameters
    ]) / count
    model.zero_grad(set_to_none=True)
    return GradientVector(dataset.spec.id.value, flat, parameter_fingerprint(named))


def _as_gradient(value, name):
    if isinstance(value, GradientVector):
        return value
    return GradientVector(name, torch.as_tensor(np.asarray(value, dtype=np.float64)))


def gcd(g_i, g_j):
    """Degré de conflit : 1 − cos(φ_ij), borné à [0, 2]."""
    g_i, g_j = _as_gradient(g_i, "i"), _as_gradient(g_j, "j")
    if g_i.fingerprint != g_j.fingerprint or g_i.values.shape != g_j.values.shape:
        raise ComparabilityError(
            f"Gradients {g_i.task_id} et {g_j.task_id} calculés sur des paramètres différents."
        )
    norm_i, norm_j = g_i.norm, g_j.norm
    if norm_i == 0.0 or norm_j == 0.0:
        raise DegenerateGradientError(
            f"Gradient de norme nulle ({g_i.task_id if norm_i == 0.0 else g_j.task_id})."
        )
    cosine = float(torch.dot(g_i.values, g_j.values)) / (norm_i * norm_j)
    return min(2.0, max(0.0, 1.0 - cosine))


@dataclass(frozen=True)
class ConflictMatrix:
    task_ids: tuple
    gcd_values: np.ndarray
    encoder: str = ""

    @property
    def cosine(self):
        return 1.0 - self.gcd_values

    @property
    def aggregate(self):
        """Moyenne du GCD sur les paires non ordonnées i < j."""
        pairs = [self.gcd_values[i, j] for i, j in combinations(range(len(self.task_ids)), 2)]
        return float(np.mean(pairs)) if pairs else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["task", *self.task_ids])
            for task, row in zip(self.task_ids, self.gcd_values):
                writer.writerow([task, *(f"{value:.6f}" for value in row)])
            writer.writerow([])
            writer.writerow(["encoder", self.encoder])
            writer.writerow(["aggregate_gcd", f"{self.aggregate:.6f}"])
        return Path(path)

    def as_dict(self):
        return {
            "encoder": self.encoder,
            "tasks": list(self.task_ids),
            "gcd": self.gcd_values.tolist(),
            "aggregate_gcd": self.aggregate,
            "cosine": self.cosine.tolist(),
        }


def conflict_matrix(gradients, encoder=""):
    """Matrice symétrique des GCD (diagonale nulle) d'une liste de GradientVector."""
    size = len(gradients)
    values = np.zeros((size, size))
    for i, j in combinations(range(size), 2):
        values[i, j] = values[j, i] = gcd(gradients[i], gradients[j])
    return ConflictMatrix(tuple(g.task_id for g in gradients), values, encoder)


# ---------------------------
# Grille de synergie
# ---------------------------
@dataclass
class SynergyRow:
    label: str
    kind: RegimeKind
    tasks: tuple
    metrics: dict = field(default_factory=dict)

    def cell(self, task, metric):
        if task.value not in self.tasks:
            return None
        return self.metrics.get(task.value, {}).get(metric)


@dataclass
class SynergyGrid:
    """Lignes de paires, puis une ligne « seul » (chaque tâche seule) et une ligne « joint »."""

    rows: list

    @property
    def pair_rows(self):
        return [row for row in self.rows if row.kind is RegimeKind.PAIR]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["regime", *(f"{task.value}:{metric}" for task, metric in METRIC_COLUMNS)])
            for row in self.rows:
                cells = [row.cell(task, metric) for task, metric in METRIC_COLUMNS]
                writer.writerow([row.label, *("" if value is None else f"{value:.6g}" for value in cells)])
        return Path(path)

    def to_json(self, path):
        document = [
            {"regime": row.label, "tasks": list(row.tasks), "metrics": row.metrics}
            for row in self.rows
        ]
        Path(path).write_text(json.dumps(document, indent=2), encoding="utf-8")
        return Path(path)


def synergy_grid(results):
    """
    Construit la grille à partir de {Regime: métriques}.

    Chaque paire n'est renseignée que sur ses deux tâches ; les exécutions seules sont
    fusionnées en une ligne « single ».
    """
    rows, single = [], SynergyRow("single", RegimeKind.SINGLE, ())
    joint = None
    for regime, metrics in results.items():
        tasks = tuple(task.value for task in regime.task_ids)
        if regime.kind is RegimeKind.PAIR:
            rows.append(SynergyRow(" + ".join(regime.groups), RegimeKind.PAIR, tasks, metrics or {}))
        elif regime.kind is RegimeKind.SINGLE:
            single.tasks += tasks
            for task in tasks:
                if metrics and task in metrics:
                    single.metrics[task] = metrics[task]
        else:
            joint = SynergyRow("joint", RegimeKind.JOINT, tasks, metrics or {})
    rows.append(single)
    if joint is not None:
        rows.append(joint)
    return SynergyGrid(rows)
