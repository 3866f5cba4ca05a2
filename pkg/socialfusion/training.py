"""
Pertes et boucle d'entraînement.

L = L_llm + λ·L_heatmap : entropie croisée sur les tokens cibles des lots texte,
entropie croisée binaire pixel à pixel sur les lots de carte de chaleur. Seuls les
groupes entraînables (connecteur, p_bbox, LoRA, tête) sont passés à l'optimiseur.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from transformers import get_cosine_schedule_with_warmup

from .config import TrainConfig
from .data import BatchKind, BatchLoader, plan_epoch, steps_per_epoch
from .exceptions import InvalidInputError, InvalidTargetError, NumericError, TrainingDivergedError
from .modeling.checkpoint import save_checkpoint
from .modeling.model import SequenceBatch
from .tasks import label_token_ids

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "step", "kind", "lr", "l_llm", "l_heatmap", "lambda", "total")


# ---------------------------
# Pertes
# ---------------------------
def loss_text(logits, target_tokens, reduction="mean"):
    """Entropie croisée sur les seules positions cibles (prompt et image déjà exclus)."""
    if target_tokens.numel() == 0:
        raise InvalidTargetError("Aucun token cible.")
    if logits.shape[0] != target_tokens.shape[0]:
        raise InvalidInputError(f"{logits.shape[0]} positions de logits pour {target_tokens.shape[0]} cibles.")
    return F.cross_entropy(logits, target_tokens.to(logits.device), reduction=reduction)


def loss_heatmap(scores, target, reduction="mean"):
    """Moyenne pixel à pixel de BCE(sigmoïde(score), cible)."""
    if scores.shape != target.shape:
        raise InvalidInputError(f"Carte prédite {tuple(scores.shape)} et cible {tuple(target.shape)} incompatibles.")
    return F.binary_cross_entropy_with_logits(scores, target.to(scores), reduction=reduction)


@dataclass
class LossReport:
    l_llm: float
    l_heatmap: float
    lam: float
    per_task: dict = field(default_factory=dict)
    kind: str = ""
    step: int = 0
    epoch: int = 0
    lr: float = 0.0

    @property
    def total(self):
        return self.l_llm + self.lam * self.l_heatmap

    def as_row(self):
        return {
            "epoch": self.epoch,
            "step": self.step,
            "kind": self.kind,
            "lr": f"{self.lr:.10g}",
            "l_llm": f"{self.l_llm:.10g}",
            "l_heatmap": f"{self.l_heatmap:.10g}",
            "lambda": f"{self.lam:.10g}",
            "total": f"{self.total:.10g}",
        }


def text_targets(model, batch):
    """Prompts et séquences de tokens cibles (l'étiquette de chaque échantillon)."""
    prompts, targets = [], []
    for record in batch.records:
        spec = record.spec
        prompts.append(model.prompt_tokens(spec))
        labels = label_token_ids(spec, model.tokenizer)
        targets.append(labels[spec.label_index(record.target.class_label)])
    return prompts, targets


def batch_loss_sums(model, batch):
    """
    Sommes de pertes d'un lot et nombre de termes, par tâche.

    Retourne {TaskId: (somme, effectif)} ; la moyenne d'un ensemble de lots est la
    somme des sommes divisée par la somme des effectifs, ce qui rend l'accumulation
    de gradients exacte.
    """
    z = model.visual_tokens(batch.images, batch.bbox_sets)
    sums = {}
    if batch.kind is BatchKind.TEXT:
        prompts, targets = text_targets(model, batch)
        logits, tokens = model.target_logits(prompts, z, targets)
        per_token = loss_text(logits, tokens, reduction="none")
        start = 0
        for record, target in zip(batch.records, targets):
            chunk = per_token[start:start + len(target)]
            start += len(target)
            total, count = sums.get(record.task_id, (0.0, 0))
            sums[record.task_id] = (total + chunk.sum(), count + len(target))
        return sums

    if batch.heatmaps is None:
        raise InvalidTargetError("Lot de carte de chaleur sans cibles synthétisées.")
    sequences = [model.assemble_sequence(model.prompt_tokens(r.spec), grid) for r, grid in zip(batch.records, z)]
    scores = model.forward_heatmap(SequenceBatch.collate(sequences))
    per_pixel = loss_heatmap(scores, batch.heatmaps, reduction="none")
    pixels = per_pixel[0].numel()
    for record, sample in zip(batch.records, per_pixel):
        total, count = sums.get(record.task_id, (0.0, 0))
        sums[record.task_id] = (total + sample.sum(), count + pixels)
    return sums


def batch_loss(model, batch, lam):
    """Perte totale d'un lot (tenseur) et son LossReport."""
    sums = batch_loss_sums(model, batch)
    total_sum = sum(value for value, _ in sums.values())
    count = sum(n for _, n in sums.values())
    mean = total_sum / count
    per_task = {task.value: float(value / n) for task, (value, n) in sums.items()}
    if batch.kind is BatchKind.TEXT:
        report = LossReport(l_llm=float(mean), l_heatmap=0.0, lam=lam, per_task=per_task, kind="TEXT")
        return mean, report
    report = LossReport(l_llm=0.0, l_heatmap=float(mean), lam=lam, per_task=per_task, kind="HEATMAP")
    return lam * mean, report


# ---------------------------
# Boucle d'entraînement
# ---------------------------
@dataclass
class TrainResult:
    run_dir: Path
    reports: list
    checkpoints: list
    best_checkpoint: Path = None
    best_score: float = None

    @property
    def last_checkpoint(self):
        return self.checkpoints[-1] if self.checkpoints else None


class Trainer:
    """Entraîne un modèle sur un régime (une, deux ou toutes les tâches)."""

    def __init__(self, model, datasets, config=None, run_dir=None, loader=None, eval_fn=None):
        self.model = model.enforce_freezing()
        self.datasets = datasets
        self.config = config or TrainConfig()
        self.run_dir = Path(run_dir) if run_dir else None
        self.loader = loader or BatchLoader(datasets, model.handle, dtype=model.dtype)
        self.eval_fn = eval_fn
        num_text = sum(1 for dataset in datasets.values() if dataset.spec.is_text)
        self.lam = self.config.resolved_lambda(num_text)

        self.parameters = [parameter for _, parameter in model.trainable_named_parameters()]
        self.optimizer = torch.optim.AdamW(
            self.parameters, lr=self.config.lr, weight_decay=self.config.weight_decay
        )
        self.total_steps = self.config.epochs * steps_per_epoch(datasets, self.config.batch_size)
        self.scheduler = get_cosine_schedule_with_warmup(
            self.optimizer,
            num_warmup_steps=self.config.warmup_steps,
            num_training_steps=self.total_steps,
        )
        self.step = 0

    def train_step(self, batch, epoch):
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        try:
            loss, report = batch_loss(self.model, batch, self.lam)
        except NumericError as exc:
            logger.error("Valeurs non finies au %s", batch.description)
            raise TrainingDivergedError(f"{exc} ({batch.description})", batch.description) from exc
        report.step, report.epoch = self.step, epoch
        report.lr = self.scheduler.get_last_lr()[0]
        if not math.isfinite(report.total):
            logger.error("Perte non finie au %s", batch.description)
            raise TrainingDivergedError(f"Perte non finie ({report.total}) au {batch.description}.", batch.description)
        loss.backward()
        if self.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.parameters, self.config.grad_clip)
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1
        return report

    def fit(self):
        torch.manual_seed(self.config.seed)
        reports, checkpoints = [], []
        best_score, best_path = None, None
        writer_file = None
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            writer_file = open(self.run_dir / "losses.csv", "w", newline="", encoding="utf-8")
            writer = csv.DictWriter(writer_file, fieldnames=LOSS_COLUMNS)
            writer.writeheader()
        try:
            for epoch in range(self.config.epochs):
                plan = plan_epoch(self.datasets, self.config.batch_size, self.config.seed, epoch)
                logger.info("Époque %d : %d lots (%d échantillons par tâche)", epoch, len(plan), plan.min_size)
                epoch_reports = []
                for index in range(len(plan)):
                    report = self.train_step(self.loader.fetch_batch(plan, index), epoch)
                    epoch_reports.append(report)
                    if writer_file:
                        writer.writerow(report.as_row())
                    if report.step % self.config.log_every == 0:
                        logger.debug("Pas %d (%s) : perte %.6f", report.step, report.kind, report.total)
                reports.extend(epoch_reports)
                mean_loss = sum(r.total for r in epoch_reports) / len(epoch_reports)
                logger.info("Époque %d terminée : perte moyenne %.6f", epoch, mean_loss)

                if self.run_dir:
                    checkpoints.append(save_checkpoint(
                        self.model, self.run_dir / "checkpoints" / f"epoch-{epoch:03d}.pt", epoch=epoch
                    ))
                if self.eval_fn is not None:
                    score = self.eval_fn(self.model)
                    if best_score is None or score > best_score:
                        best_score = score
                        if self.run_dir:
                            best_path = save_checkpoint(
                                self.model, self.run_dir / "checkpoints" / "best.pt", epoch=epoch, score=score
                            )
        finally:
            if writer_file:
                writer_file.close()
        return TrainResult(
            run_dir=self.run_dir,
            reports=reports,
            checkpoints=checkpoints,
            best_checkpoint=best_path,
            best_score=best_score,
        )


def train(model, datasets, config=None, run_dir=None, loader=None, eval_fn=None):
    """Entraîne `model` sur les jeux `datasets` (TaskId → TaskDataset) ; voir `Trainer`."""
    return Trainer(model, datasets, config, run_dir=run_dir, loader=loader, eval_fn=eval_fn).fit()
