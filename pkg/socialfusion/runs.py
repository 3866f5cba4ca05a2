"""
Orchestration des exécutions : dossier d'exécution, registre (ledger), entraînement
puis évaluation finale, et balayage de synergie reprenable.
"""

import logging
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch
from django.conf import settings

from .analysis import synergy_grid
from .conf import sf_setting
from .data import BatchLoader, load_task_datasets
from .exceptions import SocialFusionError
from .metrics import clean_metrics, evaluate, selection_score, write_metrics
from .modeling.checkpoint import build_model, load_checkpoint
from .models import Run, Sweep
from .regimes import sweep_regimes
from .training import train

logger = logging.getLogger(__name__)


def regime_slug(regime):
    return str(regime).replace(":", "-").replace(",", "-").lower()


def default_run_dir(config):
    base = config.output_dir or Path(sf_setting("RUNS_DIR")) / config.name
    return Path(base) / regime_slug(config.regime)


def make_loader(config, datasets, model):
    return BatchLoader(
        datasets,
        model.handle,
        heatmap_size=config.model.heatmap_size,
        heatmap_sigma=config.model.heatmap_sigma,
        workers=config.data.image_workers,
        dtype=model.dtype,
    )


def prepare(config):
    """Modèle et jeux d'entraînement du régime de la configuration."""
    torch.manual_seed(config.seed)
    model = build_model(config.model, seed=config.seed)
    task_ids = config.regime.task_ids
    train_sets = load_task_datasets(config.data, task_ids, "train")
    return model, train_sets


def train_run(config, run_dir=None):
    """
    Entraîne puis évalue sur la partition de test ; écrit config.json, losses.csv,
    checkpoints/ et metrics.json dans le dossier d'exécution. Retourne les métriques.
    """
    run_dir = Path(run_dir) if run_dir else default_run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(config.snapshot(), encoding="utf-8")

    model, train_sets = prepare(config)
    task_ids = list(train_sets)
    eval_fn = None
    if config.train.eval_split != "none":
        val_sets = load_task_datasets(config.data, task_ids, config.train.eval_split)
        val_loader = make_loader(config, val_sets, model)

        def eval_fn(current):
            metrics, _ = evaluate(current, val_sets, val_loader, config.train.batch_size)
            return selection_score(metrics)

    result = train(
        model,
        train_sets,
        config.train,
        run_dir=run_dir,
        loader=make_loader(config, train_sets, model),
        eval_fn=eval_fn,
    )
    if result.best_checkpoint:
        load_checkpoint(model, result.best_checkpoint)

    test_sets = load_task_datasets(config.data, task_ids, "test")
    metrics, predictions = evaluate(model, test_sets, make_loader(config, test_sets, model), config.train.batch_size)
    write_metrics(run_dir, metrics, predictions, split="test", regime=config.regime)
    return metrics


def record_run(config, run_dir, sweep=None):
    """Exécute `train_run` en tenant le registre à jour."""
    run_dir = Path(run_dir) if run_dir else default_run_dir(config)
    fields = {"kind": config.regime.kind.value, "seed": config.seed, "run_dir": str(run_dir)}
    if sweep is not None:
        run, _ = Run.objects.get_or_create(sweep=sweep, regime=str(config.regime), defaults=fields)
    else:
        run = Run(regime=str(config.regime), **fields)
    run.run_dir = str(run_dir)
    run.mark_running()
    try:
        metrics = train_run(config, run_dir)
    except (SocialFusionError, OSError, RuntimeError, ValueError) as exc:
        run.mark_failed(exc)
        raise
    run.mark_done(clean_metrics(metrics))
    return run


def _child_command(config_path, regime, run_dir, sweep_name):
    manage = Path(settings.BASE_DIR) / "manage.py"
    return [
        sys.executable, str(manage), "train", str(config_path),
        "--regime", str(regime),
        "--output-dir", str(run_dir),
        "--sweep", sweep_name,
    ]


def synergy_sweep(config, config_path, name=None, jobs=1):
    """
    Toutes les exécutions seules, les dix paires et l'exécution jointe ; les exécutions
    déjà terminées dans le registre sont reprises telles quelles. Retourne la grille.
    """
    name = name or config.name
    sweep, created = Sweep.objects.get_or_create(
        name=name, defaults={"config_path": str(config_path), "seed": config.seed}
    )
    if not created:
        logger.info("Reprise du balayage %s", name)
    base = (config.output_dir or Path(sf_setting("RUNS_DIR")) / name)
    regimes = sweep_regimes()
    pending = set(sweep.pending_runs().values_list("regime", flat=True))
    known = set(sweep.runs.values_list("regime", flat=True))
    todo = [regime for regime in regimes if str(regime) in pending or str(regime) not in known]
    for regime in regimes:
        if regime not in todo:
            logger.info("Exécution %s déjà terminée : ignorée.", regime)
    logger.info("Balayage %s : %d exécutions à lancer sur %d", name, len(todo), len(regimes))

    if jobs > 1:
        def launch(regime):
            command = _child_command(config_path, regime, base / regime_slug(regime), name)
            return regime, subprocess.run(command, capture_output=True, text=True).returncode

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for regime, code in pool.map(launch, todo):
                if code != 0:
                    logger.error("Exécution %s terminée avec le code %d", regime, code)
    else:
        for regime in todo:
            try:
                record_run(config.with_regime(regime), base / regime_slug(regime), sweep)
            except (SocialFusionError, OSError, RuntimeError, ValueError) as exc:
                logger.error("Exécution %s échouée : %s", regime, exc)

    results = {}
    for regime in regimes:
        run = Run.objects.filter(sweep=sweep, regime=str(regime)).first()
        results[regime] = run.metrics if run and run.is_done else None
    grid = synergy_grid(results)
    base.mkdir(parents=True, exist_ok=True)
    grid.to_csv(base / "synergy.csv")
    grid.to_json(base / "synergy.json")
    return grid
