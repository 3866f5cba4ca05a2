from pathlib import Path

from ...config import load_run_config
from ...data import load_task_datasets
from ...metrics import evaluate, write_metrics
from ...modeling.checkpoint import build_model, load_checkpoint
from ...runs import make_loader
from ..base import SocialFusionCommand


class Command(SocialFusionCommand):
    help = "Évalue un point de contrôle sur une partition et écrit metrics.json et predictions.jsonl."

    def add_arguments(self, parser):
        parser.add_argument('checkpoint', help="Point de contrôle (.pt)")
        parser.add_argument('config', help="Fichier de configuration JSON")
        parser.add_argument('--split', default='test', choices=['train', 'val', 'test'])
        parser.add_argument('--regime', help="Remplace le régime de la configuration")
        parser.add_argument('--output-dir', help="Par défaut <dossier d'exécution>/eval-<partition>")
        parser.add_argument('--auc-radius', type=float, default=0.0,
                            help="Rayon (en cellules) des positifs de l'AUC autour de chaque annotation")

    def run(self, *args, **options):
        config = load_run_config(options['config'], overrides={'regime': options['regime']})
        checkpoint = Path(options['checkpoint'])
        model = build_model(config.model, seed=config.seed)
        load_checkpoint(model, checkpoint)

        split = options['split']
        datasets = load_task_datasets(config.data, config.regime.task_ids, split)
        metrics, predictions = evaluate(
            model,
            datasets,
            make_loader(config, datasets, model),
            config.train.batch_size,
            auc_radius=options['auc_radius'],
        )
        if options['output_dir']:
            output_dir = Path(options['output_dir'])
        else:
            # checkpoints/<fichier>.pt → dossier d'exécution
            output_dir = checkpoint.resolve().parent.parent / f"eval-{split}"
        path = write_metrics(output_dir, metrics, predictions, split=split, regime=config.regime)
        self.report(f"Métriques écrites : {path}")
