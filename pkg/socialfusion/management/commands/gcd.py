import json
from pathlib import Path

from ...analysis import conflict_matrix, task_gradient
from ...config import load_run_config
from ...data import load_task_datasets
from ...modeling.checkpoint import build_model, load_checkpoint
from ...runs import make_loader
from ..base import SocialFusionCommand, parse_tasks


class Command(SocialFusionCommand):
    help = "Degré de conflit des gradients entre tâches, au point d'initialisation ou d'un point de contrôle."

    def add_arguments(self, parser):
        parser.add_argument('config', help="Fichier de configuration JSON")
        parser.add_argument('--seed', type=int, help="Remplace la graine de la configuration")
        parser.add_argument('--tasks', help="Tâches ou groupes séparés par des virgules (défaut : tâches du régime)")
        parser.add_argument('--checkpoint', help="Point de contrôle dont on charge les groupes entraînables")
        parser.add_argument('--split', default='train', choices=['train', 'val', 'test'])
        parser.add_argument('--output', help="Préfixe des fichiers .csv et .json (défaut : gcd dans le dossier de sortie)")

    def run(self, *args, **options):
        config = load_run_config(options['config'], overrides={'seed': options['seed']})
        task_ids = parse_tasks(options['tasks'], config.regime.task_ids)
        model = build_model(config.model, seed=config.seed)
        if options['checkpoint']:
            load_checkpoint(model, options['checkpoint'])

        datasets = load_task_datasets(config.data, task_ids, options['split'])
        loader = make_loader(config, datasets, model)
        gradients = [
            task_gradient(model, dataset, loader, config.train.batch_size)
            for dataset in datasets.values()
        ]
        matrix = conflict_matrix(gradients, encoder=model.handle.name)

        prefix = Path(options['output']) if options['output'] else Path(config.output_dir or '.') / 'gcd'
        prefix.parent.mkdir(parents=True, exist_ok=True)
        matrix.to_csv(prefix.with_suffix('.csv'))
        prefix.with_suffix('.json').write_text(json.dumps(matrix.as_dict(), indent=2), encoding='utf-8')
        self.stdout.write(f"GCD agrégé ({matrix.encoder}) : {matrix.aggregate:.6f}")
        self.report(f"Matrice écrite : {prefix.with_suffix('.csv')}")
