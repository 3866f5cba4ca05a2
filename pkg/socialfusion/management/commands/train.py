from pathlib import Path

from ...config import load_run_config
from ...exceptions import InvalidConfigError
from ...models import Sweep
from ...runs import default_run_dir, record_run
from ..base import SocialFusionCommand


class Command(SocialFusionCommand):
    help = "Entraîne un modèle pour un régime puis l'évalue sur la partition de test."

    def add_arguments(self, parser):
        parser.add_argument('config', help="Fichier de configuration JSON")
        parser.add_argument('--regime', help="Remplace le régime de la configuration")
        parser.add_argument('--output-dir', help="Dossier d'exécution")
        parser.add_argument('--seed', type=int, help="Remplace la graine de la configuration")
        parser.add_argument('--sweep', help="Rattache l'exécution à un balayage existant")

    def run(self, *args, **options):
        config = load_run_config(options['config'], overrides={'regime': options['regime'], 'seed': options['seed']})
        if options['output_dir']:
            config = config.with_output_dir(Path(options['output_dir']).resolve())
            run_dir = config.output_dir
        else:
            run_dir = default_run_dir(config)

        sweep = None
        if options['sweep']:
            sweep = Sweep.objects.filter(name=options['sweep']).first()
            if sweep is None:
                raise InvalidConfigError(f"Balayage inconnu : {options['sweep']}")

        run = record_run(config, run_dir, sweep=sweep)
        self.report(f"Exécution {run.regime} terminée : {run_dir}")
