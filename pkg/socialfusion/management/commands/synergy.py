from pathlib import Path

from ...config import load_run_config
from ...runs import synergy_sweep
from ..base import SocialFusionCommand


class Command(SocialFusionCommand):
    help = "Balayage de synergie : chaque tâche seule, chaque paire de tâches et l'exécution jointe."

    def add_arguments(self, parser):
        parser.add_argument('config', help="Fichier de configuration JSON")
        parser.add_argument('--jobs', type=int, default=1, help="Exécutions en parallèle (sous-processus)")
        parser.add_argument('--name', help="Nom du balayage dans le registre (défaut : nom de la configuration)")

    def run(self, *args, **options):
        config = load_run_config(options['config'])
        grid = synergy_sweep(config, Path(options['config']).resolve(), name=options['name'], jobs=max(1, options['jobs']))
        missing = [row.label for row in grid.rows if not row.metrics]
        if missing:
            self.stderr.write(f"Lignes sans résultat : {', '.join(missing)}")
        self.report(f"Grille de synergie : {len(grid.pair_rows)} paires")
