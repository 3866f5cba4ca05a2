from pathlib import Path

from ...exceptions import InvalidConfigError
from ...metrics import read_metrics, transfer_report
from ...regimes import RegimeKind, parse_regime
from ..base import SocialFusionCommand


class Command(SocialFusionCommand):
    help = "Rapport de transfert : exécutions seules contre exécution jointe, avec graphique des deltas."

    def add_arguments(self, parser):
        parser.add_argument('runs', nargs='+', help="Dossiers d'exécution ou fichiers metrics.json")
        parser.add_argument('--output-dir', default='.', help="Dossier des fichiers transfer.*")

    def run(self, *args, **options):
        single, joint = {}, None
        for source in options['runs']:
            document = read_metrics(source)
            if 'regime' not in document:
                raise InvalidConfigError(f"{source} : champ 'regime' absent du document de métriques.")
            regime = parse_regime(document['regime'])
            if regime.kind is RegimeKind.SINGLE:
                single.update(document['metrics'])
            elif regime.kind is RegimeKind.JOINT:
                if joint is not None:
                    raise InvalidConfigError("Plusieurs exécutions jointes fournies.")
                joint = document['metrics']
            else:
                self.stderr.write(f"{source} : exécution par paire ignorée.")
        if joint is None:
            raise InvalidConfigError("Aucune exécution jointe parmi les entrées.")
        if not single:
            raise InvalidConfigError("Aucune exécution seule parmi les entrées.")

        report = transfer_report(single, joint)
        output_dir = Path(options['output_dir'])
        output_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(output_dir / 'transfer.csv')
        report.to_json(output_dir / 'transfer.json')
        report.plot(output_dir / 'transfer.png')
        for row in report.rows:
            delta = 'n/d' if row.delta is None else f"{row.delta:+.4f}"
            self.stdout.write(f"{row.task.value}:{row.metric} {delta}")
        self.report(f"Transfert positif : {report.verdict}")
