from ...fixtures import generate_fixtures
from ..base import SocialFusionCommand


class Command(SocialFusionCommand):
    help = "Génère un jeu de données synthétique (images, manifestes, config.json) pour toutes les tâches."

    def add_arguments(self, parser):
        parser.add_argument('out_dir', help="Dossier de sortie")
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--samples', type=int, default=200, help="Échantillons d'entraînement par tâche")
        parser.add_argument('--val', type=int, default=40)
        parser.add_argument('--test', type=int, default=40)
        parser.add_argument('--image-size', type=int, default=56)
        parser.add_argument('--hagrid-classes', type=int, help="Réduit HaGRIDv2 aux N premiers gestes")

    def run(self, *args, **options):
        fixtures = generate_fixtures(
            options['out_dir'],
            seed=options['seed'],
            samples=options['samples'],
            val=options['val'],
            test=options['test'],
            image_size=options['image_size'],
            hagrid_classes=options['hagrid_classes'],
        )
        self.report(f"Fixtures écrites : {fixtures.root} (configuration {fixtures.config})")
