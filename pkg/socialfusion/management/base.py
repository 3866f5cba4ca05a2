"""Base commune des commandes SocialFusion : codes de sortie et texte d'aide."""

import logging

from django.core.management.base import BaseCommand, CommandError

from ..exceptions import InvalidConfigError, RegistryError, SocialFusionError
from ..tasks import TaskId, resolve_tasks, task_groups

logger = logging.getLogger('socialfusion.commands')

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def tasks_help():
    groups = ", ".join(f"{name} ({'/'.join(t.value for t in ids)})" for name, ids in task_groups().items())
    return (
        f"Tâches : {groups}. Identifiants : {', '.join(t.value for t in TaskId)}. "
        "Régimes : single:<tâche>, pair:<t1>,<t2>, joint."
    )


class SocialFusionCommand(BaseCommand):
    """Traduit InvalidConfigError en code 2 et toute autre erreur d'exécution en code 1."""

    def create_parser(self, prog_name, subcommand, **kwargs):
        self.help = f"{self.help} {tasks_help()}"
        return super().create_parser(prog_name, subcommand, **kwargs)

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except InvalidConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        except (SocialFusionError, OSError, RuntimeError, ValueError) as exc:
            logger.error("Échec de la commande : %s", exc)
            raise CommandError(str(exc), returncode=EXIT_RUNTIME) from exc

    def run(self, *args, **options):
        raise NotImplementedError

    def report(self, message):
        self.stdout.write(self.style.SUCCESS(message))


def parse_tasks(text, default):
    """Liste de tâches ou de groupes séparés par des virgules ; `default` si vide."""
    if not text:
        return tuple(default)
    try:
        return resolve_tasks(name for name in text.split(",") if name.strip())
    except RegistryError as exc:
        raise InvalidConfigError(str(exc)) from exc
