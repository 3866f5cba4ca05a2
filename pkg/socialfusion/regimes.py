"""
Régimes d'entraînement : une tâche (SINGLE), deux tâches (PAIR) ou toutes (JOINT).

Les régimes s'écrivent `single:LAM`, `pair:LAM,GAZEFOLLOW` ou `joint` ; un nom de
groupe (PISC) se développe en ses sous-tâches.
"""

from dataclasses import dataclass
from enum import Enum
from itertools import combinations

from .exceptions import InvalidConfigError, RegistryError
from .tasks import TaskId, resolve_tasks, task_groups


class RegimeKind(str, Enum):
    SINGLE = "SINGLE"
    PAIR = "PAIR"
    JOINT = "JOINT"


@dataclass(frozen=True)
class Regime:
    kind: RegimeKind
    groups: tuple

    @property
    def task_ids(self):
        return resolve_tasks(self.groups)

    def __str__(self):
        if self.kind is RegimeKind.JOINT:
            return "joint"
        return f"{self.kind.value.lower()}:{','.join(self.groups)}"


def _valid_names():
    names = list(task_groups())
    names += [task.value for task in TaskId if task.value not in names]
    return ", ".join(names)


def parse_regime(text):
    """Analyse une chaîne de régime ; toute erreur est une erreur de configuration nommant les tâches valides."""
    raw = str(text).strip()
    kind_text, _, rest = raw.partition(":")
    try:
        kind = RegimeKind(kind_text.strip().upper())
    except ValueError:
        raise InvalidConfigError(
            f"Régime inconnu '{raw}' (attendu single:<tâche>, pair:<t1>,<t2> ou joint)."
        ) from None

    if kind is RegimeKind.JOINT:
        if rest.strip():
            raise InvalidConfigError("Le régime joint ne prend pas de tâches.")
        return Regime(kind, tuple(task_groups()))

    names = tuple(name.strip().upper() for name in rest.split(",") if name.strip())
    expected = 1 if kind is RegimeKind.SINGLE else 2
    if len(names) != expected or len(set(names)) != expected:
        raise InvalidConfigError(f"Le régime {kind.value.lower()} attend {expected} tâche(s) distincte(s).")
    try:
        resolve_tasks(names)
    except RegistryError:
        raise InvalidConfigError(
            f"Tâche inconnue dans '{raw}'. Tâches valides : {_valid_names()}."
        ) from None
    return Regime(kind, names)


def sweep_regimes(groups=None):
    """Régimes d'un balayage de synergie : chaque tâche seule, chaque paire, puis l'entraînement joint."""
    groups = tuple(groups or task_groups())
    singles = [Regime(RegimeKind.SINGLE, (group,)) for group in groups]
    pairs = [Regime(RegimeKind.PAIR, pair) for pair in combinations(groups, 2)]
    return singles + pairs + [Regime(RegimeKind.JOINT, groups)]
