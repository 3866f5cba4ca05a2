"""Accès aux paramètres `SOCIALFUSION` du projet Django, avec valeurs par défaut."""

from pathlib import Path

from django.conf import settings

DEFAULTS = {
    'RUNS_DIR': Path('runs'),
    'CACHE_DIR': None,
    'CHECKPOINT_VERSION': 1,
    'HEATMAP_SIZE': 64,
    'HEATMAP_SIGMA': 3.0,
}


def sf_setting(name):
    """Retourne un paramètre SocialFusion ; les clés inconnues sont une erreur de programmation."""
    if name not in DEFAULTS:
        raise KeyError(name)
    return getattr(settings, 'SOCIALFUSION', {}).get(name, DEFAULTS[name])
