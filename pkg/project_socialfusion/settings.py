"""
Paramètres Django du projet project_socialfusion.

Le projet n'expose aucune interface HTTP : Django fournit la configuration,
l'ORM du registre d'exécutions (ledger) et les commandes `manage.py`.
Seuls les chemins et le cache sont pilotés par variables d'environnement ;
tout le reste vient du fichier de configuration JSON de chaque exécution.
"""

import os
from pathlib import Path

# Chemins du projet : BASE_DIR / 'sous-dossier'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Aucune requête HTTP n'est servie ; la clé reste exigée par Django.
SECRET_KEY = os.environ.get(
    'SOCIALFUSION_SECRET_KEY',
    'django-insecure-socialfusion-local-only',
)

DEBUG = False

ALLOWED_HOSTS = []


# Applications

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'socialfusion',
]


# Base de données du registre d'exécutions

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': Path(os.environ.get('SOCIALFUSION_LEDGER_DB', BASE_DIR / 'ledger.sqlite3')),
    }
}


# Journalisation

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'socialfusion': {
            'handlers': ['console'],
            'level': os.environ.get('SOCIALFUSION_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Internationalisation

LANGUAGE_CODE = 'fr-fr'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Paramètres propres à SocialFusion

SOCIALFUSION = {
    'RUNS_DIR': Path(os.environ.get('SOCIALFUSION_RUNS_DIR', BASE_DIR / 'runs')),
    'CACHE_DIR': os.environ.get('SOCIALFUSION_CACHE_DIR') or None,
    'CHECKPOINT_VERSION': 1,
    'HEATMAP_SIZE': 64,
    'HEATMAP_SIGMA': 3.0,
}
