"""
Exceptions du domaine SocialFusion.

Les commandes traduisent `InvalidConfigError` en code de sortie 2 et toute
autre `SocialFusionError` en code de sortie 1.
"""


class SocialFusionError(Exception):
    """Erreur racine de la bibliothèque."""


class InvalidInputError(SocialFusionError, ValueError):
    """Entrée de forme ou de domaine invalide."""


class InvalidConfigError(SocialFusionError):
    """Configuration invalide (schéma, dimensions, données absentes) ; `errors` associe chemin et message."""

    def __init__(self, message, errors=None):
        self.errors = dict(errors or {})
        super().__init__(message)


class NumericError(SocialFusionError):
    """Valeurs non finies rencontrées."""


class ContextOverflowError(SocialFusionError):
    """Séquence plus longue que le contexte du modèle de langue."""


class InvalidStateError(SocialFusionError):
    """Opération appelée dans un état qui ne la permet pas."""


class RegistryError(SocialFusionError, LookupError):
    """Tâche inconnue du registre."""


class InvalidTaskError(SocialFusionError):
    """Opération incompatible avec le mode de sortie de la tâche."""


class InvalidTargetError(InvalidInputError):
    """Cible (étiquette ou point de regard) invalide."""


class ManifestError(SocialFusionError):
    """Manifeste mal formé ; `errors` associe chaque numéro de ligne à son message."""

    def __init__(self, path, errors):
        self.path = path
        self.errors = dict(errors)
        details = "; ".join(f"ligne {line}: {message}" for line, message in sorted(self.errors.items()))
        super().__init__(f"Manifeste invalide {path} : {details}")


class ImageReadError(SocialFusionError, OSError):
    """Image illisible."""

    def __init__(self, path, reason=""):
        self.path = path
        super().__init__(f"Impossible de lire l'image {path}" + (f" : {reason}" if reason else ""))


class ComparabilityError(SocialFusionError):
    """Gradients calculés sur des ensembles de paramètres différents."""


class DegenerateGradientError(SocialFusionError):
    """Gradient de norme nulle."""


class TrainingDivergedError(SocialFusionError):
    """Perte non finie pendant l'entraînement."""

    def __init__(self, message, batch=None):
        self.batch = batch
        super().__init__(message)
