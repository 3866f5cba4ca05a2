from django.core.exceptions import ValidationError
from django.db import models
from django.utils import timezone
from rest_framework import serializers

from .exceptions import InvalidConfigError
from .regimes import parse_regime
from .serializers import MetricsField, flatten_errors


class Sweep(models.Model):
    """
    Représente un balayage de synergie : toutes les exécutions seules, par paires et jointe.
    """
    name = models.CharField(
        max_length=100,
        unique=True,
        verbose_name="Nom",
        help_text="Nom du balayage (unique)"
    )
    config_path = models.CharField(
        max_length=500,
        verbose_name="Configuration",
        help_text="Chemin du fichier de configuration JSON"
    )
    seed = models.IntegerField(default=0, verbose_name="Graine")
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        verbose_name = "Balayage"
        verbose_name_plural = "Balayages"
        ordering = ['name']

    def __str__(self):
        return f"{self.name} (graine {self.seed})"

    def pending_runs(self):
        """Retourne les exécutions du balayage qui ne sont pas terminées."""
        return self.runs.exclude(status=Run.Status.DONE)


class Run(models.Model):
    """
    Représente une exécution d'entraînement et son état dans le registre.
    """

    class Kind(models.TextChoices):
        SINGLE = 'SINGLE', 'Tâche seule'
        PAIR = 'PAIR', 'Paire de tâches'
        JOINT = 'JOINT', 'Toutes les tâches'

    class Status(models.TextChoices):
        PENDING = 'PENDING', 'En attente'
        RUNNING = 'RUNNING', 'En cours'
        DONE = 'DONE', 'Terminée'
        FAILED = 'FAILED', 'Échouée'

    sweep = models.ForeignKey(
        Sweep,
        null=True,
        blank=True,
        on_delete=models.CASCADE,
        related_name='runs',
        verbose_name="Balayage"
    )
    regime = models.CharField(
        max_length=200,
        verbose_name="Régime",
        help_text="single:<tâche>, pair:<t1>,<t2> ou joint"
    )
    kind = models.CharField(
        max_length=10,
        choices=Kind.choices,
        blank=True,
        verbose_name="Type",
        help_text="Déduit du régime"
    )
    seed = models.IntegerField(default=0, verbose_name="Graine")
    run_dir = models.CharField(max_length=500, verbose_name="Dossier d'exécution")
    status = models.CharField(
        max_length=10,
        choices=Status.choices,
        default=Status.PENDING,
        verbose_name="Statut"
    )
    metrics = models.JSONField(null=True, blank=True, verbose_name="Métriques")
    error = models.TextField(blank=True, verbose_name="Erreur")
    started_at = models.DateTimeField(null=True, blank=True, verbose_name="Début")
    finished_at = models.DateTimeField(null=True, blank=True, verbose_name="Fin")
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        verbose_name = "Exécution"
        verbose_name_plural = "Exécutions"
        ordering = ['created_at']
        constraints = [
            # Un régime n'est exécuté qu'une fois par balayage
            models.UniqueConstraint(fields=['sweep', 'regime'], name='unique_regime_per_sweep')
        ]
        indexes = [
            models.Index(fields=['status'], name='socialfusio_status_idx'),
        ]

    def __str__(self):
        return f"{self.regime} ({self.get_status_display()})"

    def clean(self):
        """Vérifie le régime (et le type qui en découle) ainsi que le document de métriques."""
        try:
            regime = parse_regime(self.regime)
        except InvalidConfigError as exc:
            raise ValidationError({'regime': str(exc)})
        self.regime = str(regime)
        if self.kind and self.kind != regime.kind.value:
            raise ValidationError({'kind': f"Le régime {self.regime} est de type {regime.kind.value}."})
        self.kind = regime.kind.value

        if self.metrics is not None:
            try:
                MetricsField().run_validation(self.metrics)
            except serializers.ValidationError as exc:
                details = "; ".join(f"{k}: {v}" for k, v in flatten_errors(exc.detail).items())
                raise ValidationError({'metrics': details})

    def save(self, *args, **kwargs):
        """Valide avant de sauvegarder l'exécution."""
        self.full_clean(validate_unique=False)
        super().save(*args, **kwargs)

    def mark_running(self):
        self.status = self.Status.RUNNING
        self.started_at = timezone.now()
        self.error = ''
        self.save()

    def mark_done(self, metrics):
        """Enregistre les métriques finales et termine l'exécution."""
        self.metrics = metrics
        self.status = self.Status.DONE
        self.finished_at = timezone.now()
        self.save()

    def mark_failed(self, error):
        self.status = self.Status.FAILED
        self.error = str(error)
        self.finished_at = timezone.now()
        self.save()

    @property
    def is_done(self):
        return self.status == self.Status.DONE
