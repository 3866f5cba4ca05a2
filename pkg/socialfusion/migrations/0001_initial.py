# Generated by Django 5.2.6 on 2026-10-19 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Sweep',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(help_text='Nom du balayage (unique)', max_length=100, unique=True, verbose_name='Nom')),
                ('config_path', models.CharField(help_text='Chemin du fichier de configuration JSON', max_length=500, verbose_name='Configuration')),
                ('seed', models.IntegerField(default=0, verbose_name='Graine')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'verbose_name': 'Balayage',
                'verbose_name_plural': 'Balayages',
                'ordering': ['name'],
            },
        ),
        migrations.CreateModel(
            name='Run',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('regime', models.CharField(help_text='single:<tâche>, pair:<t1>,<t2> ou joint', max_length=200, verbose_name='Régime')),
                ('kind', models.CharField(blank=True, choices=[('SINGLE', 'Tâche seule'), ('PAIR', 'Paire de tâches'), ('JOINT', 'Toutes les tâches')], help_text='Déduit du régime', max_length=10, verbose_name='Type')),
                ('seed', models.IntegerField(default=0, verbose_name='Graine')),
                ('run_dir', models.CharField(max_length=500, verbose_name="Dossier d'exécution")),
                ('status', models.CharField(choices=[('PENDING', 'En attente'), ('RUNNING', 'En cours'), ('DONE', 'Terminée'), ('FAILED', 'Échouée')], default='PENDING', max_length=10, verbose_name='Statut')),
                ('metrics', models.JSONField(blank=True, null=True, verbose_name='Métriques')),
                ('error', models.TextField(blank=True, verbose_name='Erreur')),
                ('started_at', models.DateTimeField(blank=True, null=True, verbose_name='Début')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='Fin')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('sweep', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.CASCADE, related_name='runs', to='socialfusion.sweep', verbose_name='Balayage')),
            ],
            options={
                'verbose_name': 'Exécution',
                'verbose_name_plural': 'Exécutions',
                'ordering': ['created_at'],
                'indexes': [models.Index(fields=['status'], name='socialfusio_status_idx')],
                'constraints': [models.UniqueConstraint(fields=('sweep', 'regime'), name='unique_regime_per_sweep')],
            },
        ),
    ]
