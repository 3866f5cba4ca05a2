import json
from dataclasses import replace
from pathlib import Path

import torch

from ...analysis import probe_report
from ...config import load_run_config
from ...data import BatchLoader, load_task_datasets
from ...modeling.checkpoint import DTYPES
from ...modeling.encoders import build_encoder
from ...tasks import OutputMode, get_task
from ..base import SocialFusionCommand, parse_tasks


class Command(SocialFusionCommand):
    help = "Sondes linéaires sur les caractéristiques figées de l'encodeur visuel."

    def add_arguments(self, parser):
        parser.add_argument('config', help="Fichier de configuration JSON")
        parser.add_argument('--seed', type=int, help="Remplace la graine de la configuration")
        parser.add_argument('--tasks', help="Tâches ou groupes séparés par des virgules (défaut : tâches textuelles du régime)")
        parser.add_argument('--pooling', choices=['flatten', 'mean'], help="Remplace probe.pooling")
        parser.add_argument('--output', help="Rapport JSON (défaut : probe.json du dossier de sortie)")

    def run(self, *args, **options):
        config = load_run_config(options['config'], overrides={'seed': options['seed']})
        task_ids = [
            task_id for task_id in parse_tasks(options['tasks'], config.regime.task_ids)
            if get_task(task_id).output_mode is OutputMode.TEXT
        ]
        probe_config = config.probe
        if options['pooling']:
            probe_config = replace(probe_config, pooling=options['pooling'])

        torch.manual_seed(config.seed)
        encoder = build_encoder(config.model.encoder).freeze()
        dtype = DTYPES[config.model.dtype]
        encoder = encoder.to(dtype)
        train_sets = load_task_datasets(config.data, task_ids, 'train')
        val_sets = {}
        for task_id, dataset in load_task_datasets(config.data, task_ids, 'val').items():
            val_sets[task_id] = dataset if len(dataset) else load_task_datasets(config.data, [task_id], 'test')[task_id]
        loader = BatchLoader(
            train_sets,
            encoder.handle,
            workers=config.data.image_workers,
            dtype=dtype,
        )
        report = probe_report(encoder, loader, train_sets, val_sets, probe_config)

        output = Path(options['output']) if options['output'] else Path(config.output_dir or '.') / 'probe.json'
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(json.dumps(report, indent=2, sort_keys=True), encoding='utf-8')
        for task, values in report['tasks'].items():
            self.stdout.write(f"{task}: mAP={values['map']:.4f} accuracy={values['accuracy']:.4f}")
        self.report(f"Rapport de sonde écrit : {output}")
