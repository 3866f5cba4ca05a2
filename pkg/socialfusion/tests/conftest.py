import json

import pytest

from socialfusion.config import BackboneConfig, EncoderConfig, ModelConfig, load_run_config
from socialfusion.data import BatchLoader, load_task_datasets
from socialfusion.fixtures import generate_fixtures, toy_config
from socialfusion.modeling.backbone import LoRAConfig
from socialfusion.modeling.checkpoint import build_model


# ---------------------------
# Fixtures helpers / Données factices
# ---------------------------
@pytest.fixture
def model_config():
    # Petit modèle en double précision : encodeur 28px (grille 2x2), carte de sortie 16x16
    return ModelConfig(
        encoder=EncoderConfig(input_size=28, patch_size=14, feature_dim=8),
        backbone=BackboneConfig(d_l=16, layers=1, heads=2),
        connector_hidden=32,
        lora=LoRAConfig(rank=4),
        heatmap_size=16,
        dtype="float64",
    )


@pytest.fixture
def toy_model(model_config):
    return build_model(model_config, seed=0)


@pytest.fixture(scope="session")
def fixture_set(tmp_path_factory):
    # Jeu synthétique partagé : 12 échantillons d'entraînement par tâche, images 28px
    return generate_fixtures(tmp_path_factory.mktemp("fixtures"), seed=0, samples=12, val=6, test=6, image_size=28)


@pytest.fixture
def write_config(fixture_set, tmp_path):
    """Écrit une configuration de test (dérivée de celle des fixtures) et retourne son chemin."""

    def _write(regime="joint", **sections):
        document = toy_config(seed=0, image_size=28, regime=regime)
        document["data"]["manifests"] = {task.value: str(path) for task, path in fixture_set.manifests.items()}
        document["model"].update({"connector_hidden": 32, "heatmap_size": 16, "dtype": "float64"})
        document["model"]["backbone"].update({"d_l": 16, "layers": 1, "heads": 2})
        document["model"]["encoder"]["feature_dim"] = 8
        document["model"]["lora"] = {"rank": 4}
        document["train"] = {"lr": 1e-3, "warmup_steps": 2, "batch_size": 8, "epochs": 1, "eval_split": "none"}
        document["probe"] = {"epochs": 5, "batch_size": 8}
        document["output_dir"] = str(tmp_path / "out")
        for name, values in sections.items():
            if isinstance(values, dict):
                document.setdefault(name, {}).update(values)
            else:
                document[name] = values
        path = tmp_path / "config.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def run_config(write_config):
    return load_run_config(write_config())


@pytest.fixture
def train_sets(run_config):
    return load_task_datasets(run_config.data, run_config.regime.task_ids, "train")


@pytest.fixture
def loader_for(toy_model):
    def _loader(datasets, workers=0):
        return BatchLoader(datasets, toy_model.handle, heatmap_size=16, heatmap_sigma=2.0, workers=workers,
                           dtype=toy_model.dtype)

    return _loader
