import csv
import math

import numpy as np
import pytest
import torch

from socialfusion.analysis import (
    GradientVector,
    conflict_matrix,
    extract_features,
    gcd,
    probe_report,
    synergy_grid,
    task_gradient,
    train_probe,
)
from socialfusion.config import ProbeConfig
from socialfusion.data import TaskDataset
from socialfusion.exceptions import ComparabilityError, DegenerateGradientError, InvalidConfigError
from socialfusion.regimes import RegimeKind, sweep_regimes
from socialfusion.tasks import TaskId


# ---------------------------
# TESTS DU DEGRÉ DE CONFLIT
# ---------------------------
@pytest.mark.parametrize("g_i, g_j, expected", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([1.0, 2.0], [-1.0, -2.0], 2.0),
    ([1.0, 0.0], [0.0, 3.0], 1.0),
    ([1.0, 0.0], [1.0, 1.0], 1 - 1 / math.sqrt(2)),
])
def test_gcd_reference_values(g_i, g_j, expected):
    # Vérifie le GCD sur des paires de référence
    assert gcd(g_i, g_j) == pytest.approx(expected, abs=1e-12)


def test_gcd_symmetric_and_scale_invariant():
    # Vérifie symétrie, invariance d'échelle et bornes sur 10 000 paires aléatoires
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        size = int(rng.integers(1, 20))
        a, b = rng.normal(size=size), rng.normal(size=size)
        alpha, beta = rng.uniform(0.01, 100.0, size=2)
        value = gcd(a, b)
        assert 0.0 <= value <= 2.0
        assert gcd(b, a) == pytest.approx(value, abs=1e-12)
        assert gcd(alpha * a, beta * b) == pytest.approx(value, abs=1e-9)


def test_gcd_errors():
    # Vérifie le refus d'un gradient nul et de vecteurs incomparables
    with pytest.raises(DegenerateGradientError):
        gcd([0.0, 0.0], [1.0, 0.0])
    left = GradientVector("LAM", torch.ones(3), fingerprint="aaaa")
    right = GradientVector("AFFECTNET", torch.ones(3), fingerprint="bbbb")
    with pytest.raises(ComparabilityError):
        gcd(left, right)


def test_conflict_matrix_symmetric_with_mean_aggregate(tmp_path):
    # Vérifie la symétrie de la matrice, son agrégat et son export
    vectors = [
        GradientVector("A", torch.tensor([1.0, 0.0])),
        GradientVector("B", torch.tensor([0.0, 1.0])),
        GradientVector("C", torch.tensor([-1.0, 0.0])),
    ]
    matrix = conflict_matrix(vectors, encoder="toy")
    assert np.allclose(matrix.gcd_values, matrix.gcd_values.T)
    assert np.all(np.diag(matrix.gcd_values) == 0.0)
    # Paires (A,B)=1, (A,C)=2, (B,C)=1
    assert matrix.aggregate == pytest.approx(4 / 3)
    assert matrix.cosine[0, 2] == pytest.approx(-1.0)
    matrix.to_csv(tmp_path / "gcd.csv")
    with open(tmp_path / "gcd.csv", newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["task", "A", "B", "C"]
    assert rows[-1] == ["aggregate_gcd", "1.333333"]
    document = matrix.as_dict()
    assert document["encoder"] == "toy"
    assert document["cosine"][0][1] == pytest.approx(0.0)
    assert document["cosine"][1][1] == 1.0


# ---------------------------
# TESTS DES GRADIENTS DE TÂCHE
# ---------------------------
def test_accumulated_gradient_equals_full_batch(toy_model, train_sets, loader_for):
    # Vérifie que l'accumulation par lots redonne le gradient plein
    dataset = train_sets[TaskId.LAM]
    loader = loader_for(train_sets)
    accumulated = task_gradient(toy_model, dataset, loader, batch_size=5)
    full = task_gradient(toy_model, dataset, loader, batch_size=len(dataset))
    assert accumulated.fingerprint == full.fingerprint
    difference = torch.linalg.vector_norm(accumulated.values - full.values) / full.norm
    assert difference <= 1e-10


def test_duplicated_dataset_gives_same_mean_gradient(toy_model, train_sets, loader_for):
    # Vérifie que dupliquer le jeu laisse le gradient moyen inchangé
    dataset = train_sets[TaskId.AFFECTNET]
    doubled = TaskDataset(TaskId.AFFECTNET, dataset.records * 2, "train")
    loader = loader_for(train_sets)
    original = task_gradient(toy_model, dataset, loader, batch_size=8)
    duplicated = task_gradient(toy_model, doubled, loader, batch_size=8)
    assert torch.allclose(original.values, duplicated.values, rtol=1e-9, atol=1e-12)


def test_gradient_covers_trainable_parameters_only(toy_model, train_sets, loader_for):
    # Vérifie que le gradient couvre exactement les paramètres entraînables
    gradient = task_gradient(toy_model, train_sets[TaskId.GAZEFOLLOW], loader_for(train_sets), batch_size=6)
    sizes = [(name, parameter.numel()) for name, parameter in toy_model.trainable_named_parameters()]
    assert gradient.values.numel() == sum(size for _, size in sizes)
    # Le bloc de la tête de carte de chaleur est le dernier du vecteur
    head = sum(size for name, size in sizes if name.startswith("heatmap_head"))
    assert torch.count_nonzero(gradient.values[-head:]) > 0


def test_gcd_between_real_task_gradients(toy_model, train_sets, loader_for):
    # Vérifie le GCD entre deux gradients de tâches réels
    loader = loader_for(train_sets)
    gradients = [task_gradient(toy_model, train_sets[task], loader, batch_size=6)
                 for task in (TaskId.LAM, TaskId.GAZEFOLLOW)]
    matrix = conflict_matrix(gradients)
    assert matrix.task_ids == ("LAM", "GAZEFOLLOW")
    assert 0.0 <= matrix.aggregate <= 2.0
    assert matrix.gcd_values[0, 1] == matrix.gcd_values[1, 0]


# ---------------------------
# TESTS DES SONDES LINÉAIRES
# ---------------------------
def test_probe_separates_linearly_separable_classes():
    # Vérifie qu'une sonde linéaire sépare deux classes linéairement séparables
    rng = np.random.default_rng(0)
    features = rng.normal(size=(200, 6))
    labels = (features[:, 0] + 0.5 * features[:, 1] > 0).astype(int)
    result = train_probe(features[:150], labels[:150], features[150:], labels[150:], 2,
                         ProbeConfig(epochs=200, lr=5e-2, batch_size=50))
    # Marge : les points trop proches de la frontière sont rares avec 50 exemples
    assert result.val_metrics["accuracy"] >= 0.96
    assert result.train_accuracy >= 0.96
    assert set(result.val_metrics) == {"map", "accuracy"}


def _margin_separated(rng, num_classes, per_class, dim=16):
    labels = np.repeat(np.arange(num_classes), per_class)
    centers = np.zeros((num_classes, dim))
    centers[np.arange(num_classes), np.arange(num_classes)] = 6.0
    # Bruit borné : deux classes restent toujours à distance ≥ 6√2 − 2√dim·0.5 > 0 l'une de l'autre
    noise = rng.uniform(-0.5, 0.5, size=(len(labels), dim))
    order = rng.permutation(len(labels))
    return (centers[labels] + noise)[order], labels[order]


@pytest.mark.parametrize("num_classes", [2, 8])
def test_probe_is_exact_on_margin_separated_classes(num_classes):
    # Vérifie qu'une sonde linéaire classe parfaitement des classes séparées par une marge
    rng = np.random.default_rng(num_classes)
    x_train, y_train = _margin_separated(rng, num_classes, per_class=40)
    x_val, y_val = _margin_separated(rng, num_classes, per_class=10)
    result = train_probe(x_train, y_train, x_val, y_val, num_classes,
                         ProbeConfig(epochs=100, lr=5e-2, batch_size=32))
    assert result.train_accuracy == 1.0
    assert result.val_metrics["accuracy"] == 1.0


def test_probe_on_shuffled_labels_is_at_chance():
    # Vérifie qu'avec des étiquettes aléatoires la sonde reste au hasard
    rng = np.random.default_rng(1)
    features = rng.normal(size=(1000, 8))
    labels = rng.integers(0, 2, size=1000)
    result = train_probe(features[:500], labels[:500], features[500:], labels[500:], 2,
                         ProbeConfig(epochs=20, batch_size=64))
    assert abs(result.val_metrics["accuracy"] - 0.5) <= 0.1


def test_probe_requires_every_class_in_train():
    # Vérifie le refus d'une classe absente de l'entraînement
    features = np.zeros((4, 2))
    with pytest.raises(InvalidConfigError):
        train_probe(features, [0, 0, 1, 1], features, [0, 1, 2, 2], 3)


def test_probe_report_keeps_encoder_frozen(toy_model, train_sets, loader_for):
    # Vérifie que le rapport des sondes laisse l'encodeur intact
    encoder = toy_model.encoder
    before = [parameter.clone() for parameter in encoder.parameters()]
    text_sets = {task: train_sets[task] for task in (TaskId.LAM, TaskId.PISC_DOMAIN)}
    x, y = extract_features(encoder, loader_for(train_sets), text_sets[TaskId.LAM], pooling="flatten", batch_size=5)
    assert x.shape == (12, 2 * 2 * 8)
    assert y.tolist().count(0) == 6
    report = probe_report(encoder, loader_for(train_sets), text_sets, text_sets, ProbeConfig(epochs=3, batch_size=4))
    assert set(report["tasks"]) == {"LAM", "PISC_DOMAIN"}
    assert report["encoder"] == "toy"
    assert all(torch.equal(a, b) for a, b in zip(before, encoder.parameters()))


def test_mean_pooled_features_have_encoder_width(toy_model, train_sets, loader_for):
    # Vérifie la largeur des caractéristiques moyennées
    x, _ = extract_features(toy_model.encoder, loader_for(train_sets), train_sets[TaskId.LAM], pooling="mean")
    assert x.shape == (12, 8)


# ---------------------------
# TESTS DE LA GRILLE DE SYNERGIE
# ---------------------------
def _fake_metrics(regime):
    values = {
        "LAM": {"map": 0.8, "accuracy": 0.9},
        "AFFECTNET": {"map": 0.6, "accuracy": 0.5},
        "HAGRIDV2": {"map": 0.99, "accuracy": 0.95},
        "PISC_DOMAIN": {"map": 0.9},
        "PISC_RELATION": {"map": 0.85},
        "GAZEFOLLOW": {"min_l2": 0.07, "avg_l2": 0.13, "auc": 0.93},
    }
    return {task.value: values[task.value] for task in regime.task_ids}


def test_synergy_grid_shape_and_blank_cells(tmp_path):
    # Vérifie la forme de la grille et ses cellules vides
    grid = synergy_grid({regime: _fake_metrics(regime) for regime in sweep_regimes()})
    assert len(grid.pair_rows) == 10
    assert len(grid.rows) == 12
    assert [row.kind for row in grid.rows[-2:]] == [RegimeKind.SINGLE, RegimeKind.JOINT]

    pair = next(row for row in grid.pair_rows if set(row.tasks) == {"PISC_DOMAIN", "PISC_RELATION", "GAZEFOLLOW"})
    assert pair.cell(TaskId.HAGRIDV2, "map") is None
    assert pair.cell(TaskId.LAM, "accuracy") is None
    assert pair.cell(TaskId.GAZEFOLLOW, "min_l2") == 0.07

    grid.to_csv(tmp_path / "synergy.csv")
    with open(tmp_path / "synergy.csv", newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert len(rows) == 13
    assert len(rows[0]) == 12
    blank = next(r for r in rows if r[0] == pair.label)
    assert blank[1] == ""


def test_synergy_grid_tolerates_missing_runs():
    # Vérifie qu'une grille sans résultats reste complète et vide
    results = {regime: None for regime in sweep_regimes()}
    grid = synergy_grid(results)
    assert len(grid.rows) == 12
    assert all(row.cell(TaskId.LAM, "map") is None for row in grid.rows)
