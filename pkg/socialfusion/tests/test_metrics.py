import json
import math

import numpy as np
import pytest

from socialfusion.data import load_task_datasets
from socialfusion.exceptions import InvalidConfigError, InvalidInputError
from socialfusion.metrics import (
    HEADLINE_COLUMNS,
    METRIC_COLUMNS,
    ClassificationEval,
    GazeEval,
    accuracy,
    annotation_mask,
    average_precision,
    evaluate,
    gaze_auc,
    gaze_l2,
    heatmap_argmax_point,
    mean_average_precision,
    read_metrics,
    roc_auc,
    transfer_report,
    write_metrics,
)
from socialfusion.tasks import TaskId

# Lignes SocialFusion du tableau de résultats publié : seul puis joint
PUBLISHED_SINGLE = {
    "HAGRIDV2": {"map": 99.7, "accuracy": 97.8},
    "PISC_DOMAIN": {"map": 91.7},
    "PISC_RELATION": {"map": 88.0},
    "LAM": {"map": 85.0, "accuracy": 94.1},
    "GAZEFOLLOW": {"min_l2": 0.073, "avg_l2": 0.134, "auc": 93.4},
    "AFFECTNET": {"map": 67.1, "accuracy": 52.2},
}
PUBLISHED_JOINT = {
    "HAGRIDV2": {"map": 99.9, "accuracy": 98.9},
    "PISC_DOMAIN": {"map": 94.4},
    "PISC_RELATION": {"map": 90.1},
    "LAM": {"map": 86.1, "accuracy": 94.4},
    "GAZEFOLLOW": {"min_l2": 0.065, "avg_l2": 0.128, "auc": 94.0},
    "AFFECTNET": {"map": 68.0, "accuracy": 52.8},
}


def _brute_force_ap(scores, positives):
    # Précision au rang de chaque positif, classement par score décroissant (ordre stable)
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, precisions = 0, []
    for rank, index in enumerate(order, start=1):
        if positives[index]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def _brute_force_auc(scores, positives):
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


# ---------------------------
# TESTS DES COLONNES
# ---------------------------
def test_columns_two_headline_metrics_per_task():
    # Vérifie les colonnes du tableau et les dix métriques de transfert
    assert len(METRIC_COLUMNS) == 11
    assert len(HEADLINE_COLUMNS) == 10
    assert (TaskId.GAZEFOLLOW, "auc") not in HEADLINE_COLUMNS


# ---------------------------
# TESTS DE CLASSIFICATION
# ---------------------------
def test_accuracy_hand_case_with_tie():
    # Vérifie l'exactitude sur un cas à la main avec égalité
    scores = [[0.9, 0.1], [0.5, 0.5], [0.2, 0.8], [0.7, 0.3]]
    # La deuxième ligne est une égalité : prédiction 0
    assert accuracy(ClassificationEval(scores, [0, 0, 1, 1])) == 0.75


def test_average_precision_hand_case():
    # Vérifie l'AP sur un classement calculé à la main
    assert average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx((1 + 2 / 3) / 2)


def test_mean_average_precision_matches_brute_force():
    # Vérifie le mAP contre une moyenne d'AP par classe
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(40, 4))
    labels = rng.integers(0, 4, size=40)
    expected = np.mean([
        _brute_force_ap(scores[:, c].tolist(), (labels == c).tolist()) for c in range(4) if (labels == c).any()
    ])
    assert mean_average_precision(ClassificationEval(scores, labels)) == pytest.approx(expected, abs=1e-12)


def test_perfect_scores_give_map_one():
    # Vérifie qu'un classement parfait donne un mAP de 1
    labels = np.array([0, 1, 2, 1])
    scores = np.eye(3)[labels]
    evaluation = ClassificationEval(scores, labels)
    assert mean_average_precision(evaluation) == 1.0
    assert accuracy(evaluation) == 1.0


def test_class_without_positives_is_excluded():
    # Vérifie qu'une classe sans positif sort de la moyenne
    scores = [[0.9, 0.1, 0.0], [0.2, 0.7, 0.1]]
    # La classe 2 n'a aucun positif : mAP moyenné sur les classes 0 et 1
    assert mean_average_precision(ClassificationEval(scores, [0, 1])) == 1.0


def test_classification_eval_validates_inputs():
    # Vérifie le refus des étiquettes hors bornes et des scores non finis
    with pytest.raises(InvalidInputError):
        ClassificationEval([[0.1, 0.2]], [2])
    with pytest.raises(InvalidInputError):
        ClassificationEval([[0.1, float("nan")]], [0])
    with pytest.raises(InvalidInputError):
        average_precision([0.1, 0.2], [0, 0])


# ---------------------------
# TESTS DU REGARD
# ---------------------------
def test_gaze_l2_min_and_average():
    # Vérifie les distances L2 minimale et moyenne sur deux annotations
    evaluation = GazeEval(np.zeros((1, 4, 4)), [[(0.5, 0.5), (0.7, 0.7)]], predicted=np.array([[0.5, 0.5]]))
    distances = gaze_l2(evaluation)
    assert distances.min_l2 == 0.0
    assert distances.avg_l2 == pytest.approx(0.141421356, abs=1e-8)


def test_argmax_point_ties_take_first_row_major():
    # Vérifie que l'égalité d'argmax retient le premier pixel en ordre ligne
    heatmap = np.zeros((5, 5))
    heatmap[1, 3] = heatmap[3, 1] = 1.0
    assert heatmap_argmax_point(heatmap) == (0.75, 0.25)


def test_predicted_point_defaults_to_heatmap_argmax():
    # Vérifie que le point prédit par défaut est l'argmax de la carte
    heatmap = np.zeros((1, 3, 3))
    heatmap[0, 2, 0] = 0.9
    evaluation = GazeEval(heatmap, [[(0.0, 1.0)]])
    assert evaluation.predicted.tolist() == [[0.0, 1.0]]
    assert gaze_l2(evaluation).min_l2 == 0.0


def test_roc_auc_matches_pairwise_oracle():
    # Vérifie l'AUC avec ex æquo contre le décompte des paires
    rng = np.random.default_rng(1)
    scores = rng.integers(0, 5, size=30).astype(float)
    positives = rng.random(30) < 0.3
    assert roc_auc(scores, positives) == pytest.approx(_brute_force_auc(scores.tolist(), positives.tolist()))


def _brute_force_accuracy(scores, labels):
    hits = 0
    for row, label in zip(scores, labels):
        best = 0
        for index, value in enumerate(row):
            if value > row[best]:
                best = index
        hits += best == label
    return hits / len(labels)


def _random_classification(rng):
    n = int(rng.integers(1, 51))
    classes = int(rng.integers(2, 6))
    # Scores entiers : beaucoup d'ex æquo
    scores = rng.integers(0, 4, size=(n, classes)).astype(float)
    labels = rng.integers(0, classes, size=n)
    return scores, labels


@pytest.mark.parametrize("seed", range(4))
def test_classification_metrics_match_oracles_on_random_instances(seed):
    # Vérifie mAP et exactitude contre les oracles par boucles sur 250 instances aléatoires par graine
    rng = np.random.default_rng(seed)
    for _ in range(250):
        scores, labels = _random_classification(rng)
        evaluation = ClassificationEval(scores, labels)
        assert accuracy(evaluation) == pytest.approx(_brute_force_accuracy(scores.tolist(), labels.tolist()), abs=1e-12)
        present = [c for c in range(scores.shape[1]) if (labels == c).any()]
        expected = np.mean([_brute_force_ap(scores[:, c].tolist(), (labels == c).tolist()) for c in present])
        assert mean_average_precision(evaluation) == pytest.approx(expected, abs=1e-12)


def test_map_is_invariant_under_monotone_transform():
    # Vérifie que le mAP ne dépend que de l'ordre des scores
    rng = np.random.default_rng(7)
    for _ in range(200):
        scores, labels = _random_classification(rng)
        transformed = np.exp(2.0 * scores) + 3.0
        assert mean_average_precision(ClassificationEval(transformed, labels)) == pytest.approx(
            mean_average_precision(ClassificationEval(scores, labels)), abs=1e-12
        )


@pytest.mark.parametrize("seed", range(4))
def test_roc_auc_matches_pairwise_oracle_on_random_instances(seed):
    # Vérifie l'AUC contre le décompte des paires (ex æquo = 1/2) sur 250 instances par graine
    rng = np.random.default_rng(100 + seed)
    checked = 0
    while checked < 250:
        n = int(rng.integers(2, 51))
        scores = rng.integers(0, 6, size=n).astype(float)
        positives = rng.random(n) < rng.uniform(0.1, 0.9)
        if positives.all() or not positives.any():
            continue
        expected = _brute_force_auc(scores.tolist(), positives.tolist())
        assert roc_auc(scores, positives) == pytest.approx(expected, abs=1e-12)
        checked += 1


def test_roc_auc_requires_both_classes():
    # Vérifie que l'AUC sans négatif est refusée
    with pytest.raises(InvalidInputError):
        roc_auc([0.2, 0.4], [True, True])


def test_gaze_l2_matches_euclidean_oracle_on_random_instances():
    # Vérifie les distances min/moyenne contre un calcul point par point
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        predicted = rng.random((n, 2))
        annotations = [rng.random((int(rng.integers(1, 11)), 2)) for _ in range(n)]
        distances = gaze_l2(GazeEval(np.zeros((n, 2, 2)), annotations, predicted=predicted))
        mins, avgs = [], []
        for (px, py), points in zip(predicted.tolist(), annotations):
            values = [math.hypot(px - x, py - y) for x, y in points.tolist()]
            mins.append(min(values))
            avgs.append(sum(values) / len(values))
        assert distances.min_l2 == pytest.approx(sum(mins) / n, abs=1e-12)
        assert distances.avg_l2 == pytest.approx(sum(avgs) / n, abs=1e-12)


def test_gaze_auc_perfect_and_degenerate():
    # Vérifie l'AUC du regard parfaite puis dégénérée
    heatmap = np.zeros((1, 8, 8))
    heatmap[0, 2, 5] = 1.0
    # (5/7, 2/7) se quantifie sur la colonne 5, ligne 2
    evaluation = GazeEval(heatmap, [[(5 / 7, 2 / 7)]])
    assert gaze_auc(evaluation) == 1.0
    mask = annotation_mask([(5 / 7, 2 / 7)], 8, 8, radius=1.0)
    assert mask.sum() == 5
    # Rayon couvrant toute la grille : aucun négatif, échantillon ignoré
    full = GazeEval(np.full((1, 2, 2), 0.5), [[(0.0, 0.0)]])
    assert math.isnan(gaze_auc(full, radius=5.0))


def test_gaze_eval_rejects_out_of_range_heatmaps():
    # Vérifie le refus d'une carte hors de [0, 1]
    with pytest.raises(InvalidInputError):
        GazeEval(np.full((1, 2, 2), 1.5), [[(0.1, 0.1)]])


# ---------------------------
# TESTS DU PILOTE D'ÉVALUATION ET DES FICHIERS
# ---------------------------
def test_evaluate_reports_table_columns(toy_model, run_config, loader_for):
    # Vérifie les métriques produites par tâche lors de l'évaluation
    datasets = load_task_datasets(run_config.data, [TaskId.LAM, TaskId.GAZEFOLLOW], "test")
    metrics, predictions = evaluate(toy_model, datasets, loader_for(datasets), batch_size=4)
    assert set(metrics["LAM"]) == {"map", "accuracy"}
    assert set(metrics["GAZEFOLLOW"]) == {"min_l2", "avg_l2", "auc"}
    assert 0.0 <= metrics["LAM"]["accuracy"] <= 1.0
    assert 0.0 <= metrics["GAZEFOLLOW"]["min_l2"] <= metrics["GAZEFOLLOW"]["avg_l2"] <= math.sqrt(2)
    assert len(predictions) == 12


def test_metrics_file_round_trip_with_blank_cells(tmp_path):
    # Vérifie que les NaN s'écrivent en cellules vides dans metrics.json
    metrics = {"LAM": {"map": float("nan"), "accuracy": 0.5}}
    path = write_metrics(tmp_path, metrics, [{"task": "LAM", "predicted": "Yes"}], split="val", regime="single:LAM")
    document = json.loads(path.read_text(encoding="utf-8"))
    assert document["metrics"]["LAM"]["map"] is None
    loaded = read_metrics(tmp_path)
    assert loaded["regime"] == "single:LAM"
    assert loaded["metrics"]["LAM"]["accuracy"] == 0.5
    assert (tmp_path / "predictions.jsonl").read_text(encoding="utf-8").count("\n") == 1


def test_metrics_document_schema_is_enforced(tmp_path):
    # Vérifie le refus des métriques et tâches inconnues
    with pytest.raises(InvalidConfigError):
        write_metrics(tmp_path, {"LAM": {"f1": 0.3}})
    (tmp_path / "metrics.json").write_text(json.dumps({"metrics": {"EMOTIONS": {}}}), encoding="utf-8")
    with pytest.raises(InvalidConfigError):
        read_metrics(tmp_path)
    with pytest.raises(InvalidConfigError):
        read_metrics(tmp_path / "absent")


# ---------------------------
# TESTS DU RAPPORT DE TRANSFERT
# ---------------------------
def test_published_results_give_ten_of_ten():
    # Vérifie le verdict 10/10 sur les chiffres publiés
    report = transfer_report(PUBLISHED_SINGLE, PUBLISHED_JOINT)
    assert report.verdict == "10/10"
    rows = {(row.task, row.metric): row for row in report.rows}
    # Distances : signe inversé, un delta positif reste une amélioration
    assert rows[(TaskId.GAZEFOLLOW, "min_l2")].delta == pytest.approx(0.008)
    assert rows[(TaskId.HAGRIDV2, "map")].delta == pytest.approx(0.2)
    assert not rows[(TaskId.GAZEFOLLOW, "auc")].headline


def test_negative_transfer_and_missing_columns():
    # Vérifie un transfert négatif et les colonnes absentes
    joint = {**PUBLISHED_JOINT, "LAM": {"map": 80.0}}
    report = transfer_report(PUBLISHED_SINGLE, joint)
    rows = {(row.task, row.metric): row for row in report.rows}
    assert rows[(TaskId.LAM, "map")].delta == pytest.approx(-5.0)
    assert rows[(TaskId.LAM, "accuracy")].delta is None
    assert report.verdict == "8/10"


def test_transfer_report_files(tmp_path):
    # Vérifie l'écriture du CSV, du JSON et du diagramme de transfert
    report = transfer_report(PUBLISHED_SINGLE, {"LAM": {"map": 86.1}})
    report.to_csv(tmp_path / "transfer.csv")
    report.to_json(tmp_path / "transfer.json")
    report.plot(tmp_path / "transfer.png")
    lines = (tmp_path / "transfer.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "task,metric,single,joint,delta"
    assert len(lines) == 12
    assert "HAGRIDV2,map,99.7,," in lines
    document = json.loads((tmp_path / "transfer.json").read_text(encoding="utf-8"))
    assert document["positive_transfer"] == {"improved": 1, "total": 10}
    assert (tmp_path / "transfer.png").stat().st_size > 0
