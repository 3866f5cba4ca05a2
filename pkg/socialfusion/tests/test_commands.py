import json
from io import StringIO

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from socialfusion import runs
from socialfusion.fixtures import generate_fixtures
from socialfusion.models import Run
from socialfusion.regimes import sweep_regimes

from .test_metrics import PUBLISHED_JOINT, PUBLISHED_SINGLE

pytestmark = pytest.mark.django_db

GROUP_TASKS = {
    "HAGRIDV2": ("HAGRIDV2",),
    "PISC": ("PISC_DOMAIN", "PISC_RELATION"),
    "LAM": ("LAM",),
    "GAZEFOLLOW": ("GAZEFOLLOW",),
    "AFFECTNET": ("AFFECTNET",),
}


# ---------------------------
# Fixtures helpers / Données factices
# ---------------------------
def run_command(name, *args, **options):
    """Exécute une commande et retourne (code de sortie, stdout)."""
    stdout, stderr = StringIO(), StringIO()
    try:
        call_command(name, *args, stdout=stdout, stderr=stderr, **options)
    except CommandError as exc:
        return exc.returncode, str(exc)
    return 0, stdout.getvalue()


@pytest.fixture
def published_runs(tmp_path):
    """Un metrics.json par exécution seule (un par groupe) et un pour l'exécution jointe."""
    paths = []
    for group, tasks in GROUP_TASKS.items():
        directory = tmp_path / f"single-{group.lower()}"
        directory.mkdir()
        document = {
            "metrics": {task: PUBLISHED_SINGLE[task] for task in tasks},
            "split": "test",
            "regime": f"single:{group}",
        }
        (directory / "metrics.json").write_text(json.dumps(document), encoding="utf-8")
        paths.append(str(directory))
    joint = tmp_path / "joint"
    joint.mkdir()
    (joint / "metrics.json").write_text(
        json.dumps({"metrics": PUBLISHED_JOINT, "split": "test", "regime": "joint"}), encoding="utf-8"
    )
    paths.append(str(joint))
    return paths


# ---------------------------
# TESTS DES CODES DE SORTIE
# ---------------------------
def test_unknown_config_key_exits_with_config_code(write_config):
    # Vérifie le code 2 et le chemin pour une clé inconnue
    path = write_config(train={"learning_rate": 0.1})
    code, message = run_command("train", str(path))
    assert code == 2
    assert "train.learning_rate" in message


def test_invalid_regime_exits_with_config_code(write_config):
    # Vérifie le code 2 pour un régime invalide sans créer d'exécution
    code, message = run_command("train", str(write_config()), regime="single:FOO")
    assert code == 2
    assert "Tâches valides" in message
    assert Run.objects.count() == 0


def test_invalid_task_list_exits_with_config_code(write_config):
    # Vérifie le code 2 pour une liste de tâches invalide
    code, _ = run_command("gcd", str(write_config()), tasks="LAM,FOO")
    assert code == 2


def test_missing_image_exits_with_runtime_code(write_config, tmp_path):
    # Vérifie le code 1 et le nom du fichier pour une image absente
    manifest = tmp_path / "broken.jsonl"
    manifest.write_text(
        json.dumps({"task": "LAM", "image": "absente.png", "split": "train", "label": "Yes"}) + "\n",
        encoding="utf-8",
    )
    path = write_config(regime="single:LAM", data={"manifests": {"LAM": str(manifest)}})
    code, message = run_command("gcd", str(path), tasks="LAM")
    assert code == 1
    assert "absente.png" in message


def test_missing_checkpoint_exits_with_config_code(write_config, tmp_path):
    # Vérifie le code 2 pour un point de contrôle absent
    code, _ = run_command("evaluate", str(tmp_path / "absent.pt"), str(write_config()))
    assert code == 2


# ---------------------------
# TESTS DES COMMANDES
# ---------------------------
def test_fixtures_command(tmp_path):
    # Vérifie la génération des fixtures et le nombre de gestes
    code, output = run_command("fixtures", str(tmp_path / "fx"), samples=4, val=2, test=2,
                               image_size=28, hagrid_classes=3)
    assert code == 0
    config = json.loads((tmp_path / "fx" / "config.json").read_text(encoding="utf-8"))
    assert config["model"]["encoder"]["input_size"] == 28
    labels = {
        json.loads(line)["label"]
        for line in (tmp_path / "fx" / "hagridv2.jsonl").read_text(encoding="utf-8").splitlines()
    }
    assert len(labels) == 3


def test_fixtures_command_rejects_bad_image_size(tmp_path):
    # Vérifie le refus d'une taille d'image non multiple du patch
    code, _ = run_command("fixtures", str(tmp_path / "fx"), image_size=30)
    assert code == 2


def test_report_command_on_published_numbers(published_runs, tmp_path):
    # Vérifie le rapport de transfert sur les chiffres publiés
    out = tmp_path / "rapport"
    code, output = run_command("report", *published_runs, output_dir=str(out))
    assert code == 0
    assert "Transfert positif : 10/10" in output
    assert "LAM:map +1.1000" in output
    for name in ("transfer.csv", "transfer.json", "transfer.png"):
        assert (out / name).exists()
    document = json.loads((out / "transfer.json").read_text(encoding="utf-8"))
    assert document["positive_transfer"] == {"improved": 10, "total": 10}


def test_report_command_requires_joint_run(published_runs, tmp_path):
    # Vérifie que le rapport exige une exécution jointe
    code, message = run_command("report", *published_runs[:-1], output_dir=str(tmp_path))
    assert code == 2
    assert "jointe" in message


def test_report_command_rejects_two_joint_runs(published_runs, tmp_path):
    # Vérifie le refus de deux exécutions jointes
    code, _ = run_command("report", *published_runs, published_runs[-1], output_dir=str(tmp_path))
    assert code == 2


def test_gcd_command_writes_matrix(write_config, tmp_path):
    # Vérifie l'écriture de la matrice GCD par la commande
    prefix = tmp_path / "analyse" / "gcd"
    code, output = run_command("gcd", str(write_config()), tasks="LAM,GAZEFOLLOW", output=str(prefix))
    assert code == 0
    assert "GCD agrégé (toy)" in output
    document = json.loads(prefix.with_suffix(".json").read_text(encoding="utf-8"))
    assert document["tasks"] == ["LAM", "GAZEFOLLOW"]
    assert len(document["gcd"]) == 2
    assert document["gcd"][0][0] == 0.0
    assert document["gcd"][0][1] == document["gcd"][1][0]
    assert 0.0 <= document["aggregate_gcd"] <= 2.0


@pytest.mark.parametrize("split", ["val", "test"])
def test_gcd_command_on_held_out_split_with_gaze(write_config, tmp_path, split):
    # Vérifie que GazeFollow (dix annotations par image hors entraînement) passe sur val et test
    prefix = tmp_path / f"gcd-{split}"
    code, output = run_command("gcd", str(write_config()), tasks="LAM,GAZEFOLLOW", split=split, output=str(prefix))
    assert code == 0, output
    document = json.loads(prefix.with_suffix(".json").read_text(encoding="utf-8"))
    assert document["tasks"] == ["LAM", "GAZEFOLLOW"]
    assert 0.0 <= document["aggregate_gcd"] <= 2.0


def test_probe_command_skips_heatmap_tasks(write_config, tmp_path):
    # Vérifie que la commande des sondes ignore la tâche de regard
    output = tmp_path / "probe.json"
    code, stdout = run_command("probe", str(write_config()), tasks="LAM,PISC,GAZEFOLLOW", output=str(output))
    assert code == 0
    report = json.loads(output.read_text(encoding="utf-8"))
    assert set(report["tasks"]) == {"LAM", "PISC_DOMAIN", "PISC_RELATION"}
    assert report["pooling"] == "flatten"
    assert "LAM: mAP=" in stdout


def test_train_then_evaluate(write_config, tmp_path):
    # Vérifie l'entraînement puis l'évaluation d'un point de contrôle
    config = write_config(regime="single:LAM")
    run_dir = tmp_path / "run"
    code, output = run_command("train", str(config), output_dir=str(run_dir))
    assert code == 0, output
    run = Run.objects.get()
    assert run.is_done
    assert run.kind == Run.Kind.SINGLE
    assert set(run.metrics) == {"LAM"}
    for name in ("config.json", "losses.csv", "metrics.json", "predictions.jsonl", "checkpoints/epoch-000.pt"):
        assert (run_dir / name).exists()

    code, output = run_command("evaluate", str(run_dir / "checkpoints" / "epoch-000.pt"), str(config), split="val")
    assert code == 0, output
    document = json.loads((run_dir / "eval-val" / "metrics.json").read_text(encoding="utf-8"))
    assert document["split"] == "val"
    assert document["regime"] == "single:LAM"
    assert set(document["metrics"]["LAM"]) == {"map", "accuracy"}


def test_evaluate_rejects_checkpoint_of_another_model(write_config, tmp_path):
    # Vérifie le refus d'un point de contrôle d'une autre architecture
    config = write_config(regime="single:LAM")
    run_dir = tmp_path / "run"
    assert run_command("train", str(config), output_dir=str(run_dir))[0] == 0
    other = write_config(regime="single:LAM", model={"heatmap_size": 8})
    code, message = run_command("evaluate", str(run_dir / "checkpoints" / "epoch-000.pt"), str(other))
    assert code == 2
    assert "heatmap_size" in message


# ---------------------------
# TESTS DE BOUT EN BOUT (lents)
# ---------------------------
@pytest.mark.slow
def test_fixtures_to_single_run_end_to_end(tmp_path):
    # Vérifie qu'une exécution seule apprend HaGRIDv2 réduit à 4 gestes
    assert run_command("fixtures", str(tmp_path / "fx"), samples=64, val=16, test=16, hagrid_classes=4)[0] == 0
    run_dir = tmp_path / "run"
    code, output = run_command("train", str(tmp_path / "fx" / "config.json"), regime="single:HAGRIDV2",
                               output_dir=str(run_dir))
    assert code == 0, output
    metrics = json.loads((run_dir / "metrics.json").read_text(encoding="utf-8"))["metrics"]["HAGRIDV2"]
    assert metrics["accuracy"] > 0.5
    assert (run_dir / "checkpoints" / "best.pt").exists()


@pytest.mark.slow
def test_synergy_sweep_fills_grid(tmp_path, settings):
    # Vérifie que le balayage complet remplit les douze lignes de la grille
    settings.SOCIALFUSION = {**getattr(settings, "SOCIALFUSION", {}), "RUNS_DIR": str(tmp_path / "runs")}
    assert run_command("fixtures", str(tmp_path / "fx"), samples=8, val=4, test=4, image_size=28)[0] == 0
    config = tmp_path / "fx" / "config.json"
    document = json.loads(config.read_text(encoding="utf-8"))
    document["train"].update({"epochs": 1, "batch_size": 8})
    document["model"].update({"heatmap_size": 16})
    config.write_text(json.dumps(document), encoding="utf-8")

    code, output = run_command("synergy", str(config), name="balayage")
    assert code == 0, output
    assert Run.objects.filter(status=Run.Status.DONE).count() == len(sweep_regimes())
    csv_path = tmp_path / "runs" / "balayage" / "synergy.csv"
    assert len(csv_path.read_text(encoding="utf-8").splitlines()) == 13


DESK_GROUPS = ("LAM", "AFFECTNET", "HAGRIDV2", "PISC", "GAZEFOLLOW")


@pytest.fixture(scope="module")
def desk_fixtures(tmp_path_factory):
    """Jeu synthétique complet (environ 200 échantillons par tâche), généré une fois pour le module."""
    root = tmp_path_factory.mktemp("desk")
    fixtures = generate_fixtures(root / "fx", seed=0, samples=200, val=40, test=40)
    return fixtures


def _desk_config(desk_fixtures, tmp_path, epochs):
    document = json.loads(desk_fixtures.config.read_text(encoding="utf-8"))
    document["train"].update({"epochs": epochs})
    document["data"]["manifests"] = {
        task: str(desk_fixtures.config.parent / name) for task, name in document["data"]["manifests"].items()
    }
    path = tmp_path / "desk.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


@pytest.mark.slow
@pytest.mark.parametrize("group", DESK_GROUPS)
def test_single_run_learns_its_training_split(group, desk_fixtures, tmp_path):
    # Vérifie qu'en 50 époques chaque exécution seule atteint 95 % de précision (ou un min-L2 ≤ 0.1) sur l'entraînement
    config = _desk_config(desk_fixtures, tmp_path, epochs=50)
    run_dir = tmp_path / "run"
    code, output = run_command("train", str(config), regime=f"single:{group}", output_dir=str(run_dir))
    assert code == 0, output
    code, output = run_command("evaluate", str(run_dir / "checkpoints" / "epoch-049.pt"), str(config),
                               regime=f"single:{group}", split="train")
    assert code == 0, output
    metrics = json.loads((run_dir / "eval-train" / "metrics.json").read_text(encoding="utf-8"))["metrics"]
    for task in GROUP_TASKS[group]:
        if task == "GAZEFOLLOW":
            assert metrics[task]["min_l2"] <= 0.1
        else:
            assert metrics[task]["accuracy"] >= 0.95


@pytest.mark.slow
def test_joint_run_feeds_a_ten_metric_transfer_report(desk_fixtures, tmp_path):
    # Vérifie que l'exécution jointe aboutit et que le rapport couvre les dix métriques de tête
    config = _desk_config(desk_fixtures, tmp_path, epochs=2)
    runs = []
    for regime in [f"single:{group}" for group in DESK_GROUPS] + ["joint"]:
        run_dir = tmp_path / regime.replace(":", "-").lower()
        code, output = run_command("train", str(config), regime=regime, output_dir=str(run_dir))
        assert code == 0, output
        runs.append(str(run_dir))
    assert Run.objects.get(kind=Run.Kind.JOINT).is_done

    out = tmp_path / "rapport"
    code, output = run_command("report", *runs, output_dir=str(out))
    assert code == 0, output
    document = json.loads((out / "transfer.json").read_text(encoding="utf-8"))
    headline = [row for row in document["rows"] if row["headline"]]
    assert len(headline) == 10
    assert all(row["delta"] is not None for row in headline)
    assert document["positive_transfer"]["total"] == 10


# ---------------------------
# TESTS DU BALAYAGE REPRENABLE
# ---------------------------
def _fake_metrics(config):
    metrics = {}
    for task in config.regime.task_ids:
        if task.value == "GAZEFOLLOW":
            metrics[task.value] = {"min_l2": 0.1, "avg_l2": 0.2, "auc": 0.9}
        else:
            metrics[task.value] = {"map": 50.0, "accuracy": 60.0}
    return metrics


def test_sweep_survives_runtime_failure_and_reruns_only_pending(run_config, tmp_path, monkeypatch):
    # Vérifie qu'une RuntimeError n'interrompt pas le balayage et que la reprise ne relance que l'exécution échouée
    calls = []

    def failing_train_run(config, run_dir):
        calls.append(str(config.regime))
        if str(config.regime) == "single:LAM":
            raise RuntimeError("mémoire insuffisante")
        return _fake_metrics(config)

    monkeypatch.setattr(runs, "train_run", failing_train_run)
    runs.synergy_sweep(run_config, tmp_path / "config.json", name="tolerant")
    assert len(calls) == len(sweep_regimes())
    failed = Run.objects.get(regime="single:LAM")
    assert failed.status == Run.Status.FAILED
    assert "mémoire insuffisante" in failed.error
    assert Run.objects.filter(status=Run.Status.DONE).count() == len(sweep_regimes()) - 1

    calls.clear()
    monkeypatch.setattr(runs, "train_run", lambda config, run_dir: calls.append(str(config.regime)) or _fake_metrics(config))
    runs.synergy_sweep(run_config, tmp_path / "config.json", name="tolerant")
    assert calls == ["single:LAM"]
    assert Run.objects.get(regime="single:LAM").is_done
    assert (run_config.output_dir / "synergy.csv").exists()
