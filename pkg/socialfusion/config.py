"""
Configuration d'une exécution.

Un fichier JSON par exécution, validé par `RunConfigSerializer` avant tout travail,
puis converti en dataclasses figées. Les chemins relatifs (manifestes, racine des
images, dossier de sortie) sont résolus par rapport au dossier du fichier.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .conf import sf_setting
from .exceptions import InvalidConfigError
from .modeling.backbone import LoRAConfig
from .regimes import parse_regime
from .serializers import RunConfigSerializer, flatten_errors
from .tasks import TaskId

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    name: str = "toy"
    path: str = None
    label: str = None
    input_size: int = 28
    patch_size: int = 14
    feature_dim: int = 16
    seed: int = 0


@dataclass(frozen=True)
class BackboneConfig:
    name: str = "toy"
    path: str = None
    d_l: int = 32
    layers: int = 2
    heads: int = 4
    max_context: int = 2048
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    connector_hidden: int = 4096
    lora: LoRAConfig = field(default_factory=LoRAConfig)
    heatmap_size: int = 64
    heatmap_sigma: float = 3.0
    dtype: str = "float32"


@dataclass(frozen=True)
class DataConfig:
    manifests: dict = field(default_factory=dict)
    root: Path = None
    image_workers: int = 0

    def manifest_for(self, task_id):
        try:
            return self.manifests[TaskId(task_id)]
        except KeyError:
            raise InvalidConfigError(f"Aucun manifeste configuré pour la tâche {task_id}.") from None


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    warmup_steps: int = 500
    batch_size: int = 32
    lambda_heatmap: float = None
    epochs: int = 1
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    eval_split: str = "val"
    log_every: int = 10

    def resolved_lambda(self, num_text_tasks):
        """λ explicite, sinon 1 / (nombre de tâches textuelles entraînées conjointement)."""
        if self.lambda_heatmap is not None:
            return self.lambda_heatmap
        return 1.0 / num_text_tasks if num_text_tasks else 1.0


@dataclass(frozen=True)
class ProbeConfig:
    pooling: str = "flatten"
    epochs: int = 100
    lr: float = 1e-2
    weight_decay: float = 0.0
    batch_size: int = 64
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    regime: object = None
    name: str = "run"
    output_dir: Path = None
    seed: int = 0
    document: dict = field(default_factory=dict, compare=False, repr=False)

    def with_regime(self, regime):
        regime = parse_regime(regime) if isinstance(regime, str) else regime
        document = {**self.document, "regime": str(regime)}
        return replace(self, regime=regime, document=document)

    def with_output_dir(self, output_dir):
        return replace(self, output_dir=Path(output_dir))

    def snapshot(self):
        """Document JSON validé, tel qu'écrit dans `config.json` du dossier d'exécution."""
        return json.dumps(self.document, indent=2, sort_keys=True, default=str)

    def fingerprint(self):
        return hashlib.sha256(self.snapshot().encode("utf-8")).hexdigest()[:16]


def _resolve(base_dir, value):
    if value is None:
        return None
    path = Path(value).expanduser()
    return path if path.is_absolute() else (base_dir / path).resolve()


def build_run_config(validated, base_dir):
    """Convertit les données validées du serializer en `RunConfig`."""
    base_dir = Path(base_dir)
    model_data = validated.get("model", {})
    lora = LoRAConfig(**model_data.get("lora", {}))
    model = ModelConfig(
        encoder=EncoderConfig(**model_data.get("encoder", {})),
        backbone=BackboneConfig(**model_data.get("backbone", {})),
        connector_hidden=model_data.get("connector_hidden", 4096),
        lora=lora,
        heatmap_size=model_data.get("heatmap_size", sf_setting("HEATMAP_SIZE")),
        heatmap_sigma=model_data.get("heatmap_sigma", sf_setting("HEATMAP_SIGMA")),
        dtype=model_data.get("dtype", "float32"),
    )
    data_section = validated["data"]
    data = DataConfig(
        manifests={TaskId(task): _resolve(base_dir, path) for task, path in data_section["manifests"].items()},
        root=_resolve(base_dir, data_section.get("root")),
        image_workers=data_section.get("image_workers", 0),
    )
    seed = validated.get("seed", 0)
    train = TrainConfig(**validated.get("train", {}), seed=seed)
    probe = ProbeConfig(**validated.get("probe", {}), seed=seed)
    return RunConfig(
        data=data,
        model=model,
        train=train,
        probe=probe,
        regime=parse_regime(validated.get("regime", "joint")),
        name=validated.get("name", "run"),
        output_dir=_resolve(base_dir, validated.get("output_dir")),
        seed=seed,
        document=json.loads(json.dumps(validated, default=str)),
    )


def parse_run_config(document, base_dir=".", overrides=None):
    """Valide un document de configuration (dict) ; lève InvalidConfigError avec les chemins fautifs."""
    if not isinstance(document, dict):
        raise InvalidConfigError("La configuration doit être un objet JSON.")
    document = {**document, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    serializer = RunConfigSerializer(data=document)
    if not serializer.is_valid():
        errors = flatten_errors(serializer.errors)
        details = "; ".join(f"{path}: {message}" for path, message in sorted(errors.items()))
        raise InvalidConfigError(f"Configuration invalide : {details}", errors)
    return build_run_config(serializer.validated_data, base_dir)


def load_run_config(path, overrides=None):
    """Lit, valide et convertit un fichier de configuration JSON."""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidConfigError(f"Fichier de configuration introuvable : {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"JSON invalide dans {path} (ligne {exc.lineno}) : {exc.msg}") from None
    config = parse_run_config(document, base_dir=path.resolve().parent, overrides=overrides)
    logger.info("Configuration chargée depuis %s (régime %s)", path, config.regime)
    return config
