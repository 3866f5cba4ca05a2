"""
Schémas de validation (Django REST framework) des documents JSON manipulés :
configuration d'exécution, lignes de manifeste et documents de métriques.

Chaque serializer refuse les clés inconnues ; les erreurs sont ensuite aplaties
en chemins pointés (`train.lr`) par `flatten_errors`.
"""

from rest_framework import serializers

from .conf import sf_setting
from .exceptions import InvalidConfigError, InvalidInputError, RegistryError
from .modeling.bbox import make_bboxes
from .regimes import parse_regime
from .tasks import get_task

SPLITS = ("train", "val", "test")
METRIC_NAMES = ("map", "accuracy", "min_l2", "avg_l2", "auc")
MAX_GAZE_ANNOTATIONS = 10


class StrictSerializer(serializers.Serializer):
    """Serializer qui rejette toute clé absente du schéma."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Champ inconnu."] for key in unknown})
        return super().to_internal_value(data)


def flatten_errors(detail, prefix=""):
    """Aplatit les erreurs imbriquées de DRF en {chemin.pointé: message}."""
    flat = {}
    if isinstance(detail, dict):
        for key, value in detail.items():
            path = prefix if key == "non_field_errors" else (f"{prefix}.{key}" if prefix else str(key))
            flat.update(flatten_errors(value, path))
    elif isinstance(detail, list):
        messages = []
        for index, item in enumerate(detail):
            if isinstance(item, (dict, list)):
                flat.update(flatten_errors(item, f"{prefix}.{index}" if prefix else str(index)))
            else:
                messages.append(str(item))
        if messages:
            flat[prefix or "config"] = " ".join(messages)
    else:
        flat[prefix or "config"] = str(detail)
    return flat


# ---------------------------
# Configuration d'exécution
# ---------------------------
class EncoderSerializer(StrictSerializer):
    name = serializers.ChoiceField(choices=["toy", "clip", "auto"], default="toy")
    path = serializers.CharField(required=False, allow_null=True, default=None)
    label = serializers.CharField(required=False, allow_null=True, default=None)
    input_size = serializers.IntegerField(min_value=1, default=28)
    patch_size = serializers.IntegerField(min_value=1, default=14)
    feature_dim = serializers.IntegerField(min_value=1, default=16)
    seed = serializers.IntegerField(default=0)

    def validate(self, attrs):
        if attrs["name"] == "toy" and attrs["input_size"] % attrs["patch_size"]:
            raise serializers.ValidationError(
                {"input_size": "La taille d'entrée doit être un multiple de la taille de patch."}
            )
        if attrs["name"] != "toy" and not attrs.get("path"):
            raise serializers.ValidationError({"path": "Chemin requis pour un encodeur pré-entraîné."})
        return attrs


class BackboneSerializer(StrictSerializer):
    name = serializers.ChoiceField(choices=["toy", "pretrained"], default="toy")
    path = serializers.CharField(required=False, allow_null=True, default=None)
    d_l = serializers.IntegerField(min_value=2, default=32)
    layers = serializers.IntegerField(min_value=1, default=2)
    heads = serializers.IntegerField(min_value=1, default=4)
    max_context = serializers.IntegerField(min_value=1, default=2048)
    seed = serializers.IntegerField(default=0)

    def validate(self, attrs):
        if attrs["name"] == "pretrained" and not attrs.get("path"):
            raise serializers.ValidationError({"path": "Chemin requis pour un modèle de langue pré-entraîné."})
        head_dim, remainder = divmod(attrs["d_l"], attrs["heads"])
        if remainder or head_dim % 2:
            raise serializers.ValidationError(
                {"d_l": "d_l doit être divisible par heads avec une dimension par tête paire."}
            )
        return attrs


class LoRASerializer(StrictSerializer):
    rank = serializers.IntegerField(min_value=1, default=32)
    alpha = serializers.FloatField(required=False, allow_null=True, default=None, min_value=0.0)
    dropout = serializers.FloatField(min_value=0.0, max_value=0.99, default=0.0)


class ModelSerializer(StrictSerializer):
    encoder = EncoderSerializer(required=False)
    backbone = BackboneSerializer(required=False)
    connector_hidden = serializers.IntegerField(min_value=1, default=4096)
    lora = LoRASerializer(required=False)
    heatmap_size = serializers.IntegerField(min_value=2, default=lambda: sf_setting('HEATMAP_SIZE'))
    heatmap_sigma = serializers.FloatField(default=lambda: sf_setting('HEATMAP_SIGMA'))
    dtype = serializers.ChoiceField(choices=["float32", "float64"], default="float32")

    def validate_heatmap_sigma(self, value):
        if value <= 0:
            raise serializers.ValidationError("Sigma doit être strictement positif.")
        return value


class DataSerializer(StrictSerializer):
    manifests = serializers.DictField(child=serializers.CharField(), allow_empty=False)
    root = serializers.CharField(required=False, allow_null=True, default=None)
    image_workers = serializers.IntegerField(min_value=0, default=0)

    def validate_manifests(self, value):
        resolved = {}
        for name, path in value.items():
            try:
                resolved[get_task(name).id.value] = path
            except RegistryError as exc:
                raise serializers.ValidationError(str(exc))
        return resolved


class TrainSerializer(StrictSerializer):
    lr = serializers.FloatField(default=2e-4)
    warmup_steps = serializers.IntegerField(min_value=0, default=500)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    lambda_heatmap = serializers.FloatField(required=False, allow_null=True, default=None)
    epochs = serializers.IntegerField(min_value=1, default=1)
    weight_decay = serializers.FloatField(min_value=0.0, default=0.01)
    grad_clip = serializers.FloatField(required=False, allow_null=True, default=1.0)
    eval_split = serializers.ChoiceField(choices=["val", "test", "none"], default="val")
    log_every = serializers.IntegerField(min_value=1, default=10)

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError("Le taux d'apprentissage doit être strictement positif.")
        return value

    def validate_lambda_heatmap(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError("lambda_heatmap doit être strictement positif.")
        return value

    def validate_grad_clip(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError("grad_clip doit être strictement positif.")
        return value


class ProbeSerializer(StrictSerializer):
    pooling = serializers.ChoiceField(choices=["flatten", "mean"], default="flatten")
    epochs = serializers.IntegerField(min_value=1, default=100)
    lr = serializers.FloatField(default=1e-2)
    weight_decay = serializers.FloatField(min_value=0.0, default=0.0)
    batch_size = serializers.IntegerField(min_value=1, default=64)


class RunConfigSerializer(StrictSerializer):
    name = serializers.CharField(default="run")
    model = ModelSerializer(required=False)
    data = DataSerializer()
    train = TrainSerializer(required=False)
    probe = ProbeSerializer(required=False)
    regime = serializers.CharField(default="joint")
    output_dir = serializers.CharField(required=False, allow_null=True, default=None)
    seed = serializers.IntegerField(default=0)

    def validate_regime(self, value):
        try:
            return str(parse_regime(value))
        except InvalidConfigError as exc:
            raise serializers.ValidationError(str(exc))


# ---------------------------
# Manifestes
# ---------------------------
class ManifestRecordSerializer(StrictSerializer):
    """Une ligne de manifeste : {"task", "image", "bboxes", "label" | "gaze", "split"}."""

    task = serializers.CharField()
    image = serializers.CharField()
    bboxes = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=4, max_length=4),
        required=False,
        default=list,
    )
    label = serializers.CharField(required=False)
    gaze = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2),
        required=False,
        min_length=1,
        max_length=MAX_GAZE_ANNOTATIONS,
    )
    split = serializers.ChoiceField(choices=SPLITS)

    def validate_task(self, value):
        try:
            return get_task(value)
        except RegistryError as exc:
            raise serializers.ValidationError(str(exc))

    def validate(self, attrs):
        spec = attrs["task"]
        try:
            attrs["bboxes"] = make_bboxes(attrs.get("bboxes", []), arity=spec.bbox_arity)
        except InvalidInputError as exc:
            raise serializers.ValidationError({"bboxes": str(exc)})

        if spec.is_text:
            if "gaze" in attrs or "label" not in attrs:
                raise serializers.ValidationError({"label": f"La tâche {spec.id} attend une étiquette."})
            if attrs["label"] not in spec.labels:
                raise serializers.ValidationError(
                    {"label": f"Étiquette '{attrs['label']}' inconnue pour {spec.id}."}
                )
        else:
            if "label" in attrs or "gaze" not in attrs:
                raise serializers.ValidationError({"gaze": f"La tâche {spec.id} attend des points de regard."})
            if attrs["split"] == "train" and len(attrs["gaze"]) != 1:
                raise serializers.ValidationError({"gaze": "Un seul point de regard en entraînement."})
            for x, y in attrs["gaze"]:
                if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                    raise serializers.ValidationError({"gaze": f"Point hors de [0,1]² : ({x}, {y})."})
        return attrs


# ---------------------------
# Métriques
# ---------------------------
class MetricsField(serializers.DictField):
    """Document {tâche: {métrique: valeur}} ; une valeur nulle marque une cellule vide."""

    def __init__(self, **kwargs):
        kwargs.setdefault("child", serializers.DictField(child=serializers.FloatField(allow_null=True)))
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        value = super().to_internal_value(data)
        errors = {}
        for task, metrics in value.items():
            try:
                get_task(task)
            except RegistryError as exc:
                errors[task] = [str(exc)]
                continue
            unknown = sorted(set(metrics) - set(METRIC_NAMES))
            if unknown:
                errors[task] = [f"Métriques inconnues : {', '.join(unknown)}."]
        if errors:
            raise serializers.ValidationError(errors)
        return value


class MetricsSerializer(StrictSerializer):
    metrics = MetricsField()
    split = serializers.ChoiceField(choices=SPLITS, required=False)
    regime = serializers.CharField(required=False)
