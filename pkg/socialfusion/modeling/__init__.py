from .backbone import LanguageBackbone, LoRAConfig
from .bbox import BBox, BBoxEmbedding, make_bboxes, patch_mask
from .checkpoint import build_model, load_checkpoint, parameter_checksums, save_checkpoint
from .connector import Connector, ConnectorConfig
from .encoders import VisualEncoderHandle, build_encoder, encode_image
from .heads import HeatmapHead, HeatmapHeadConfig
from .model import TRAINABLE_GROUPS, EmbeddedSequence, SequenceBatch, SocialFusionModel

__all__ = [
    "BBox",
    "BBoxEmbedding",
    "Connector",
    "ConnectorConfig",
    "EmbeddedSequence",
    "HeatmapHead",
    "HeatmapHeadConfig",
    "LanguageBackbone",
    "LoRAConfig",
    "SequenceBatch",
    "SocialFusionModel",
    "TRAINABLE_GROUPS",
    "VisualEncoderHandle",
    "build_encoder",
    "build_model",
    "encode_image",
    "load_checkpoint",
    "make_bboxes",
    "parameter_checksums",
    "save_checkpoint",
]
