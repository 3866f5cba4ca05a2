"""
Passe avant de SocialFusion.

image → encodeur figé → grille z (Gh, Gw, d_v) → connecteur C → z + M ⊙ p_bbox
→ séquence [p, C(z)] → modèle de langue (LoRA) → logits du prochain token
ou, pour le regard, états visuels → tête de carte de chaleur.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pad_sequence

from ..exceptions import InvalidInputError, InvalidStateError
from ..tasks import label_token_ids, render_prompt, score_labels
from .bbox import BBoxEmbedding, patch_mask
from .connector import Connector, ConnectorConfig
from .encoders import check_finite
from .heads import HeatmapHead, HeatmapHeadConfig

logger = logging.getLogger(__name__)

TRAINABLE_GROUPS = ("connector", "bbox_embedding", "lora", "heatmap_head")


@dataclass
class EmbeddedSequence:
    """Séquence plongée [prompt, patchs visuels, suffixe éventuel] et position du bloc visuel."""

    embeds: torch.Tensor
    visual_start: int
    num_visual: int

    def __len__(self):
        return self.embeds.shape[0]

    @property
    def visual_end(self):
        return self.visual_start + self.num_visual


@dataclass
class SequenceBatch:
    """Séquences complétées à droite pour former un lot."""

    embeds: torch.Tensor
    attention_mask: torch.Tensor
    lengths: list
    visual_starts: list
    num_visual: int

    @classmethod
    def collate(cls, sequences):
        if not sequences:
            raise InvalidInputError("Lot de séquences vide.")
        num_visual = sequences[0].num_visual
        embeds = pad_sequence([sequence.embeds for sequence in sequences], batch_first=True)
        mask = torch.zeros(embeds.shape[:2], dtype=torch.long, device=embeds.device)
        for row, sequence in enumerate(sequences):
            mask[row, : len(sequence)] = 1
        return cls(
            embeds=embeds,
            attention_mask=mask,
            lengths=[len(sequence) for sequence in sequences],
            visual_starts=[sequence.visual_start for sequence in sequences],
            num_visual=num_visual,
        )


class SocialFusionModel(nn.Module):
    """Encodeur visuel figé relié à un modèle de langue LoRA par un connecteur minimal."""

    def __init__(self, encoder, backbone, connector_hidden=4096, heatmap_size=(64, 64)):
        super().__init__()
        handle = encoder.handle
        self.encoder = encoder
        self.backbone = backbone
        self.connector = Connector(ConnectorConfig(d_v=handle.feature_dim, d_l=backbone.d_l, d_h=connector_hidden))
        self.bbox_embedding = BBoxEmbedding(backbone.d_l)
        self.heatmap_head = HeatmapHead(
            HeatmapHeadConfig(grid=handle.grid, d_l=backbone.d_l, out_size=tuple(heatmap_size))
        )

    # ---------------------------
    # Propriétés
    # ---------------------------
    @property
    def handle(self):
        return self.encoder.handle

    @property
    def tokenizer(self):
        return self.backbone.tokenizer

    @property
    def dtype(self):
        return self.connector.mlp[0].weight.dtype

    @property
    def device(self):
        return self.connector.mlp[0].weight.device

    # ---------------------------
    # Étapes de la passe avant
    # ---------------------------
    def encode_images(self, images):
        """(B, 3, H_in, W_in) → (B, Gh, Gw, d_v), sans gradient vers l'encodeur."""
        return self.encoder(images.to(device=self.device, dtype=self.dtype))

    def connect(self, z):
        return check_finite(self.connector(z), "la sortie du connecteur")

    def bbox_masks(self, bbox_sets):
        grid = self.handle.grid
        return torch.stack([patch_mask(boxes, grid) for boxes in bbox_sets]).to(self.device)

    def embed_bboxes(self, z, bbox_sets):
        """Ajoute p_bbox aux patchs recouvrant une boîte ; une liste vide laisse z inchangé."""
        if not any(bbox_sets):
            return z
        return self.bbox_embedding(z, self.bbox_masks(bbox_sets))

    def visual_tokens(self, images, bbox_sets):
        """Grille connectée et marquée par les boîtes, (B, Gh, Gw, d_l)."""
        return self.embed_bboxes(self.connect(self.encode_images(images)), bbox_sets)

    def prompt_tokens(self, spec):
        return render_prompt(spec, self.tokenizer)

    def assemble_sequence(self, prompt_tokens, z, suffix_tokens=()):
        """[p, aplatir(z)] en ordre ligne par ligne, suivi des tokens de suffixe (forçage par l'enseignant)."""
        d_l = z.shape[-1]
        visual = z.reshape(-1, d_l)
        parts = []
        if len(prompt_tokens):
            parts.append(self._embed(prompt_tokens))
        parts.append(visual)
        if len(suffix_tokens):
            parts.append(self._embed(suffix_tokens))
        return EmbeddedSequence(
            embeds=torch.cat(parts, dim=0),
            visual_start=len(prompt_tokens),
            num_visual=visual.shape[0],
        )

    def _embed(self, token_ids):
        ids = torch.as_tensor(list(token_ids), dtype=torch.long, device=self.device)
        return self.backbone.embed_tokens(ids).to(self.dtype)

    def _as_batch(self, sequence):
        if isinstance(sequence, SequenceBatch):
            return sequence, False
        return SequenceBatch.collate([sequence]), True

    def run_backbone(self, batch):
        return self.backbone.hidden_states(batch.embeds, batch.attention_mask)

    def forward_text(self, sequence):
        """Logits du prochain token à la dernière position de chaque séquence : (V,) ou (B, V)."""
        batch, single = self._as_batch(sequence)
        hidden = self.run_backbone(batch)
        rows = torch.arange(len(batch.lengths), device=hidden.device)
        last = torch.as_tensor(batch.lengths, device=hidden.device) - 1
        logits = check_finite(self.backbone.logits(hidden[rows, last]), "les logits")
        return logits[0] if single else logits

    def visual_states(self, hidden, batch):
        gh, gw = self.handle.grid
        if batch.num_visual != gh * gw:
            raise InvalidStateError(f"{batch.num_visual} positions visuelles pour une grille {gh}x{gw}.")
        states = []
        for row, start in enumerate(batch.visual_starts):
            if start + batch.num_visual > batch.lengths[row]:
                raise InvalidStateError("Positions visuelles absentes de la séquence.")
            states.append(hidden[row, start: start + batch.num_visual])
        return torch.stack(states).reshape(len(states), gh, gw, hidden.shape[-1])

    def forward_heatmap(self, sequence):
        """Scores de carte de chaleur (avant sigmoïde) : (H_out, W_out) ou (B, H_out, W_out)."""
        batch, single = self._as_batch(sequence)
        hidden = self.run_backbone(batch)
        scores = check_finite(self.heatmap_head(self.visual_states(hidden, batch)), "la carte de chaleur")
        return scores[0] if single else scores

    # ---------------------------
    # Forçage par l'enseignant et évaluation
    # ---------------------------
    def target_logits(self, prompts, z, targets):
        """
        Logits alignés sur les tokens cibles de chaque échantillon.

        Retourne (logits (ΣK, V), cibles (ΣK,)) où K est la longueur de la cible
        de l'échantillon ; seules les positions cibles sont gardées (prompt et
        image masqués).
        """
        sequences = [
            self.assemble_sequence(prompt, grid, target[:-1])
            for prompt, grid, target in zip(prompts, z, targets)
        ]
        batch = SequenceBatch.collate(sequences)
        hidden = self.run_backbone(batch)
        rows, positions, tokens = [], [], []
        for row, (sequence, target) in enumerate(zip(sequences, targets)):
            for offset, token in enumerate(target):
                rows.append(row)
                positions.append(sequence.visual_end - 1 + offset)
                tokens.append(token)
        rows = torch.as_tensor(rows, device=hidden.device)
        positions = torch.as_tensor(positions, device=hidden.device)
        logits = self.backbone.logits(hidden[rows, positions])
        return check_finite(logits, "les logits"), torch.as_tensor(tokens, device=hidden.device)

    def label_log_likelihoods(self, prompt, grid, candidates):
        """Log-vraisemblance de chaque séquence candidate après [p, C(z)] (somme sur ses tokens)."""
        logits, tokens = self.target_logits([prompt] * len(candidates), [grid] * len(candidates), candidates)
        log_probs = F.log_softmax(logits, dim=-1).gather(1, tokens.unsqueeze(1)).squeeze(1)
        sizes = [len(candidate) for candidate in candidates]
        return torch.stack([chunk.sum() for chunk in torch.split(log_probs, sizes)])

    @torch.no_grad()
    def score_text(self, spec, images, bbox_sets):
        """Scores (B, C) des étiquettes de la tâche : log-probabilités, sommées sur les tokens de chaque étiquette."""
        labels = label_token_ids(spec, self.tokenizer)
        prompt = self.prompt_tokens(spec)
        z = self.visual_tokens(images, bbox_sets)
        if all(len(tokens) == 1 for tokens in labels):
            batch = SequenceBatch.collate([self.assemble_sequence(prompt, grid) for grid in z])
            log_probs = F.log_softmax(self.forward_text(batch), dim=-1)
            return torch.stack([score_labels(row, spec, labels) for row in log_probs])
        rows = []
        for grid in z:
            def scorer(tokens, grid=grid):
                return self.label_log_likelihoods(prompt, grid, [tokens])[0]
            rows.append(score_labels(scorer, spec, labels))
        return torch.stack(rows)

    @torch.no_grad()
    def predict_heatmaps(self, spec, images, bbox_sets):
        """Cartes de chaleur après sigmoïde, (B, H_out, W_out)."""
        prompt = self.prompt_tokens(spec)
        z = self.visual_tokens(images, bbox_sets)
        batch = SequenceBatch.collate([self.assemble_sequence(prompt, grid) for grid in z])
        return torch.sigmoid(self.forward_heatmap(batch))

    # ---------------------------
    # Groupes de paramètres
    # ---------------------------
    def trainable_groups(self):
        """Groupes entraînables, dans un ordre stable : connecteur, p_bbox, LoRA, tête de carte de chaleur."""
        return {
            "connector": list(self.connector.named_parameters(prefix="connector")),
            "bbox_embedding": list(self.bbox_embedding.named_parameters(prefix="bbox_embedding")),
            "lora": self.backbone.lora_named_parameters(),
            "heatmap_head": list(self.heatmap_head.named_parameters(prefix="heatmap_head")),
        }

    def trainable_named_parameters(self):
        return [item for group in TRAINABLE_GROUPS for item in self.trainable_groups()[group]]

    def frozen_named_parameters(self):
        return list(self.encoder.named_parameters(prefix="encoder")) + self.backbone.base_named_parameters()

    def enforce_freezing(self):
        """Seuls les groupes entraînables gardent requires_grad."""
        for _, parameter in self.frozen_named_parameters():
            parameter.requires_grad_(False)
        for _, parameter in self.trainable_named_parameters():
            parameter.requires_grad_(True)
        return self
