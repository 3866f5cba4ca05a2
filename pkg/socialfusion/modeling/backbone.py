"""
Modèle de langue figé muni d'adaptateurs LoRA.

Deux variantes : un petit Llama initialisé aléatoirement avec un tokenizer mot à mot
construit sur les prompts des tâches (échelle bureau), ou un modèle causal
pré-entraîné chargé avec `from_pretrained`. Dans les deux cas, les adaptateurs LoRA
sont posés par `peft` sur toutes les couches linéaires du décodeur et seuls eux
restent entraînables.
"""

import logging
from dataclasses import dataclass

import torch
from peft import LoraConfig, get_peft_model, get_peft_model_state_dict, set_peft_model_state_dict
from tokenizers import Tokenizer, models, pre_tokenizers, processors
from torch import nn
from transformers import (
    AutoModelForCausalLM,
    AutoTokenizer,
    LlamaConfig,
    LlamaForCausalLM,
    PreTrainedTokenizerFast,
)

from ..exceptions import ContextOverflowError, InvalidConfigError

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[BOS]", "[EOS]")


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 32
    alpha: float = None
    dropout: float = 0.0

    def __post_init__(self):
        if self.rank < 1:
            raise InvalidConfigError("Le rang LoRA doit être positif.")

    @property
    def scaling_alpha(self):
        return self.alpha if self.alpha is not None else self.rank


def build_toy_tokenizer(corpus):
    """Tokenizer mot à mot dont le vocabulaire couvre exactement le corpus (prompts et étiquettes)."""
    splitter = pre_tokenizers.Whitespace()
    words = sorted({word for text in corpus for word, _ in splitter.pre_tokenize_str(text)})
    vocab = {token: index for index, token in enumerate([*SPECIAL_TOKENS, *words])}

    tokenizer = Tokenizer(models.WordLevel(vocab=vocab, unk_token="[UNK]"))
    tokenizer.pre_tokenizer = splitter
    tokenizer.post_processor = processors.TemplateProcessing(
        single="[BOS] $A",
        special_tokens=[("[BOS]", vocab["[BOS]"])],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        pad_token="[PAD]",
        unk_token="[UNK]",
        bos_token="[BOS]",
        eos_token="[EOS]",
    )


class LanguageBackbone(nn.Module):
    """Enveloppe d'un modèle causal : plongement des tokens, états cachés, logits, paramètres LoRA."""

    def __init__(self, model, tokenizer, name, lora):
        super().__init__()
        self.name = name
        self.tokenizer = tokenizer
        self.lora = lora
        peft_config = LoraConfig(
            r=lora.rank,
            lora_alpha=lora.scaling_alpha,
            lora_dropout=lora.dropout,
            target_modules="all-linear",
            bias="none",
        )
        self.model = get_peft_model(model, peft_config)
        self.d_l = model.config.hidden_size
        self.max_context = model.config.max_position_embeddings

    @classmethod
    def toy(cls, corpus, d_l=32, layers=2, heads=4, lora=None, seed=0, max_context=2048):
        tokenizer = build_toy_tokenizer(corpus)
        config = LlamaConfig(
            vocab_size=len(tokenizer),
            hidden_size=d_l,
            intermediate_size=2 * d_l,
            num_hidden_layers=layers,
            num_attention_heads=heads,
            num_key_value_heads=heads,
            max_position_embeddings=max_context,
            rms_norm_eps=1e-6,
            tie_word_embeddings=False,
            pad_token_id=tokenizer.pad_token_id,
            bos_token_id=tokenizer.bos_token_id,
            eos_token_id=tokenizer.eos_token_id,
            attn_implementation="eager",
        )
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            model = LlamaForCausalLM(config)
        logger.debug("Modèle de langue jouet : d_l=%d, %d couches, vocabulaire %d", d_l, layers, len(tokenizer))
        return cls(model, tokenizer, "toy-llama", lora or LoRAConfig())

    @classmethod
    def from_pretrained(cls, path, lora=None, cache_dir=None):
        tokenizer = AutoTokenizer.from_pretrained(path, cache_dir=cache_dir)
        if tokenizer.pad_token is None:
            tokenizer.pad_token = tokenizer.eos_token
        model = AutoModelForCausalLM.from_pretrained(path, cache_dir=cache_dir, attn_implementation="eager")
        logger.info("Modèle de langue chargé depuis %s (d_l=%d)", path, model.config.hidden_size)
        return cls(model, tokenizer, str(path), lora or LoRAConfig())

    @property
    def causal_lm(self):
        return self.model.get_base_model()

    def embed_tokens(self, token_ids):
        return self.causal_lm.get_input_embeddings()(token_ids)

    def hidden_states(self, inputs_embeds, attention_mask):
        """États de la dernière couche (après normalisation), forme (B, L, d_l)."""
        length = inputs_embeds.shape[1]
        if length > self.max_context:
            raise ContextOverflowError(
                f"Séquence de {length} positions pour un contexte de {self.max_context}."
            )
        outputs = self.causal_lm.get_decoder()(
            inputs_embeds=inputs_embeds,
            attention_mask=attention_mask,
            use_cache=False,
        )
        return outputs.last_hidden_state

    def logits(self, hidden):
        return self.causal_lm.get_output_embeddings()(hidden)

    @property
    def vocab_size(self):
        return self.causal_lm.get_output_embeddings().out_features

    def lora_named_parameters(self, prefix="backbone"):
        return [
            (f"{prefix}.{name}", parameter)
            for name, parameter in self.model.named_parameters()
            if "lora_" in name
        ]

    def base_named_parameters(self, prefix="backbone"):
        return [
            (f"{prefix}.{name}", parameter)
            for name, parameter in self.model.named_parameters()
            if "lora_" not in name
        ]

    def lora_state_dict(self):
        return {key: value.detach().cpu() for key, value in get_peft_model_state_dict(self.model).items()}

    def load_lora_state_dict(self, state):
        set_peft_model_state_dict(self.model, state)
