"""Round-trip reconstruction training for bi-directional translation models."""

from ._roundtrip import (
    Config,
    Translator,
    bidirectional_corpus,
    corpus_bleu,
    delta_bleu_report,
    finetune,
    gradcheck,
    gumbel_max_frequencies,
    pretrain,
    synthesize,
)

__all__ = [
    "Config",
    "Translator",
    "bidirectional_corpus",
    "corpus_bleu",
    "delta_bleu_report",
    "finetune",
    "gradcheck",
    "gumbel_max_frequencies",
    "pretrain",
    "synthesize",
]
