"""Hierarchical few-shot audio classification engine."""

from ._core import (
    HiprotoError,
    TaxonomyTree,
    build_bank,
    classify_wav,
    describe,
    eer,
    eer_protocol,
    embed_wav,
    eval_accuracy,
    fit,
    gradcheck,
    load_wav,
    log_mel,
    mix_noise,
    sample_segment,
    stratified_split,
    synth_corpus,
)

__all__ = [
    "HiprotoError",
    "TaxonomyTree",
    "build_bank",
    "classify_wav",
    "describe",
    "eer",
    "eer_protocol",
    "embed_wav",
    "eval_accuracy",
    "fit",
    "gradcheck",
    "load_wav",
    "log_mel",
    "mix_noise",
    "sample_segment",
    "stratified_split",
    "synth_corpus",
]
