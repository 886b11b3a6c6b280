"""Paired-expert decoder: tokenizer, model, checks and leakage metrics."""

from ._ple import (
    BOS,
    EOS,
    NO_THINK,
    THINK,
    UNK,
    Model,
    ModelConfig,
    Vocabulary,
    count_reflective,
    decode,
    encode,
    extract_answer,
    filter_candidates,
    resolve_route,
    run_checks,
    run_cli,
    synth_task,
)

__all__ = [
    "BOS",
    "EOS",
    "NO_THINK",
    "THINK",
    "UNK",
    "Model",
    "ModelConfig",
    "Vocabulary",
    "count_reflective",
    "decode",
    "encode",
    "extract_answer",
    "filter_candidates",
    "resolve_route",
    "run_checks",
    "run_cli",
    "synth_task",
]
