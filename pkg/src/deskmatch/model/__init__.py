"""Coarse-to-fine transformer matcher shared by teacher and student."""

from deskmatch.model.checkpoint import load_checkpoint, save_checkpoint
from deskmatch.model.matcher import (
    CoarseMatchSet,
    FineMatchSet,
    Matcher,
    MatchFeatures,
    MatchResult,
    init_matcher,
    match_pair,
    model_inputs,
    refine,
)
from deskmatch.model.params import Parameters

__all__ = [
    "CoarseMatchSet",
    "FineMatchSet",
    "MatchFeatures",
    "MatchResult",
    "Matcher",
    "Parameters",
    "init_matcher",
    "load_checkpoint",
    "match_pair",
    "model_inputs",
    "refine",
    "save_checkpoint",
]
