"""Boundary-conditioned video captioning through a frozen language model.

Core flow: multi-extractor feature encoding -> boundary-aware video query
tokens -> soft-prompted caption generation, with adapter-only training and
caption-metric evaluation. A synthetic desk-scale profile exercises the full
pipeline without any pretrained weights.
"""

from .config import RunConfig, desk_profile, load_run_config
from .data import (BoundaryAnnotation, CaptionSample, CaptionTriple,
                   CaptionType, VideoRecord, load_annotations,
                   parse_annotations)
from .errors import GebcError
from .metrics import ScoreReport, aggregate, cider, evaluate, rouge_l, tokenize
from .model import CaptioningModel
from .training import Checkpoint, load_checkpoint, lr_at, save_checkpoint, train

__all__ = [
    "BoundaryAnnotation",
    "CaptionSample",
    "CaptionTriple",
    "CaptionType",
    "CaptioningModel",
    "Checkpoint",
    "GebcError",
    "RunConfig",
    "ScoreReport",
    "VideoRecord",
    "aggregate",
    "cider",
    "desk_profile",
    "evaluate",
    "load_annotations",
    "load_checkpoint",
    "load_run_config",
    "lr_at",
    "parse_annotations",
    "rouge_l",
    "save_checkpoint",
    "tokenize",
    "train",
]
