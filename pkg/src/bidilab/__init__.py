"""Desk-scale laboratory for studying bidirectionality in language model
pre-training: one objective with knobs (n_mask, n_bidir, n_predict)
generalizing causal, masked, prefix, and hybrid training, plus matching
evaluation protocols."""

from .data import Document, load_documents
from .model import Model, ModelConfig, init, preset_config
from .tokenizer import TokenizerModel, train_tokenizer
from .trainer import TrainConfig, flops_estimate, train
from .transform import TransformedExample, transform
from .variants import VARIANTS, TransformPlan, VariantSpec, get_variant, sample_plan

__all__ = [
    "Document",
    "Model",
    "ModelConfig",
    "TokenizerModel",
    "TrainConfig",
    "TransformPlan",
    "TransformedExample",
    "VARIANTS",
    "VariantSpec",
    "flops_estimate",
    "get_variant",
    "init",
    "load_documents",
    "preset_config",
    "sample_plan",
    "train",
    "train_tokenizer",
    "transform",
]
