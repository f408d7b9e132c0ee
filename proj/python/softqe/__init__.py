"""Dense retrieval with distilled query expansion.

Configs are plain dicts with the same keys as the JSON files the CLI reads;
missing keys take the library defaults.
"""

import json

from ._softqe import (
    ConfigError,
    Corpus,
    Error,
    InputError,
    IntegrityError,
    LookupError,
    Model,
    NumericalError,
    SerializationError,
    assemble_report,
    contrastive_loss,
    distillation_loss,
    lineages,
    load_model,
    mrr_at_k,
    ndcg_at_k,
    paired_t_test,
    read_corpus,
    recall_at_k,
)
from . import _softqe

__all__ = [
    "ConfigError", "Corpus", "Error", "InputError", "IntegrityError", "LookupError", "Model",
    "NumericalError", "SerializationError", "assemble_report", "contrastive_loss",
    "distillation_loss", "evaluate", "generate_corpus", "lineages", "load_model", "losses",
    "mrr_at_k", "ndcg_at_k", "paired_t_test", "read_corpus", "recall_at_k", "run_experiment",
    "train",
]


def generate_corpus(config=None):
    return _softqe._generate_corpus(json.dumps(config or {}))


def train(lineage, corpus, config=None, teacher=None, cache_dir=None):
    """Trains one lineage. Students need the q2d `teacher`."""
    return _softqe._train(lineage, corpus, json.dumps(config or {}), teacher, cache_dir)


def evaluate(model, corpus, query_input="q"):
    """Metric report for the eval split: aggregates and per-query values."""
    return json.loads(_softqe._evaluate(model, corpus, query_input))


def losses(model):
    """Per-epoch losses; epoch 0 is measured before the first update."""
    return json.loads(model._losses())


def run_experiment(spec, out):
    _softqe._run_experiment(json.dumps(spec), str(out))
