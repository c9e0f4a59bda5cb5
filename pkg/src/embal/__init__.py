"""Pool-based active learning over precomputed embeddings.

The loop retrains a classifier on the labeled pool each round, scores the
unlabeled pool with a selection strategy and reveals the labels of the
chosen batch. See :func:`embal.engine.run_experiment` for the entry point
and ``embal --help`` for the command line.
"""
from .config import ExperimentConfig, load_config, synthetic_benchmark_config
from .core import LabelState, apply_annotations, init_label_state
from .data import EmbeddingStore, generate_synthetic, read_store, split_dataset, write_store
from .engine import compare_runs, resume_experiment, run_experiment

__version__ = "0.1.0"

__all__ = [
    "EmbeddingStore",
    "ExperimentConfig",
    "LabelState",
    "apply_annotations",
    "compare_runs",
    "generate_synthetic",
    "init_label_state",
    "load_config",
    "read_store",
    "resume_experiment",
    "run_experiment",
    "split_dataset",
    "synthetic_benchmark_config",
    "write_store",
]
