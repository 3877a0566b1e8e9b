"""Click-through rate models over group-wise sparse features.

Logistic regression, an Embedding&MLP base model and the Deep Interest
Network with its local activation unit, trained with plain SGD or lazy
sparse Adam and optionally the mini-batch aware l2 regularizer.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import DatasetBundle, ingest_amazon, ingest_movielens, prepare_amazon, synth_generate
from .estimator import DINClassifier
from .features import (
    FeatureGroupSpec,
    FeatureSchema,
    Instance,
    InstanceSet,
    build_schema,
    encode_instance,
    read_instances,
    read_schema,
    write_instances,
    write_schema,
)
from .metrics import MetricsReport, auc, rela_impr, weighted_auc
from .model import Network, forward_base, forward_din, forward_lr
from .regularization import OccurrenceCounts, count_occurrences, exact_l2_oracle, mba_gradient_terms
from .training import OptimizerConfig, RegularizerConfig, train

__version__ = "0.1.0"

__all__ = [
    "DINClassifier", "DatasetBundle", "FeatureGroupSpec", "FeatureSchema", "Instance", "InstanceSet",
    "MetricsReport", "Network", "OccurrenceCounts", "OptimizerConfig", "RegularizerConfig", "RunConfig",
    "auc", "build_schema", "count_occurrences", "encode_instance", "exact_l2_oracle", "forward_base",
    "forward_din", "forward_lr", "ingest_amazon", "ingest_movielens", "load_checkpoint",
    "mba_gradient_terms", "prepare_amazon", "rela_impr", "read_instances", "read_schema",
    "save_checkpoint", "synth_generate", "train", "weighted_auc", "write_instances", "write_schema",
]
