"""Frame-embedding adapter pipeline: pretraining, fine-tuning, evaluation."""

from ._core import (
    dataset_info,
    evaluate,
    export_embeddings,
    finetune,
    generate_synthetic,
    gradcheck,
    metrics,
    nearest_centroid_baseline,
    pretrain,
    read_features,
    write_features,
)

__all__ = [
    "dataset_info",
    "evaluate",
    "export_embeddings",
    "finetune",
    "generate_synthetic",
    "gradcheck",
    "metrics",
    "nearest_centroid_baseline",
    "pretrain",
    "read_features",
    "write_features",
]
