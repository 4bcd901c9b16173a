"""Dataset ingestion, contaminated splits, and synthetic generators."""

from aar.data.synthetic import (
    ManifoldConfig,
    make_blob_dataset,
    make_manifold_dataset,
    make_synthetic_split,
    synth_labeled_scores,
)
from aar.data.tabular import (
    DATA_DIR_ENV,
    ContaminatedSplit,
    Dataset,
    DatasetError,
    DatasetMeta,
    ScalerParams,
    dataset_paths,
    fit_scaler,
    load_csv_dataset,
    load_named_dataset,
    make_contaminated_split,
    n_injected_for,
    preprocess,
    resolve_meta,
    table5_registry,
)

__all__ = [
    "DATA_DIR_ENV",
    "ContaminatedSplit",
    "Dataset",
    "DatasetError",
    "DatasetMeta",
    "ManifoldConfig",
    "ScalerParams",
    "dataset_paths",
    "fit_scaler",
    "load_csv_dataset",
    "load_named_dataset",
    "make_blob_dataset",
    "make_contaminated_split",
    "make_manifold_dataset",
    "make_synthetic_split",
    "n_injected_for",
    "preprocess",
    "resolve_meta",
    "synth_labeled_scores",
    "table5_registry",
]
