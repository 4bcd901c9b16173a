"""CSV datasets, scaling, and contaminated train/test splits."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from aar.errors import InvalidInput

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "AAR_DATA_DIR"
NOISE_MODES = ("none", "gaussian_from_test_anomalies")


class DatasetError(InvalidInput):
    """A dataset file is missing or malformed.

    ``problems`` lists ``(line_number, message)`` pairs for row-level errors.
    """

    def __init__(self, message: str, path=None, problems: Sequence[tuple[int, str]] = ()):
        self.path = None if path is None else str(path)
        self.problems = list(problems)
        if self.problems:
            shown = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems[:10])
            more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)


@dataclass(frozen=True)
class DatasetMeta:
    batch_size: int
    hidden: tuple[int, ...]
    n: Optional[int] = None
    d: Optional[int] = None
    outliers: Optional[int] = None


@dataclass
class Dataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    meta: Optional[DatasetMeta] = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64).ravel()
        if self.features.ndim != 2 or self.features.shape[0] == 0 or self.features.shape[1] == 0:
            raise InvalidInput("features must be a nonempty n x d matrix")
        if self.labels.shape[0] != self.features.shape[0]:
            raise InvalidInput("labels and features disagree on n")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInput("features contain non-finite values")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise InvalidInput("labels must be 0 or 1")

    @property
    def n_anomalies(self) -> int:
        return int(self.labels.sum())


# ---------------------------------------------------------------- metadata registry


def table5_registry() -> dict[str, DatasetMeta]:
    """Bundled per-dataset batch sizes and hidden widths, keyed by dataset name."""
    text = resources.files("aar.data").joinpath("table5.json").read_text()
    raw = json.loads(text)["datasets"]
    return {
        name: DatasetMeta(
            batch_size=v["batch_size"], hidden=tuple(v["hidden"]), n=v["n"], d=v["d"], outliers=v["outliers"]
        )
        for name, v in raw.items()
    }


def resolve_meta(name: Optional[str], n: int, d: int, n_anomalies: int) -> Optional[DatasetMeta]:
    """Look up metadata by name, else by an exact (n, d, outlier count) match."""
    registry = table5_registry()
    if name:
        key = name.lower()
        if key in registry:
            return registry[key]
    for meta in registry.values():
        if (meta.n, meta.d, meta.outliers) == (n, d, n_anomalies):
            return meta
    return None


# ---------------------------------------------------------------- CSV ingestion


def _load_schema(schema) -> dict:
    if isinstance(schema, dict):
        return dict(schema)
    path = Path(schema)
    if not path.exists():
        raise DatasetError(f"schema file not found: {path}", path=path)
    return json.loads(path.read_text())


def _label_matches(value: str, target) -> bool:
    if target is None:
        return False
    target = str(target).strip()
    if value == target:
        return True
    try:
        return float(value) == float(target)
    except ValueError:
        return False


def load_csv_dataset(path, schema) -> Dataset:
    """Parse a CSV with a header row into a :class:`Dataset`.

    ``schema`` (dict or path to JSON) names the ``label_column`` and the
    ``anomaly_value``; when ``normal_value`` is also given, any other label
    is an error. Optional keys: ``name``, ``drop_columns``.

    Raises:
        DatasetError: missing file, malformed or non-finite rows, unknown labels.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}", path=path)
    spec = _load_schema(schema)
    if "label_column" not in spec or "anomaly_value" not in spec:
        raise DatasetError("schema must define label_column and anomaly_value", path=path)
    label_col = spec["label_column"]
    drop = set(spec.get("drop_columns", ()))
    anomaly_value, normal_value = spec["anomaly_value"], spec.get("normal_value")

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError("empty dataset file", path=path) from None
        if label_col not in header:
            raise DatasetError(f"label column {label_col!r} not in header", path=path)
        label_idx = header.index(label_col)
        feat_idx = [i for i, h in enumerate(header) if i != label_idx and h not in drop]
        rows, labels, problems = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                problems.append((line_no, f"expected {len(header)} fields, got {len(row)}"))
                continue
            raw_label = row[label_idx].strip()
            if _label_matches(raw_label, anomaly_value):
                label = 1
            elif normal_value is None or _label_matches(raw_label, normal_value):
                label = 0
            else:
                problems.append((line_no, f"unknown label value {raw_label!r}"))
                continue
            try:
                values = [float(row[i]) for i in feat_idx]
            except ValueError as exc:
                problems.append((line_no, f"non-numeric feature ({exc})"))
                continue
            bad = [header[i] for i, v in zip(feat_idx, values) if not math.isfinite(v)]
            if bad:
                problems.append((line_no, f"non-finite value in {', '.join(bad)}"))
                continue
            rows.append(values)
            labels.append(label)
    if problems:
        raise DatasetError(f"{path}: {len(problems)} invalid row(s)", path=path, problems=problems)
    if not rows:
        raise DatasetError("dataset has no rows", path=path)
    features = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    name = spec.get("name") or path.stem
    meta = resolve_meta(name, features.shape[0], features.shape[1], int(y.sum()))
    return Dataset(name=name, features=features, labels=y, meta=meta)


def dataset_paths(name: str, data_dir=None) -> tuple[Path, Path]:
    """``<dir>/<name>.csv`` and ``<dir>/<name>.schema.json``; ``dir`` defaults to ``$AAR_DATA_DIR``."""
    base = data_dir or os.environ.get(DATA_DIR_ENV) or "datasets"
    base = Path(base)
    return base / f"{name}.csv", base / f"{name}.schema.json"


def load_named_dataset(name: str, data_dir=None) -> Dataset:
    csv_path, schema_path = dataset_paths(name, data_dir)
    if not csv_path.exists():
        raise DatasetError(f"dataset file not found: {csv_path}", path=csv_path)
    schema = _load_schema(schema_path) if schema_path.exists() else {"label_column": "label", "anomaly_value": 1}
    schema.setdefault("name", name)
    return load_csv_dataset(csv_path, schema)


# ---------------------------------------------------------------- preprocessing


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature standardization followed by min-max scaling, both fitted on train."""

    mean: np.ndarray
    std: np.ndarray
    zmin: np.ndarray
    zmax: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.std == 0

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        const = self.constant
        safe_std = np.where(const, 1.0, self.std)
        z = (X - self.mean) / safe_std
        span = self.zmax - self.zmin
        safe_span = np.where(span == 0, 1.0, span)
        out = (z - self.zmin) / safe_span
        out[:, const | (span == 0)] = 0.5
        return out

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("mean", "std", "zmin", "zmax")}


def fit_scaler(train: np.ndarray) -> ScalerParams:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise InvalidInput("cannot fit a scaler on an empty matrix")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    z = (train - mean) / np.where(std == 0, 1.0, std)
    return ScalerParams(mean=mean, std=std, zmin=z.min(axis=0), zmax=z.max(axis=0))


def preprocess(train: np.ndarray, others: Sequence[np.ndarray] = ()):
    """Scale ``train`` and ``others`` with statistics of ``train`` only.

    Values of ``others`` outside the train range are left unclamped.
    Returns ``(train_scaled, [others_scaled...], params)``.
    """
    params = fit_scaler(train)
    return params.transform(train), [params.transform(o) for o in others], params


# ---------------------------------------------------------------- contaminated splits


@dataclass
class ContaminatedSplit:
    train_features: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    train_is_injected_anomaly: np.ndarray
    gamma0: float
    seed: int
    scaler: Optional[ScalerParams] = None
    meta: dict = field(default_factory=dict)
    # dataset row behind each train/test row; -1 marks an injected row
    train_source: Optional[np.ndarray] = None
    test_source: Optional[np.ndarray] = None

    @property
    def n_injected(self) -> int:
        return int(self.train_is_injected_anomaly.sum())

    @property
    def contamination(self) -> float:
        return self.n_injected / self.train_features.shape[0]


def n_injected_for(gamma0: float, n_train_normals: int) -> int:
    """``floor(gamma0 / (1 - gamma0) * N)``, robust to rounding just below an integer."""
    return int(math.floor(gamma0 / (1.0 - gamma0) * n_train_normals + 1e-9))


def make_contaminated_split(
    ds: Dataset,
    gamma0: float,
    seed: int,
    noise: str = "gaussian_from_test_anomalies",
    scale: bool = True,
) -> ContaminatedSplit:
    """Half the normals train, the rest plus every true anomaly test.

    The train set is contaminated with ``floor(gamma0/(1-gamma0) * N_train)``
    rows built from test anomalies (sampled with replacement only when more
    are needed than exist), plus zero-mean Gaussian noise whose per-feature
    std is that of the test anomalies. Injection happens in raw feature
    space; the scaler is then fitted on the contaminated train set.
    """
    if not 0.0 <= gamma0 < 0.5:
        raise InvalidInput(f"gamma0 must lie in [0, 0.5), got {gamma0}")
    if noise not in NOISE_MODES:
        raise InvalidInput(f"unknown noise mode {noise!r}")
    rng = np.random.default_rng(seed)
    normals = np.flatnonzero(ds.labels == 0)
    anomalies = np.flatnonzero(ds.labels == 1)
    if normals.size < 2:
        raise InvalidInput("need at least two normal samples")
    n_train = normals.size // 2
    k = n_injected_for(gamma0, n_train)
    if k > 0 and anomalies.size == 0:
        raise InvalidInput("contamination requested but the dataset has no anomalies")

    perm = rng.permutation(normals)
    train_idx, test_norm_idx = perm[:n_train], perm[n_train:]
    test_anom = ds.features[anomalies]
    injected = np.empty((0, ds.features.shape[1]))
    if k > 0:
        pick = rng.choice(anomalies.size, size=k, replace=k > anomalies.size)
        injected = test_anom[pick].copy()
        if noise == "gaussian_from_test_anomalies":
            sd = test_anom.std(axis=0)
            injected += rng.normal(size=injected.shape) * sd

    train_raw = np.vstack([ds.features[train_idx], injected])
    mask = np.concatenate([np.zeros(n_train, dtype=bool), np.ones(k, dtype=bool)])
    source = np.concatenate([train_idx, np.full(k, -1)])
    order = rng.permutation(train_raw.shape[0])
    train_raw, mask, source = train_raw[order], mask[order], source[order]

    test_idx = np.concatenate([test_norm_idx, anomalies])
    test_raw, test_labels = ds.features[test_idx], ds.labels[test_idx]

    scaler = None
    train_x, test_x = train_raw, test_raw
    if scale:
        train_x, (test_x,), scaler = preprocess(train_raw, [test_raw])
    return ContaminatedSplit(
        train_features=train_x,
        test_features=test_x,
        test_labels=test_labels,
        train_is_injected_anomaly=mask,
        gamma0=gamma0,
        seed=seed,
        scaler=scaler,
        meta={
            "dataset": ds.name,
            "injection": "with replacement" if k > anomalies.size else "without replacement",
            "noise": noise,
            "noise_space": "raw features, before scaling",
        },
        train_source=source,
        test_source=test_idx,
    )
