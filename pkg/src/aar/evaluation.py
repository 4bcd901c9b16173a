"""AUROC, seeded experiment runs, and cross-dataset aggregation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from aar.data import (
    ManifoldConfig,
    load_named_dataset,
    make_blob_dataset,
    make_contaminated_split,
    make_synthetic_split,
)
from aar.errors import InvalidInput
from aar.gmm import GmmConfig
from aar.nn import ModelSpec, TrainConfig, score_matrix, train
from aar.policy import Method, RejectionPolicy
from aar.score_stats import ScoreBatch

logger = logging.getLogger(__name__)

METHODS = ("aar", "mz", "quantile", "iqr", "huber", "mse")
DEFAULT_HIDDEN = (32, 16, 8)
DEFAULT_BATCH = 128
TRACE_KEYS = ("loss", "hard_rejected", "soft_rejected", "gmm_fallbacks", "tau_n", "tau_i", "tau_sigma", "tau")


def auroc(batch: ScoreBatch) -> float:
    """Mann-Whitney AUROC: P(anomaly score > normal score) + 0.5 P(tie).

    Mid-ranks make the tie credit exact; cost is one sort.
    """
    if batch.labels is None:
        raise InvalidInput("AUROC needs labels")
    y = batch.labels
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInput("AUROC needs both classes")
    ranks = rankdata(batch.scores, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One dataset x model x method x contamination level, over several seeds.

    ``dataset`` is a CSV dataset name resolved under ``data_dir``, or one of
    ``synthetic:manifold`` / ``synthetic:blob`` parameterized by ``synthetic``.
    ``hidden`` and ``batch_size`` default to the dataset's registry metadata.
    """

    dataset: str
    method: str = "aar"
    gamma0: float = 0.2
    seeds: tuple[int, ...] = (0, 1, 2)
    model: str = "autoencoder"
    hidden: Optional[tuple[int, ...]] = None
    batch_norm: bool = True
    epochs: int = 100
    batch_size: Optional[int] = None
    lr: float = 1e-4
    weight_decay: float = 1e-6
    warmup_epochs: int = 15
    z: float = 2.5
    soft_weight: float = 0.1
    gamma: Optional[float] = None
    huber_delta: float = 1.0
    dsvdd_pretrain_epochs: int = 0
    noise: str = "gaussian_from_test_anomalies"
    data_dir: Optional[str] = None
    synthetic: Optional[dict] = None
    allow_failed_seeds: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.hidden is not None:
            object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.seeds:
            raise InvalidInput("at least one seed is required")
        if self.epochs < 1:
            raise InvalidInput("epochs must be >= 1")
        if self.method not in METHODS:
            raise InvalidInput(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "quantile" and (self.gamma is None or not 0.0 <= self.gamma <= 1.0):
            raise InvalidInput("method 'quantile' needs gamma in [0, 1]")
        if not 0.0 <= self.gamma0 < 0.5:
            raise InvalidInput("gamma0 must lie in [0, 0.5)")

    @property
    def method_key(self) -> str:
        return f"quantile@{self.gamma:g}" if self.method == "quantile" else self.method

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["hidden"] = None if self.hidden is None else list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    def policy(self) -> RejectionPolicy:
        method = {
            "aar": Method.AAR,
            "mz": Method.MZ,
            "quantile": Method.QUANTILE,
            "iqr": Method.IQR,
            "huber": Method.NONE,
            "mse": Method.NONE,
        }[self.method]
        return RejectionPolicy(
            method=method,
            warmup_epochs=self.warmup_epochs,
            z=self.z,
            soft_weight=self.soft_weight,
            gamma=self.gamma,
            gmm=GmmConfig(),
        )


# ---------------------------------------------------------------- reports


@dataclass
class SeedResult:
    seed: int
    auroc: Optional[float]
    status: str = "ok"
    error: Optional[str] = None
    history_digest: Optional[str] = None
    final_loss: Optional[float] = None
    final_hard_rejected: Optional[int] = None
    final_soft_rejected: Optional[int] = None
    gmm_fallbacks: Optional[int] = None
    train_rows: Optional[int] = None
    injected_rows: Optional[int] = None
    final_injected_hard_rejected: Optional[int] = None
    # per-epoch loss, rejection counts and threshold means; NaN stored as None
    trace: Optional[dict] = None


@dataclass
class RunReport:
    config: dict
    seeds: list[SeedResult]
    mean: float
    std: float
    timing: dict = field(default_factory=dict)

    @property
    def aurocs(self) -> list[float]:
        return [s.auroc for s in self.seeds if s.status == "ok"]

    def payload(self) -> dict:
        """Everything except wall-clock timing; reruns reproduce it exactly."""
        return {
            "config": self.config,
            "seeds": [asdict(s) for s in self.seeds],
            "mean": self.mean,
            "std": self.std,
        }

    def to_dict(self) -> dict:
        return {**self.payload(), "timing": self.timing}

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            config=d["config"],
            seeds=[SeedResult(**s) for s in d["seeds"]],
            mean=d["mean"],
            std=d["std"],
            timing=d.get("timing", {}),
        )


def _digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _split_for(cfg: ExperimentConfig, seed: int):
    if cfg.dataset == "synthetic:manifold":
        params = dict(cfg.synthetic or {})
        sizes = {k: params.pop(k) for k in ("n_train_normals", "n_test_normals", "n_test_anomalies") if k in params}
        return make_synthetic_split(ManifoldConfig(**params), cfg.gamma0, seed, **sizes), None
    if cfg.dataset == "synthetic:blob":
        ds = make_blob_dataset(**(cfg.synthetic or {}))
    else:
        ds = load_named_dataset(cfg.dataset, cfg.data_dir)
    return make_contaminated_split(ds, cfg.gamma0, seed, noise=cfg.noise), ds.meta


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    """Split, train, and score the test set for one seed."""
    split, meta = _split_for(cfg, seed)
    hidden = cfg.hidden or (meta.hidden if meta else DEFAULT_HIDDEN)
    batch_size = cfg.batch_size or (meta.batch_size if meta else DEFAULT_BATCH)
    n_train = split.train_features.shape[0]
    batch_size = min(batch_size, n_train)
    spec = ModelSpec(
        kind=cfg.model,
        input_dim=split.train_features.shape[1],
        layer_dims=hidden,
        batch_norm=cfg.batch_norm,
    )
    tcfg = TrainConfig(
        epochs=cfg.epochs,
        batch_size=batch_size,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        loss="huber" if cfg.method == "huber" else "sse",
        huber_delta=cfg.huber_delta,
        seed=seed,
        dsvdd_pretrain_epochs=cfg.dsvdd_pretrain_epochs,
    )
    model, history = train(spec, split.train_features, cfg.policy(), tcfg)
    scores = score_matrix(model, split.test_features, train=False)
    value = auroc(ScoreBatch(scores, split.test_labels))
    injected = split.train_is_injected_anomaly
    return SeedResult(
        seed=seed,
        auroc=value,
        history_digest=_digest(history.to_dict()),
        final_loss=history.loss[-1],
        final_hard_rejected=history.hard_rejected[-1],
        final_soft_rejected=history.soft_rejected[-1],
        gmm_fallbacks=int(sum(history.gmm_fallbacks)),
        train_rows=n_train,
        injected_rows=int(injected.sum()),
        final_injected_hard_rejected=int(np.count_nonzero(history.final_weights[injected] == 0.0)),
        trace={key: [nan_to_none(v) for v in getattr(history, key)] for key in TRACE_KEYS},
    )


def _run_seed_safe(cfg: ExperimentConfig, seed: int) -> SeedResult:
    try:
        return run_seed(cfg, seed)
    except Exception as exc:  # recorded per seed, surfaced by run_experiment
        logger.warning("seed %d failed: %s", seed, exc)
        return SeedResult(
            seed=seed,
            auroc=None,
            status="failed",
            error=f"{type(exc).__name__}: {exc}",
        )


class ExperimentFailed(RuntimeError):
    def __init__(self, report: RunReport):
        self.report = report
        failed = [s for s in report.seeds if s.status != "ok"]
        super().__init__("; ".join(f"seed {s.seed}: {s.error}" for s in failed))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> RunReport:
    """Run every seed and aggregate.

    A failed seed aborts with :class:`ExperimentFailed` (carrying the partial
    report) unless ``cfg.allow_failed_seeds`` is set, in which case the mean
    and std cover the successful seeds only.
    """
    start = time.perf_counter()
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_safe, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [_run_seed_safe(cfg, s) for s in cfg.seeds]
    ok = [r.auroc for r in results if r.status == "ok"]
    mean = float(np.mean(ok)) if ok else float("nan")
    std = float(np.std(ok)) if ok else float("nan")
    report = RunReport(
        config=cfg.to_dict(),
        seeds=results,
        mean=mean,
        std=std,
        timing={"wall_seconds": time.perf_counter() - start},
    )
    if len(ok) < len(results) and not (cfg.allow_failed_seeds and ok):
        raise ExperimentFailed(report)
    return report


# ---------------------------------------------------------------- aggregation


def _method_key(config: dict) -> str:
    if config["method"] == "quantile":
        return f"quantile@{config['gamma']:g}"
    return config["method"]


def aggregate(reports: Sequence[RunReport]) -> list[dict]:
    """Unweighted mean of per-dataset means, grouped by (model, method, gamma0).

    When a (model, method) pair has both gamma0 = 0 and gamma0 = 0.2 for the
    same datasets, an extra ``gamma0 = "avg"`` row averages the two, the
    stability/robustness balance.

    Raises:
        InvalidInput: no reports, or one dataset appears twice in a group.
    """
    if not reports:
        raise InvalidInput("nothing to aggregate")
    groups: dict[tuple, dict[str, float]] = {}
    for rep in reports:
        c = rep.config
        key = (c["model"], _method_key(c), float(c["gamma0"]))
        per_ds = groups.setdefault(key, {})
        if c["dataset"] in per_ds:
            raise InvalidInput(f"dataset {c['dataset']!r} appears twice for {key}")
        per_ds[c["dataset"]] = rep.mean

    rows = []
    for (model, method, gamma0), per_ds in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        rows.append(
            {
                "model": model,
                "method": method,
                "gamma0": gamma0,
                "n_datasets": len(per_ds),
                "mean_auroc": float(np.mean(list(per_ds.values()))),
                "datasets": ";".join(sorted(per_ds)),
            }
        )
    for (model, method, gamma0), clean in list(groups.items()):
        if gamma0 != 0.0:
            continue
        dirty = groups.get((model, method, 0.2))
        if not dirty or set(dirty) != set(clean):
            continue
        rows.append(
            {
                "model": model,
                "method": method,
                "gamma0": "avg",
                "n_datasets": len(clean),
                "mean_auroc": float(np.mean([(clean[d] + dirty[d]) / 2.0 for d in clean])),
                "datasets": ";".join(sorted(clean)),
            }
        )
    return rows


def write_summary_csv(rows: Sequence[dict], path) -> None:
    rows = list(rows)
    if not rows:
        raise InvalidInput("no rows to write")
    columns = list(rows[0].keys())
    for r in rows[1:]:
        columns.extend(k for k in r if k not in columns)
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def summary_row(report: RunReport) -> dict:
    c = report.config
    return {
        "dataset": c["dataset"],
        "model": c["model"],
        "method": _method_key(c),
        "gamma0": c["gamma0"],
        "n_seeds": len(report.aurocs),
        "mean_auroc": report.mean,
        "std_auroc": report.std,
    }


def nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x
