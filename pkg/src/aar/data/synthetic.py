"""Synthetic generators for theory checks and smoke experiments."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from aar.data.tabular import ContaminatedSplit, Dataset, n_injected_for, preprocess
from aar.errors import InvalidInput
from aar.score_stats import ScoreBatch
from aar.theory import MixtureSpec


def _draw_component(rng: np.random.Generator, mu: float, sd: float, n: int, truncate: bool) -> np.ndarray:
    if not truncate:
        return rng.normal(mu, sd, size=n)
    out = np.empty(0)
    while out.size < n:
        draw = rng.normal(mu, sd, size=2 * (n - out.size) + 16)
        out = np.concatenate([out, draw[draw >= 0]])
    return out[:n]


def synth_labeled_scores(mix: MixtureSpec, n: int, seed: int, clip: bool = True) -> ScoreBatch:
    """``n`` scores from the mixture; label 1 (probability ``1 - alpha``) marks the anomaly component.

    Truncated mixtures are sampled exactly; otherwise negative draws are
    clipped to 0 when ``clip`` is set.
    """
    if n < 2:
        raise InvalidInput("need at least 2 samples")
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) >= mix.alpha).astype(np.int64)
    n_anom = int(labels.sum())
    scores = np.empty(n)
    scores[labels == 0] = _draw_component(rng, *mix.normal, n - n_anom, mix.truncate)
    scores[labels == 1] = _draw_component(rng, *mix.abnormal, n_anom, mix.truncate)
    if clip:
        scores = np.maximum(scores, 0.0)
    return ScoreBatch(scores, labels)


def make_blob_dataset(
    n_normal: int = 400,
    n_anomaly: int = 40,
    dim: int = 2,
    shift: float = 6.0,
    seed: int = 0,
    name: str = "blob",
) -> Dataset:
    """Standard-normal blob with anomalies displaced by ``shift`` along random directions."""
    rng = np.random.default_rng(seed)
    normals = rng.normal(size=(n_normal, dim))
    directions = rng.normal(size=(n_anomaly, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    anomalies = rng.normal(size=(n_anomaly, dim)) + shift * directions
    X = np.vstack([normals, anomalies])
    y = np.concatenate([np.zeros(n_normal, dtype=np.int64), np.ones(n_anomaly, dtype=np.int64)])
    return Dataset(name=name, features=X, labels=y)


@dataclass(frozen=True)
class ManifoldConfig:
    """Normals near a random ``latent_dim``-dimensional subspace of ``R^dim``.

    Anomalies share the normal on-subspace distribution but are displaced
    along one fixed off-subspace direction by ``N(shift_mean, shift_std)``,
    so they form a single learnable mode; small displacements overlap the
    normals. ``structure_seed`` fixes the geometry so every draw shares it.
    """

    dim: int = 16
    latent_dim: int = 3
    noise: float = 0.1
    shift_mean: float = 2.0
    shift_std: float = 1.0
    structure_seed: int = 12345

    def geometry(self) -> tuple[np.ndarray, np.ndarray]:
        if not 0 < self.latent_dim < self.dim:
            raise InvalidInput("latent_dim must lie in (0, dim)")
        if self.noise < 0 or self.shift_std < 0:
            raise InvalidInput("noise and shift_std must be >= 0")
        rng = np.random.default_rng(self.structure_seed)
        q, _ = np.linalg.qr(rng.normal(size=(self.dim, self.dim)))
        return q[:, : self.latent_dim].T, q[:, self.latent_dim]

    def sample(self, n_normal: int, n_anomaly: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        basis, off = self.geometry()
        n = n_normal + n_anomaly
        X = rng.normal(size=(n, self.latent_dim)) @ basis + self.noise * rng.normal(size=(n, self.dim))
        if n_anomaly:
            r = rng.normal(self.shift_mean, self.shift_std, size=(n_anomaly, 1))
            X[n_normal:] += r * off
        y = np.concatenate([np.zeros(n_normal, dtype=np.int64), np.ones(n_anomaly, dtype=np.int64)])
        return X, y

    def to_dict(self) -> dict:
        return asdict(self)


def make_manifold_dataset(cfg: ManifoldConfig, n_normal: int, n_anomaly: int, seed: int, name: str = "manifold") -> Dataset:
    X, y = cfg.sample(n_normal, n_anomaly, np.random.default_rng(seed))
    return Dataset(name=name, features=X, labels=y)


def make_synthetic_split(
    cfg: ManifoldConfig,
    gamma0: float,
    seed: int,
    n_train_normals: int = 1000,
    n_test_normals: int = 1000,
    n_test_anomalies: int = 200,
) -> ContaminatedSplit:
    """Contaminated split with train anomalies drawn fresh from the generator.

    Unlike :func:`make_contaminated_split`, no test row leaks into training.
    """
    if not 0.0 <= gamma0 < 0.5:
        raise InvalidInput(f"gamma0 must lie in [0, 0.5), got {gamma0}")
    rng = np.random.default_rng(seed)
    k = n_injected_for(gamma0, n_train_normals)
    train_x, train_y = cfg.sample(n_train_normals, k, rng)
    order = rng.permutation(train_x.shape[0])
    train_x, train_y = train_x[order], train_y[order]
    test_x, test_y = cfg.sample(n_test_normals, n_test_anomalies, rng)
    train_s, (test_s,), scaler = preprocess(train_x, [test_x])
    return ContaminatedSplit(
        train_features=train_s,
        test_features=test_s,
        test_labels=test_y,
        train_is_injected_anomaly=train_y.astype(bool),
        gamma0=gamma0,
        seed=seed,
        scaler=scaler,
        meta={"dataset": "synthetic-manifold", "generator": cfg.to_dict()},
    )
