import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aar.errors import InvalidInput
from aar.evaluation import (
    ExperimentConfig,
    ExperimentFailed,
    RunReport,
    SeedResult,
    aggregate,
    auroc,
    run_experiment,
    summary_row,
    write_summary_csv,
)
from aar.score_stats import ScoreBatch

BLOB = {"n_normal": 200, "n_anomaly": 20, "dim": 4, "shift": 6.0}


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def blob_cfg(**kw):
    base = dict(dataset="synthetic:blob", synthetic=BLOB, method="mse", gamma0=0.0, seeds=(0,), epochs=30,
                lr=1e-2, hidden=(8, 4), batch_size=32)
    return ExperimentConfig(**{**base, **kw})


def fake_report(dataset, method, gamma0, mean, model="autoencoder"):
    cfg = ExperimentConfig(dataset=dataset, method=method, gamma0=gamma0, model=model,
                           gamma=0.1 if method == "quantile" else None)
    return RunReport(config=cfg.to_dict(), seeds=[SeedResult(seed=0, auroc=mean)], mean=mean, std=0.0)


class TestAuroc:
    @pytest.mark.parametrize(
        "scores,labels,expected",
        [([0.1, 0.2, 0.9], [0, 0, 1], 1.0), ([0.9, 0.2, 0.1], [0, 0, 1], 0.0), ([0.5, 0.5], [0, 1], 0.5)],
    )
    def test_examples(self, scores, labels, expected):
        assert auroc(ScoreBatch(scores, labels)) == expected

    def test_single_class(self):
        with pytest.raises(InvalidInput):
            auroc(ScoreBatch([1.0, 2.0], [0, 0]))
        with pytest.raises(InvalidInput):
            auroc(ScoreBatch([1.0, 2.0]))

    def test_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 300))
            # coarse rounding forces ties
            s = np.round(rng.exponential(size=n), int(rng.integers(0, 3)))
            y = rng.integers(0, 2, size=n)
            y[0], y[1] = 0, 1
            assert auroc(ScoreBatch(s, y)) == pytest.approx(pairwise_auroc(s, y), abs=1e-12)

    # integer-valued scores keep the transforms strictly increasing in float64
    @given(st.lists(st.tuples(st.integers(0, 500), st.booleans()), min_size=2, max_size=50))
    @settings(max_examples=200)
    def test_monotone_invariance(self, rows):
        s, y = map(np.array, zip(*rows))
        s = s.astype(float)
        y = y.astype(int)
        if y.min() == y.max():
            return
        base = auroc(ScoreBatch(s, y))
        assert auroc(ScoreBatch(np.sqrt(s) * 3 + 1, y)) == pytest.approx(base, abs=1e-12)
        assert auroc(ScoreBatch(np.exp(s / 10), y)) == pytest.approx(base, abs=1e-12)


class TestConfig:
    def test_validation(self):
        with pytest.raises(InvalidInput):
            ExperimentConfig(dataset="x", seeds=())
        with pytest.raises(InvalidInput):
            ExperimentConfig(dataset="x", method="loe")
        with pytest.raises(InvalidInput):
            ExperimentConfig(dataset="x", method="quantile")
        with pytest.raises(InvalidInput):
            ExperimentConfig(dataset="x", epochs=0)

    def test_roundtrip_and_replace(self):
        cfg = ExperimentConfig(dataset="wine", hidden=(4, 2))
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
        changed = cfg.replace(gamma0=0.1, method="mz")
        diff = {k for k, v in changed.to_dict().items() if cfg.to_dict()[k] != v}
        assert diff == {"gamma0", "method"}
        with pytest.raises(InvalidInput):
            ExperimentConfig.from_dict({"dataset": "x", "colour": 1})

    def test_policy_mapping(self):
        assert ExperimentConfig(dataset="x", method="huber").policy().method.value == "none"
        pol = ExperimentConfig(dataset="x", method="quantile", gamma=0.3).policy()
        assert pol.gamma == 0.3


class TestRunExperiment:
    def test_smoke_auroc(self):
        rep = run_experiment(blob_cfg())
        assert rep.mean > 0.9
        assert rep.seeds[0].trace["loss"][-1] == rep.seeds[0].final_loss

    def test_determinism(self):
        cfg = blob_cfg(method="aar", gamma0=0.1, seeds=(0, 1), epochs=20, warmup_epochs=5)
        a, b = run_experiment(cfg), run_experiment(cfg)
        assert a.payload() == b.payload()

    def test_parallel_matches_sequential(self):
        cfg = blob_cfg(seeds=(0, 1), epochs=5)
        assert run_experiment(cfg, jobs=2).payload() == run_experiment(cfg).payload()

    def test_mean_std_recomputable(self):
        rep = run_experiment(blob_cfg(seeds=(0, 1, 2), epochs=5))
        vals = np.array(rep.aurocs)
        assert rep.mean == pytest.approx(vals.mean(), abs=1e-12)
        assert rep.std == pytest.approx(vals.std(), abs=1e-12)
        assert RunReport.from_dict(rep.to_dict()).payload() == rep.payload()

    def test_huber_runs(self):
        assert run_experiment(blob_cfg(method="huber", epochs=5)).mean > 0.5

    def test_failed_seed_is_reported(self, tmp_path):
        cfg = ExperimentConfig(dataset="missing", data_dir=str(tmp_path), seeds=(0,))
        with pytest.raises(ExperimentFailed) as err:
            run_experiment(cfg)
        seed = err.value.report.seeds[0]
        assert seed.status == "failed" and "missing.csv" in seed.error

    def test_synthetic_manifold(self):
        cfg = ExperimentConfig(dataset="synthetic:manifold", method="mse", gamma0=0.1, seeds=(0,), epochs=2,
                               hidden=(8, 4), synthetic={"n_train_normals": 200, "n_test_normals": 100,
                                                         "n_test_anomalies": 20})
        seed = run_experiment(cfg).seeds[0]
        assert seed.train_rows == 222 and seed.injected_rows == 22


class TestAggregate:
    def test_single_report(self):
        rows = aggregate([fake_report("a", "aar", 0.2, 0.7)])
        assert len(rows) == 1 and rows[0]["mean_auroc"] == 0.7

    def test_unweighted_dataset_mean(self):
        rows = aggregate([fake_report("a", "aar", 0.2, 0.6), fake_report("b", "aar", 0.2, 0.9)])
        assert rows[0]["mean_auroc"] == pytest.approx(0.75) and rows[0]["n_datasets"] == 2

    def test_groups_and_avg_row(self):
        reps = [
            fake_report("a", "aar", 0.0, 0.9),
            fake_report("a", "aar", 0.2, 0.7),
            fake_report("a", "mz", 0.2, 0.6),
            fake_report("a", "quantile", 0.2, 0.5),
        ]
        rows = aggregate(reps)
        keyed = {(r["method"], r["gamma0"]): r["mean_auroc"] for r in rows}
        assert keyed[("aar", "avg")] == pytest.approx(0.8)
        assert keyed[("quantile@0.1", 0.2)] == 0.5
        assert ("mz", "avg") not in keyed

    def test_duplicate_dataset(self):
        with pytest.raises(InvalidInput):
            aggregate([fake_report("a", "aar", 0.2, 0.6), fake_report("a", "aar", 0.2, 0.7)])
        with pytest.raises(InvalidInput):
            aggregate([])

    def test_csv(self, tmp_path):
        rep = fake_report("a", "aar", 0.2, 0.6)
        path = tmp_path / "s.csv"
        write_summary_csv([summary_row(rep)], path)
        with path.open() as fh:
            row = next(csv.DictReader(fh))
        assert row["method"] == "aar" and float(row["mean_auroc"]) == 0.6
