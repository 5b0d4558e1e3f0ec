import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mspl.cluster_metrics import cluster_prf
from mspl.clustering import agglomerate_complete, cut_by_threshold, euclidean_matrix
from mspl.harness import ExperimentConfig, emit_report, run_experiment
from mspl.harness.experiment import (
    aggregate_ci,
    derived_seed,
    plan_jobs,
    split_folds,
    trial_seed,
    tune_threshold,
    tuning_hash,
)
from mspl.harness.report import table_rows
from mspl.synth_ts import SynthConfig, build_dataset

FOLD_FILES = ("model.ckpt", "clusters_num.csv", "embeddings.csv", "mds.csv", "species.csv", "metrics.json")
RUN_FILES = ("run_manifest.json", "table1.csv", "lift.csv", "mds.csv", "aggregate.json")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestFoldsAndSeeds:
    @given(n=st.integers(2, 200), k=st.integers(2, 10), seed=st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_partition(self, n, k, seed):
        if k > n:
            return
        folds = split_folds(n, k, seed)
        assert sorted(np.concatenate(folds).tolist()) == list(range(n))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_seeded(self):
        a, b = split_folds(50, 5, 3), split_folds(50, 5, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, split_folds(50, 5, 4)))

    @pytest.mark.parametrize("n, k", [(3, 4), (5, 0)])
    def test_invalid_split(self, n, k):
        with pytest.raises(ValueError):
            split_folds(n, k, 0)

    def test_seeds_shared_across_variants(self):
        jobs = plan_jobs(ExperimentConfig(n_trials=2, seed=10), 20)
        assert len(jobs) == 2 * 2 * 3
        by_fold = {}
        for j in jobs:
            by_fold.setdefault((j.trial, j.fold), set()).add((j.model_seed, j.shuffle_seed))
        assert all(len(s) == 1 for s in by_fold.values())
        assert jobs[0].model_seed == derived_seed(trial_seed(10, 0), 0, 0)
        assert trial_seed(10, 1) == 11


class TestTuneThreshold:
    def test_gap_recovers_ground_truth(self):
        # three tight blocks far apart
        rng = np.random.default_rng(0)
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        gt = np.repeat([0, 1, 2], 6)
        h = centers[gt] + rng.uniform(-0.5, 0.5, size=(18, 2))
        res = tune_threshold(h, gt, upper_bound=20.0)
        assert res.f1 == 1.0
        within = max(euclidean_matrix(h[gt == c]).max() for c in range(3))
        assert within <= res.threshold < 9.0
        assert cluster_prf(cut_by_threshold(agglomerate_complete(euclidean_matrix(h)), res.threshold), gt)[2] == 1.0

    def test_bound_below_first_merge(self):
        h = np.array([[0.0], [5.0], [10.0], [15.0]])
        res = tune_threshold(h, [0, 0, 1, 1], upper_bound=1.0)
        assert res.threshold == 1.0 and res.n_candidates == 1
        assert res.f1 == pytest.approx(cluster_prf([0, 1, 2, 3], [0, 0, 1, 1])[2])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_grid(self, seed):
        rng = np.random.default_rng(seed)
        h = rng.normal(size=(24, 3))
        gt = rng.integers(0, 5, 24)
        bound = 3.0
        res = tune_threshold(h, gt, bound)
        keep = np.bincount(gt)[gt] >= 2
        dend = agglomerate_complete(euclidean_matrix(h[keep]))
        grid = np.linspace(bound / 10_000, bound, 10_000)
        best = max(cluster_prf(cut_by_threshold(dend, t), gt[keep], filter_singletons=False)[2] for t in grid)
        assert res.f1 == pytest.approx(best, abs=1e-12)

    def test_ties_take_smallest(self):
        # every cut at or above the first merge gives the same perfect partition
        h = np.array([[0.0], [1.0], [10.0], [11.0]])
        res = tune_threshold(h, [0, 0, 1, 1], upper_bound=5.0)
        assert res.threshold == 1.0

    def test_hash_is_of_training_inputs(self):
        h = np.arange(8.0).reshape(4, 2)
        res = tune_threshold(h, [0, 0, 1, 1], 3.0)
        assert res.input_hash == tuning_hash(h, np.array([0, 0, 1, 1]))

    def test_no_pairs(self):
        assert tune_threshold(np.zeros((3, 2)), [0, 1, 2], 4.0).threshold == 4.0

    def test_bound_positive(self):
        with pytest.raises(ValueError):
            tune_threshold(np.zeros((2, 1)), [0, 0], 0.0)


class TestAggregateCI:
    def test_hand_case(self):
        mean, half = aggregate_ci([1, 2, 3, 4, 5])
        assert mean == 3.0
        assert half == pytest.approx(2.776 * math.sqrt(2.5) / math.sqrt(5), abs=1e-3)

    def test_constant(self):
        assert aggregate_ci([0.4] * 4) == (pytest.approx(0.4), 0.0)

    def test_single_value(self):
        assert aggregate_ci([0.7]) == (0.7, None)
        assert aggregate_ci([None, 0.7]) == (0.7, None)
        assert aggregate_ci([]) == (None, None)

    @given(vals=st.lists(st.floats(-10, 10), min_size=2, max_size=8), c=st.floats(-100, 100))
    def test_shift(self, vals, c):
        m0, h0 = aggregate_ci(vals)
        m1, h1 = aggregate_ci([v + c for v in vals])
        assert m1 == pytest.approx(m0 + c, abs=1e-9)
        assert h1 == pytest.approx(h0, abs=1e-6)


@pytest.fixture(scope="module")
def tiny_data():
    return build_dataset(SynthConfig(m=2, n=4, seed=1))


@pytest.fixture(scope="module")
def smoke_run(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = ExperimentConfig(epochs=1, n_trials=2, seed=3)
    return run_experiment(cfg, tiny_data, out), out


class TestSmokeRun:
    def test_artifacts(self, smoke_run):
        result, out = smoke_run
        assert not result.errors
        for name in RUN_FILES:
            assert (out / name).is_file(), name
        for t in range(2):
            for f in range(2):
                for v in ("mspl", "onlycls"):
                    for name in FOLD_FILES:
                        assert (out / f"trial{t}" / f"fold{f}" / v / name).is_file()
                assert (out / f"trial{t}" / f"fold{f}" / "cluscls" / "clusters_argmax.csv").is_file()

    def test_manifest_seeds(self, smoke_run):
        _, out = smoke_run
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["config"]["seed"] == 3 and len(manifest["seeds"]) == 12
        assert {s["split_seed"] for s in manifest["seeds"]} == {3, 4}

    def test_num_scheme_matches_gt_count(self, smoke_run):
        _, out = smoke_run
        for p in out.glob("trial*/fold*/mspl/metrics.json"):
            m = json.loads(p.read_text())["metrics"]["num"]
            assert m["n_predicted_clusters"] == m["n_gt_clusters"]

    def test_per_trial_is_fold_average(self, smoke_run):
        result, out = smoke_run
        for t in range(2):
            vals = [json.loads((out / f"trial{t}" / f"fold{f}" / "mspl" / "metrics.json").read_text())
                    ["metrics"]["num"]["f1"] for f in range(2)]
            assert result.per_trial("mspl", "num", "f1")[t] == pytest.approx(np.mean(vals), abs=1e-15)

    def test_table_rows(self, smoke_run):
        _, out = smoke_run
        rows = read_csv(out / "table1.csv")
        assert [r["model"] for r in rows] == ["MSPL_num", "onlyCLS_num", "clusCLS"]
        for r in rows:
            p, rc, f1 = float(r["precision"]), float(r["recall"]), float(r["f1"])
            assert f1 == pytest.approx(2 * p * rc / (p + rc), abs=1e-12)

    def test_lift_is_hand_division(self, smoke_run):
        _, out = smoke_run

        def species_f1(variant, column):
            per_trial = {}
            for t in range(2):
                vals = {}
                for f in range(2):
                    for row in read_csv(out / f"trial{t}" / f"fold{f}" / variant / "species.csv"):
                        if row[column]:
                            vals.setdefault(row["species"], []).append(float(row[column]))
                for s, v in vals.items():
                    per_trial.setdefault(s, []).append(np.mean(v))
            return {s: np.mean(v) for s, v in per_trial.items()}

        mspl, only, clus = species_f1("mspl", "f1_num"), species_f1("onlycls", "f1_num"), species_f1("cluscls", "f1_argmax")
        rows = read_csv(out / "lift.csv")
        assert [r["species"] for r in rows] == ["sine", "triangle"]
        for r in rows:
            s = r["species"]
            assert int(r["n_samples"]) == 16
            if r["lift_vs_onlycls"]:
                assert float(r["lift_vs_onlycls"]) == pytest.approx(mspl[s] / only[s], rel=1e-12)
            if r["lift_vs_cluscls"]:
                assert float(r["lift_vs_cluscls"]) == pytest.approx(mspl[s] / clus[s], rel=1e-12)

    def test_report_idempotent(self, smoke_run):
        _, out = smoke_run
        before = {n: (out / n).read_bytes() for n in RUN_FILES if n != "run_manifest.json"}
        emit_report(out)
        assert before == {n: (out / n).read_bytes() for n in before}

    def test_rerun_is_byte_identical(self, smoke_run, tiny_data, tmp_path):
        _, out = smoke_run
        run_experiment(ExperimentConfig(epochs=1, n_trials=2, seed=3), tiny_data, tmp_path)
        for name in ("table1.csv", "lift.csv", "trial1/fold0/mspl/embeddings.csv", "trial0/fold1/onlycls/model.ckpt"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


class TestEquivalence:
    def test_zero_struct_weight_matches_onlycls(self, tiny_data):
        cfg_a = ExperimentConfig(epochs=2, n_trials=1, variants=["mspl"], model={"lambda_struct": 0.0}, mds=False)
        cfg_b = ExperimentConfig(epochs=2, n_trials=1, variants=["onlycls"], mds=False)
        a = run_experiment(cfg_a, tiny_data)
        b = run_experiment(cfg_b, tiny_data)
        for fa, fb in zip(a.folds, b.folds):
            assert fa.metrics == fb.metrics
            assert fa.predictions == fb.predictions
            assert fa.pretext_accuracy == fb.pretext_accuracy


class TestFailures:
    def test_failed_fold_voids_trial(self, tiny_data, tmp_path):
        bad = build_dataset(SynthConfig(m=2, n=4, seed=1))
        bad.x[:] = np.inf
        result = run_experiment(ExperimentConfig(epochs=1, n_trials=1, variants=["onlycls"], mds=False), bad, tmp_path)
        assert result.folds == [] and result.errors
        err = json.loads((tmp_path / "trial0" / "error.json").read_text())
        assert err[0]["type"] == "NumericalError" and err[0]["exit_code"] == 3

    def test_thr_needs_bound_for_synth(self, tiny_data):
        with pytest.raises(ValueError, match="upper bound"):
            run_experiment(ExperimentConfig(epochs=0, n_trials=1, schemes=["thr"]), tiny_data)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(k_folds=1)
        with pytest.raises(ValueError):
            ExperimentConfig(variants=["nope"])


def test_table_single_variant_one_row_per_scheme():
    agg = {"results": {"mspl/thr": {}, "mspl/num": {}}}
    for entry in agg["results"].values():
        for m in ("ari", "nmi", "precision", "recall", "f1", "pretext_accuracy"):
            entry[m] = {"mean": 0.5, "half_width": None}
    assert [r["model"] for r in table_rows(agg)] == ["MSPL_thr", "MSPL_num"]
