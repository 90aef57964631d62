import csv
import io
import json

import numpy as np
import pytest

from puffprint import eval as ev
from puffprint.eval import (
    CSV_COLUMNS,
    DecoderSpec,
    GridConfig,
    SweepError,
    TrialReport,
    aggregate,
    ber,
    fer,
    run_sweep,
)
from puffprint.nn import TrainConfig
from puffprint.puf import PufKey

SMALL_DECODER = DecoderSpec(Q=100, hidden=(32, 32),
                            train=TrainConfig(learning_rate=3e-3, batch_size=128, max_epochs=8, early_stop_patience=3))


def report(trial, wrong1=False, wrong2=False, eps=0.05):
    return TrialReport(trial_id=trial, epsilon=eps, n=4, m=1, p_flip=0.0, leaker_index=0, leaker_id="a",
                       recovered_index=1 if wrong2 else 0, recovered_id="b" if wrong2 else "a",
                       bit_errors_stage1=1 if wrong1 else 0, bit_errors_stage2=2 if wrong2 else 0,
                       frame_error_stage1=wrong1, frame_error_stage2=wrong2)


class TestMetrics:
    def test_ber_examples(self):
        assert ber([1, 0, 1, 1], [1, 1, 1, 1]) == 0.25
        assert ber(PufKey([1, 0]), PufKey([1, 0])) == 0.0
        assert ber([0, 1, 0], [1, 0, 1]) == 1.0
        with pytest.raises(ValueError):
            ber([0, 1], [0, 1, 1])

    def test_fer_examples(self):
        reps = [report(0, True, True), report(1), report(2), report(3)]
        assert fer(reps, 2) == 0.25
        assert fer([report(0), report(1)], 1) == 0.0
        with pytest.raises(ValueError):
            fer([])
        with pytest.raises(ValueError):
            fer(reps, 3)

    def test_trial_report_invariants(self):
        with pytest.raises(ValueError):
            TrialReport(0, 0.05, 4, 1, 0.0, 0, "a", recovered_id="a", bit_errors_stage1=5,
                        frame_error_stage2=False)
        with pytest.raises(ValueError):
            TrialReport(0, 0.05, 4, 1, 0.0, 0, "a", recovered_id="b", frame_error_stage2=False)
        failed = TrialReport(0, 0.05, 4, 1, 0.0, 0, "a", status="failed", error="boom")
        assert not failed.ok

    def test_failed_trials_excluded_from_rates(self):
        failed = TrialReport(9, 0.05, 4, 1, 0.0, 0, "a", status="failed")
        assert fer([report(0), failed]) == 0.0
        (point,) = aggregate([report(0), failed])
        assert point["trials"] == 2 and point["completed"] == 1 and point["failed"] == 1


class TestGridConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            GridConfig(mode="fast")
        with pytest.raises(ValueError):
            GridConfig(epsilons=(0.0,))
        with pytest.raises(ValueError):
            GridConfig(epsilons=())
        with pytest.raises(ValueError):
            GridConfig(n=(10,), m=(3,))
        with pytest.raises(ValueError):
            GridConfig(n=(3,), devices=9)
        with pytest.raises(ValueError):
            GridConfig(trials=0)

    def test_points_cover_grid(self):
        g = GridConfig(epsilons=(0.1, 0.2), n=(10, 20), m=(1, 2), p_flip=(0.0,))
        assert len(g.points()) == 8


@pytest.fixture(scope="module")
def small_sweep(tmp_path_factory):
    grid = GridConfig(epsilons=(0.01, 0.05, 0.2), trials=12, decoder=SMALL_DECODER)
    out = tmp_path_factory.mktemp("sweep")
    return run_sweep(grid, master_seed=3, out_dir=out), out


class TestSweep:
    def test_outputs_written(self, small_sweep):
        rep, out = small_sweep
        rows = list(csv.DictReader(io.StringIO((out / "trials.csv").read_text())))
        assert len(rows) == 36
        assert tuple(rows[0].keys()) == CSV_COLUMNS
        assert {r["schema_version"] for r in rows} == {str(ev.SCHEMA_VERSION)}
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["master_seed"] == 3 and len(agg["points"]) == 3
        summary = (out / "summary.txt").read_text()
        assert "FER2%" in summary and "reduced profile" in summary

    def test_aggregates_recomputable_from_csv(self, small_sweep):
        rep, out = small_sweep
        rows = list(csv.DictReader(io.StringIO((out / "trials.csv").read_text())))
        for point in rep.points:
            mine = [r for r in rows if float(r["epsilon"]) == point["epsilon"]]
            assert point["fer_stage1"] == np.mean([r["frame_error_stage1"] == "1" for r in mine])
            assert point["fer_stage2"] == np.mean([r["frame_error_stage2"] == "1" for r in mine])
            assert point["ber_stage1_mean"] == pytest.approx(
                np.mean([int(r["bit_errors_stage1"]) / int(r["n"]) for r in mine]), abs=1e-15)
        assert rep.points == aggregate(rep.trials)

    def test_matched_leakers_across_epsilon(self, small_sweep):
        rep, _ = small_sweep
        by_eps = {}
        for r in rep.trials:
            by_eps.setdefault(r.epsilon, []).append((r.trial_id, r.leaker_id))
        first, *rest = by_eps.values()
        assert all(v == first for v in rest)
        assert len({lid for _, lid in first}) > 1

    def test_zero_fer_means_every_device_found(self, small_sweep):
        rep, _ = small_sweep
        for point in rep.points:
            if point["fer_stage2"] == 0:
                eps = point["epsilon"]
                assert all(r.recovered_id == r.leaker_id for r in rep.trials if r.epsilon == eps)
        assert rep.point(0.2)["fer_stage2"] == 0.0

    def test_stage_two_never_worse_on_sweep(self, small_sweep):
        rep, _ = small_sweep
        for point in rep.points:
            assert point["fer_stage2"] <= point["fer_stage1"]
            assert 0.0 <= point["fer_stage2"] <= 1.0

    def test_rerun_is_byte_identical(self, small_sweep, tmp_path):
        rep, out = small_sweep
        again = run_sweep(rep.config, master_seed=3, out_dir=tmp_path)
        assert (tmp_path / "trials.csv").read_bytes() == (out / "trials.csv").read_bytes()
        assert (tmp_path / "aggregate.json").read_bytes() == (out / "aggregate.json").read_bytes()
        assert again.points == rep.points

    def test_parallel_matches_serial(self, small_sweep):
        rep, _ = small_sweep
        grid = GridConfig(epsilons=(0.05,), trials=6, decoder=SMALL_DECODER)
        serial = run_sweep(grid, master_seed=3)
        parallel = run_sweep(grid, master_seed=3, jobs=2)
        assert serial.csv_text() == parallel.csv_text()

    def test_different_seed_changes_trials(self, small_sweep):
        rep, _ = small_sweep
        other = run_sweep(GridConfig(epsilons=(0.2,), trials=12, decoder=SMALL_DECODER), master_seed=4)
        assert [r.leaker_id for r in other.trials] != [r.leaker_id for r in rep.trials if r.epsilon == 0.2]

    def test_compressed_uses_analytic_without_decoder(self):
        grid = GridConfig(epsilons=(0.2,), n=(20,), m=(2,), trials=20)
        rep = run_sweep(grid, master_seed=0)
        assert rep.point(0.2)["fer_stage2"] == 0.0


class TestFailures:
    def test_trial_failures_are_recorded(self, monkeypatch):
        real = ev.simulate_probes

        def flaky(key, scheme, count, sigma, p_flip, rng):
            if scheme.epsilon == 0.1:
                raise RuntimeError("simulated fault")
            return real(key, scheme, count, sigma, p_flip, rng)

        monkeypatch.setattr(ev, "simulate_probes", flaky)
        grid = GridConfig(epsilons=(0.1, 0.2), n=(20,), m=(2,), trials=4)
        with pytest.raises(SweepError):
            run_sweep(grid, master_seed=0)

    def test_partial_failure_is_not_fatal(self, monkeypatch, tmp_path):
        real = ev.simulate_probes
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise RuntimeError("simulated fault")
            return real(*args, **kwargs)

        monkeypatch.setattr(ev, "simulate_probes", flaky)
        rep = run_sweep(GridConfig(epsilons=(0.2,), n=(20,), m=(2,), trials=4), master_seed=0, out_dir=tmp_path)
        (point,) = rep.points
        assert point["failed"] == 1 and point["completed"] == 3
        text = (tmp_path / "trials.csv").read_text()
        assert "failed" in text and "simulated fault" in text


@pytest.mark.slow
def test_accuracy_gap_grows_with_epsilon():
    grid = GridConfig(mode="end-to-end", epsilons=(0.01, 0.05, 0.2), trials=20)
    rep = run_sweep(grid, master_seed=0)
    gaps = [p["acc_gap_mean"] for p in rep.points]
    assert all(p["completed"] == 20 for p in rep.points)
    assert gaps == sorted(gaps), gaps
