import csv
import math

import numpy as np
import pytest

from patchskf.benchmark import (
    EstimatorSpec,
    ExperimentSpec,
    MetricsTable,
    checks,
    format_report,
    mode_accuracy,
    run_benchmark,
)
from patchskf.estimators import EstimationResult
from patchskf.frames import FrameSequence
from patchskf.simulation import SimConfig

SMALL = SimConfig(side=16, frames=6, seed=5)
SPECS = (EstimatorSpec("full"), EstimatorSpec("wskf", window_side=8), EstimatorSpec("swskf", r=1, alpha=2))


@pytest.fixture(scope="module")
def small_table(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    spec = ExperimentSpec(SMALL, SPECS, realizations=2, out_dir=out)
    return spec, run_benchmark(spec), out


def test_table_is_complete_and_nonnegative(small_table):
    _, table, _ = small_table
    assert table.mse.shape == (3, 2, 6)
    assert np.isfinite(table.mse).all() and (table.mse >= 0).all()
    assert (table.seconds > 0).all()
    assert ((table.mode_accuracy >= 0) & (table.mode_accuracy <= 1)).all()
    assert not table.errors


def test_csv_round_trip_and_aggregates(small_table):
    _, table, out = small_table
    back = MetricsTable.read(out)
    assert back.estimators == table.estimators
    np.testing.assert_array_equal(back.mse, table.mse)
    np.testing.assert_array_equal(back.seconds, table.seconds)
    np.testing.assert_array_equal(back.mode_accuracy, table.mode_accuracy)
    with open(out / "aggregate.csv", newline="") as fh:
        rows = {r["estimator"]: r for r in csv.DictReader(fh)}
    for e, name in enumerate(table.estimators):
        recomputed = back.mse[e].mean(axis=1).mean()
        assert float(rows[name]["mean_mse"]) == pytest.approx(recomputed, rel=1e-12, abs=0)
        assert float(rows[name]["mean_seconds"]) == pytest.approx(back.seconds[e].mean(), rel=1e-12)
    with open(out / "series.csv", newline="") as fh:
        series = list(csv.DictReader(fh))
    assert len(series) == 3 * 6


def test_parallel_matches_sequential(small_table):
    spec, table, _ = small_table
    from dataclasses import replace

    par = run_benchmark(replace(spec, out_dir=None), jobs=2)
    np.testing.assert_allclose(par.mse, table.mse, rtol=1e-12, atol=0)


def test_failed_estimator_is_recorded_and_others_run():
    bad = EstimatorSpec("swskf", r=10, alpha=2)  # window side 22 exceeds the 16-pixel image
    spec = ExperimentSpec(SMALL, (EstimatorSpec("wskf", window_side=8), bad), realizations=1)
    table = run_benchmark(spec)
    assert ("swskf", 0) in table.errors
    assert np.isnan(table.mse[1]).all()
    assert np.isfinite(table.mse[0]).all()
    assert any(c.name == "no estimator failures" and not c.passed for c in checks(table))
    assert "failures" in format_report(table)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(SMALL, SPECS, realizations=0)
    with pytest.raises(ValueError):
        ExperimentSpec(SMALL, (), realizations=1)
    with pytest.raises(ValueError):
        ExperimentSpec(SMALL, (EstimatorSpec("wskf"), EstimatorSpec("wskf")))
    with pytest.raises(ValueError):
        EstimatorSpec("bogus")


def test_checks_on_synthetic_table():
    T = 100
    mse = np.ones((3, 2, T))
    mse[0] *= np.linspace(1.0, 2.0, T)  # full grows
    mse[1] *= 0.5
    mse[2] *= 0.45
    seconds = np.array([[60.0, 70.0], [1.0, 1.2], [4.0, 4.5]])
    acc = np.full((3, 2), 0.9)
    table = MetricsTable(["full", "wskf", "swskf"], mse, seconds, acc, elapsed=100.0)
    results = {c.name: c.passed for c in checks(table)}
    assert all(results.values()), results
    table.seconds[2] = 0.5  # swskf faster than wskf breaks the runtime ordering
    assert not {c.name: c.passed for c in checks(table)}["time wskf < swskf < full"]
    assert "PASS" in format_report(table, results=checks(table))


def test_mode_accuracy_scoring():
    sim = SimConfig(side=4, frames=12)
    truth = np.zeros((12, 4), dtype=int)
    truth[:, 1] = 1
    post = np.zeros((12, 4, 2))
    post[:, :, 0] = 1.0
    post[:, 1] = [0.0, 1.0]
    res = EstimationResult(FrameSequence(np.zeros((12, 4, 4))), post, np.zeros(12), np.zeros(12))
    assert mode_accuracy(res, truth, sim, burn_in=2) == 1.0
    post[:, 1] = [1.0, 0.0]
    assert mode_accuracy(res, truth, sim, burn_in=2) == 0.75
    glob = EstimationResult(FrameSequence(np.zeros((12, 4, 4))), np.tile([1.0, 0.0], (12, 1, 1)),
                            np.zeros(12), np.zeros(12))
    assert mode_accuracy(glob, truth, sim, burn_in=2) == 0.75
    assert math.isfinite(mode_accuracy(glob, truth, sim))
