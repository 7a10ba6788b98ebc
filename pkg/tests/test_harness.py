from __future__ import annotations

import csv
import io
import json
import math
import os

import numpy as np
import pytest

from gacl import harness
from gacl.colony import expected_fitness_grad
from gacl.envtask import make_site_task
from gacl.errors import DomainError
from gacl.harness import (
    CSV_HEADER,
    EXPERIMENTS,
    ExperimentResult,
    ExperimentSpec,
    _adaptation_stats,
    _interior_peak,
    above_chance,
    atomic_write,
    coerce_value,
    csv_text,
    mean_field_residual,
    mean_field_trajectory,
    run_experiment,
    steps_to_threshold,
    summary_entry,
    write_result,
)

# small enough to run in well under a second each
FAST = {
    "iso-curve": {"steps": "12"},
    "traces": {"steps": "8"},
    "grad-dynamics": {"steps": "8"},
    "uniform-convergence": {"steps": "8", "colony_sizes": "10,30,100"},
    "trajectory-spread": {"steps": "8", "colony_sizes": "10,100"},
    "lr-sweep": {"steps": "5", "grid": "0.01,0.1,1"},
    "complexity": {"steps": "6"},
    "adaptation": {"steps": "12", "shift": "6"},
    "noise": {"steps": "6", "grid": "0,0.4,1.6", "plateau_window": "3"},
    "benchmark": {"datasets": "iris-easy,usarrests", "train.epochs": "5"},
    "mean-field": {"steps": "8", "fixed_point_steps": "50"},
}


def fast(name: str, seed: int = 42, **extra) -> ExperimentResult:
    return run_experiment(ExperimentSpec(name, 2, seed, {**FAST[name], **extra}))


def parse(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


class TestSpec:
    def test_defaults(self):
        assert ExperimentSpec("iso-curve").replicates == 20
        assert ExperimentSpec("lr-sweep").replicates == 15
        assert ExperimentSpec("noise").master_seed == 42

    def test_validation(self):
        with pytest.raises(DomainError):
            ExperimentSpec("nope")
        with pytest.raises(DomainError):
            ExperimentSpec("iso-curve", replicates=1)
        with pytest.raises(DomainError):
            ExperimentSpec("iso-curve", master_seed=-1)
        with pytest.raises(DomainError, match="colony.bogus"):
            ExperimentSpec("iso-curve", overrides={"colony.bogus": 1})
        with pytest.raises(DomainError, match="grid"):
            ExperimentSpec("iso-curve", overrides={"grid": "1,2"})

    def test_overrides_are_coerced(self):
        spec = ExperimentSpec("uniform-convergence", overrides={"colony_sizes": "10,20", "colony.rho_gen": "0.2"})
        assert spec.params()["colony_sizes"] == (10, 20)
        assert spec.colony().rho_gen == 0.2
        # the experiment's own base config is kept underneath the override
        assert spec.colony().explore_sigma == 0.0
        tc = ExperimentSpec("lr-sweep", overrides={"train.eta": 0.5}).train_config()
        assert tc.eta == 0.5 and tc.mu == 0.9

    def test_coerce_value(self):
        assert coerce_value("k", "true", False) is True
        assert coerce_value("k", "3", 1) == 3
        assert coerce_value("k", "0.5,1", (0.1,)) == (0.5, 1.0)
        with pytest.raises(DomainError, match="bad value for k"):
            coerce_value("k", "x", 1)
        with pytest.raises(DomainError):
            coerce_value("k", "maybe", True)

    def test_streams_distinct(self):
        spec = ExperimentSpec("noise")
        draws = {
            (c, r): spec.rng(c, r).random()
            for c in ("gacl/sigma=0", "gacl/sigma=0.1", "mlp/sigma=0")
            for r in range(5)
        }
        assert len(set(draws.values())) == len(draws)
        assert spec.rng("gacl/sigma=0", 3).random() == draws[("gacl/sigma=0", 3)]
        assert ExperimentSpec("adaptation").rng("gacl/sigma=0", 3).random() != draws[("gacl/sigma=0", 3)]
        assert ExperimentSpec("noise", master_seed=7).rng("gacl/sigma=0", 3).random() != draws[("gacl/sigma=0", 3)]


class TestHelpers:
    def test_steps_to_threshold(self):
        assert steps_to_threshold(np.array([0.0, 0.5, 0.95, 0.8]), 0.9) == 2
        assert math.isinf(steps_to_threshold(np.array([0.0, 0.5]), 0.9))

    def test_above_chance(self):
        np.testing.assert_allclose(above_chance(np.array([0.5, 0.75, 1.0]), 0.5), [0, 0.5, 1])

    def test_interior_peak(self):
        assert _interior_peak(np.array([0.5, 0.9, 0.6]), 0.05)
        assert not _interior_peak(np.array([0.9, 0.8, 0.6]), 0.05)
        assert not _interior_peak(np.array([0.87, 0.9, 0.6]), 0.05)

    def test_adaptation_stats(self):
        curve = np.r_[np.full(26, 1.0), np.full(5, 0.2), np.linspace(0.3, 0.95, 20)]
        s = _adaptation_stats(curve, 25)
        assert s["plateau"] == 1.0 and s["trough"] == pytest.approx(0.2)
        assert s["final"] == pytest.approx(0.95)
        # first post-shift step at or above 0.6
        assert s["half_time"] == 5 + 1 + int(np.ceil((0.6 - 0.3) / (0.65 / 19)))


class TestOutput:
    def test_deterministic_csv(self):
        assert csv_text(fast("iso-curve")) == csv_text(fast("iso-curve"))
        assert csv_text(fast("iso-curve")) != csv_text(fast("iso-curve", seed=43))

    def test_csv_format(self):
        res = fast("iso-curve")
        text = csv_text(res)
        assert "\r" not in text and text.endswith("\n")
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        rows = parse(text)
        for row in rows:
            assert row["experiment"] == "iso-curve"
            digits = row["value"].lstrip("-").split("e")[0].replace(".", "").lstrip("0")
            assert len(digits) <= 9
        labels = {r["replicate"] for r in rows}
        assert {"0", "1", "mean", "sd", "se", "n"} <= labels
        for r in rows:
            if r["replicate"] == "n":
                assert r["value"] == "2" and r["step"] == ""

    def test_se_with_two_replicates(self):
        res = fast("iso-curve")
        agg = res.series[("paired", "gacl", "error")]
        np.testing.assert_allclose(agg.se, agg.sd / math.sqrt(2))
        assert agg.n == 2

    def test_nine_significant_digits(self):
        assert harness._fmt(1 / 3) == "0.333333333"
        assert harness._fmt(123456789.123) == "123456789"
        assert harness._fmt(7) == "7" and harness._fmt("mean") == "mean"

    @pytest.mark.parametrize("name", ["uniform-convergence", "lr-sweep", "noise", "adaptation"])
    def test_mean_within_envelope(self, name):
        rows = parse(csv_text(fast(name)))
        cells: dict[tuple, dict[str, list[float]]] = {}
        for r in rows:
            key = (r["condition"], r["system"], r["metric"], r["step"])
            cells.setdefault(key, {}).setdefault(r["replicate"], []).append(float(r["value"]))
        for key, vals in cells.items():
            reps = [v[0] for k, v in vals.items() if k.isdigit()]
            if reps and "mean" in vals and all(map(math.isfinite, reps)):
                # written values are rounded to 9 significant digits
                assert min(reps) - 1e-8 <= vals["mean"][0] <= max(reps) + 1e-8, key

    def test_condition_independent_of_siblings(self):
        both = fast("trajectory-spread")
        alone = fast("trajectory-spread", colony_sizes="100")
        np.testing.assert_array_equal(
            both.series[("N=100", "gacl", "error")].mean, alone.series[("N=100", "gacl", "error")].mean
        )

    def test_atomic_write_keeps_old_file_on_failure(self, tmp_path, monkeypatch):
        target = tmp_path / "x.csv"
        atomic_write(target, "old\n")

        def boom(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr(harness.os, "replace", boom)
        with pytest.raises(OSError):
            atomic_write(target, "new\n")
        assert target.read_text() == "old\n"
        assert os.listdir(tmp_path) == ["x.csv"]

    def test_write_result_merges_summary(self, tmp_path):
        a, b = fast("uniform-convergence"), fast("complexity")
        write_result(a, tmp_path)
        path = write_result(b, tmp_path)
        assert path == tmp_path / "complexity.csv"
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary) == {"uniform-convergence", "complexity"}
        entry = summary["uniform-convergence"]
        assert set(entry) == {"passed", "acceptance", "checks", "metrics", "fits", "metadata"}
        assert "wall_time_s" not in entry["metadata"]
        assert entry["metadata"]["master_seed"] == 42 and entry["metadata"]["replicates"] == 2
        assert entry["metadata"]["colony"]["explore_sigma"] == 0.0
        assert isinstance(entry["passed"], bool)
        assert "exponent" in entry["fits"]["power_law_a"]["params"]

    def test_summary_encodes_non_finite(self):
        res = fast("complexity")
        res.metrics["x"] = [math.inf, math.nan, 1.0]
        entry = summary_entry(res)
        assert entry["metrics"]["x"] == ["inf", "nan", 1.0]
        json.dumps(entry, allow_nan=False)

    def test_passed_requires_all_acceptance(self):
        res = ExperimentResult("noise", ExperimentSpec("noise"))
        assert res.passed
        res.acceptance.update(a=True, b=False)
        assert not res.passed


class TestFastRuns:
    @pytest.mark.parametrize("name", EXPERIMENTS)
    def test_runs_and_echoes(self, name):
        res = fast(name)
        assert res.records and res.metadata["replicates"] == 2
        assert res.metadata["wall_time_s"] >= 0
        for agg in res.series.values():
            assert agg.n == 2

    def test_adaptation_shift_bounds(self):
        with pytest.raises(DomainError):
            fast("adaptation", shift="2")

    def test_lr_sweep_records_divergence(self):
        res = fast("lr-sweep", grid="100")
        assert "mlp_diverged_runs" in res.metrics
        if res.metrics["mlp_diverged_runs"]:
            assert res.metrics["mlp_final_mean"][0] == 0.0


class TestMeanField:
    def test_no_reinforcement_decays_with_half_life(self):
        env = make_site_task("easy").environment(0.0)(1)
        rho = 0.01
        taus = mean_field_trajectory(np.ones(5), env, rho, 0.0, 1.0, 1.0, 400, 1e-9)
        t_half = np.argmax(taus[:, 0] <= 0.5)
        assert t_half == pytest.approx(math.log(2) / rho, rel=0.01)
        np.testing.assert_allclose(taus[200], (1 - rho) ** 200)

    def test_decays_to_floor(self):
        env = make_site_task("easy").environment(0.0)(1)
        taus = mean_field_trajectory(np.ones(5), env, 0.5, 0.0, 1.0, 1.0, 200, 0.01)
        np.testing.assert_array_equal(taus[-1], 0.01)
        assert np.all(taus >= 0.01)

    def test_fixed_point_residual(self):
        env = make_site_task("easy").environment(0.0)(1)
        tau = mean_field_trajectory(np.ones(5), env, 0.1, 0.1, 1.0, 1.0, 10_000, 0.01)[-1]
        assert mean_field_residual(tau, env, 0.1, 0.1, 1.0, 1.0, 0.01) < 1e-6
        # the residual counts only sites above the floor
        free = tau > 0.01
        g = expected_fitness_grad(tau, env, 1.0, 1.0)
        np.testing.assert_allclose(0.1 * tau[free], 0.1 * g[free], atol=1e-6)


class TestDefaultExamples:
    """Examples checked on the full default configuration at seed 42."""

    def test_iso_curve(self, default_run):
        res = default_run("iso-curve")
        assert res.checks["gacl_non_increasing"] and res.checks["mlp_non_increasing"]
        assert ("paired", "gacl", "error_norm") in res.series

    def test_traces(self, default_run):
        res = default_run("traces")
        assert res.metrics["easy_winner_is_best"] >= 0.9
        assert res.metrics["subtle-noiseless_winner_is_best"] >= 0.7
        assert res.checks["easy_winner_strict"] and res.checks["subtle-noiseless_winner_strict"]
        assert sum(1 for k in res.series if k[1] == "mlp") == 5

    def test_grad_dynamics(self, default_run):
        m = default_run("grad-dynamics").metrics
        assert m["gacl_spearman"] > 0.5 and m["mlp_spearman"] > 0.5
        assert m["gacl_first_step_max_fraction"] >= 0.6

    def test_uniform_convergence(self, default_run):
        res = default_run("uniform-convergence")
        var = res.metrics["trajectory_variance_a"]
        assert var[-1] < var[0]
        assert abs(res.metrics["exponent"] - res.metrics["exponent_disjoint_seeds"]) < 0.3

    def test_uniform_convergence_doubled_replicates(self, default_run):
        base = default_run("uniform-convergence").metrics["exponent"]
        doubled = run_experiment(ExperimentSpec("uniform-convergence", 40)).metrics["exponent"]
        assert abs(doubled - base) < 0.3

    def test_trajectory_spread(self, default_run):
        res = default_run("trajectory-spread")
        sd = res.metrics["max_sd"]
        assert sd[0] > sd[1] > sd[2] and sd[2] < 0.25 * sd[0]
        assert res.checks["mean_within_envelope"]

    def test_lr_sweep(self, default_run):
        m = default_run("lr-sweep").metrics
        assert m["gacl_final_mean"][-1] < max(m["gacl_final_mean"])

    def test_complexity(self, default_run):
        res = default_run("complexity")
        assert res.metrics["gacl_easy_reach_fraction"] >= 0.9

    def test_adaptation(self, default_run):
        checks = default_run("adaptation").checks
        for system in ("gacl", "mlp"):
            assert checks[f"{system}_drop"] and checks[f"{system}_recovery"] and checks[f"{system}_control_flat"]

    def test_noise(self, default_run):
        res = default_run("noise")
        assert res.checks["gacl_zero_noise_is_max"] and res.checks["mlp_zero_noise_is_max"]

    def test_benchmark(self, default_run):
        table = default_run("benchmark").metrics["table"]
        for system in ("mlp", "gacl", "colony-net"):
            assert table["iris-easy"][system] == [1.0, 0.0]
        assert abs(table["iris-hard"]["mlp"][0] - 0.922) <= 0.15
        assert table["usarrests"]["gacl"][0] >= 0.75

    def test_mean_field_residual(self, default_run):
        assert default_run("mean-field").metrics["fixed_point_residual"] < 1e-6

    @pytest.mark.xfail(
        strict=True,
        reason="the ODE omits the colony's N-scaled deposits and normalisation, so the gap to the "
        "finite-N mean is a bias that does not vanish as N grows",
    )
    def test_mean_field_distance_shrinks(self, default_run):
        d = default_run("mean-field").metrics["sup_distance"]
        assert d["N=1000"] < d["N=100"]
