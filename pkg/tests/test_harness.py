import csv
import math

import numpy as np
import pytest

from phigpr import harness
from phigpr.cli import main
from phigpr.errors import ContractError
from phigpr.harness import (ConfigError, ExperimentConfig, ObservationPlan, RunRecord, StageError,
                            emit_plotdata, load_config, make_ground_truth, make_observations, rerun,
                            run_experiment)
from phigpr.prior_stats import StateChannel, ensemble_moments, parse_channel
from phigpr.sde_sim import SimConfig, generate_ensemble


def tiny(tmp_path, **kw):
    base = dict(name="tiny", t_end=3.0, n_mc=60, seed=3, window_end=2.0, forecast_end=3.0,
                targets=("theta_2-theta_1", "omega_2-omega_1", "pwind_1"), output=str(tmp_path / "run"))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = tiny(out, cadences=(0.05, 0.1), noise_levels=(0.0, 5.0), replicates=2)
    return cfg, run_experiment(cfg)


class TestGroundTruth:
    def test_size_three(self, small_ensemble):
        ens = small_ensemble.select(np.arange(3))
        truth, reduced, idx = make_ground_truth(ens, 5)
        assert reduced.n_members == 2
        assert ens.seeds[idx] not in reduced.seeds.tolist()
        np.testing.assert_array_equal(truth.theta, ens.theta[idx])

    def test_deterministic(self, small_ensemble):
        assert make_ground_truth(small_ensemble, 9)[2] == make_ground_truth(small_ensemble, 9)[2]

    def test_replicates_use_distinct_members(self, small_ensemble):
        picks = [make_ground_truth(small_ensemble, 9, r)[2] for r in range(20)]
        assert len(set(picks)) == 20

    def test_too_small(self, small_ensemble):
        with pytest.raises(ContractError):
            make_ground_truth(small_ensemble.select(np.arange(2)), 0)

    @pytest.mark.slow
    def test_reduced_moments_close_to_full(self, params):
        ens = generate_ensemble(SimConfig(seed=17), params, 2000, record_interval=0.1)
        _, reduced, _ = make_ground_truth(ens, 1)
        chans = [parse_channel("theta_2-theta_1"), parse_channel("omega_2-omega_1"), parse_channel("pwind_1")]
        full = ensemble_moments(ens, chans)
        red = ensemble_moments(reduced, chans)
        for ch in chans:
            a, b = full.std(ch)[1:], red.std(ch)[1:]
            assert np.sqrt(np.mean(((a - b) / a) ** 2)) < 0.01


class TestObservations:
    def test_experiment_window_count(self):
        assert len(ObservationPlan(("theta",), 0.05, 8.3375).times()) == 167

    def test_noise_free_is_exact_subsample(self, small_ensemble):
        truth = small_ensemble.member(0)
        obs = make_observations(truth, ObservationPlan(("theta", "omega"), 0.1, 2.0))
        np.testing.assert_array_equal(obs.data.values, obs.clean)
        np.testing.assert_array_equal(obs.series(StateChannel("omega", 2)), truth.omega[::4, 1][:21])
        assert np.all(obs.data.noise_std == 0)

    def test_five_percent_noise_level(self, small_ensemble):
        truth = small_ensemble.member(1)
        plan = ObservationPlan(("theta",), 0.05, 2.0, noise_pct=5.0)
        draws = np.stack([make_observations(truth, plan, s).data.values for s in range(10_000)])
        obs = make_observations(truth, plan, 0)
        n = len(obs.times)
        for i in range(3):
            block = slice(i * n, (i + 1) * n)
            target = 0.05 * obs.clean[block].std()
            empirical = (draws[:, block] - obs.clean[block]).std()
            assert abs(empirical / target - 1) < 0.03
            assert obs.data.noise_std[i] == pytest.approx(target)

    def test_pooled_noise(self, small_ensemble):
        truth = small_ensemble.member(1)
        obs = make_observations(truth, ObservationPlan(("theta",), 0.05, 2.0, 1.0, pooled_noise=True), 0)
        assert len(set(obs.data.noise_std.tolist())) == 1

    def test_off_grid_cadence(self, small_ensemble):
        with pytest.raises(ContractError):
            make_observations(small_ensemble.member(0), ObservationPlan(("theta",), 0.03, 2.0))


class TestConfig:
    def test_baselines_refuse_wind(self, tmp_path):
        with pytest.raises(ConfigError, match="wind"):
            tiny(tmp_path, methods=("dd-gpr",), targets=("pwind_1",))

    def test_baselines_refuse_unobserved(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny(tmp_path, methods=("arima",), targets=("omega_2-omega_1",))

    def test_window_order(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny(tmp_path, window_end=3.0)

    def test_cadence_must_be_step_multiple(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny(tmp_path, cadences=(0.03,))

    def test_ini_round_trip(self, tmp_path):
        cfg = tiny(tmp_path, noise_levels=(1.0, 5.0), methods=("phi-gpr", "arima"),
                   targets=("theta_2-theta_1",))
        back = load_config(cfg.write(tmp_path / "c.cfg"))
        assert back.replace(base_dir=cfg.base_dir) == cfg

    def test_recipes_load(self):
        names = harness.recipe_names()
        assert {"theta-obs", "omega-obs", "both-obs", "cadence-sweep", "noise-sweep"} <= set(names)
        for name in names:
            load_config(harness.recipe_path(name))
        with pytest.raises(ConfigError):
            harness.recipe_path("nope")


class TestRunExperiment:
    def test_outputs(self, tiny_run):
        cfg, record = tiny_run
        out = cfg.output_dir()
        assert record.status == "ok"
        for name in record.files:
            assert (out / name).exists()
        assert (out / "posterior_phi-gpr_d0.1_n5_r1.csv").exists()
        assert len(record.truth_members) == 2
        # 3 targets x 3 windows x 2 cadences x 2 noise levels x 2 replicates
        assert len(record.metrics) == 72
        assert record.checks["max_posterior_minus_prior_var"] <= 1e-8

    def test_record_round_trip(self, tiny_run):
        cfg, record = tiny_run
        back = RunRecord.load(cfg.output_dir() / "record.json")
        assert back.experiment_config() == cfg
        assert back.seeds == record.seeds

    def test_rerun_is_bit_identical(self, tiny_run, tmp_path):
        cfg, record = tiny_run
        again = rerun(cfg.output_dir() / "record.json", output=tmp_path / "again", threads=3)
        assert (tmp_path / "again" / "metrics.csv").read_bytes() == (cfg.output_dir() / "metrics.csv").read_bytes()
        assert again.truth_members == record.truth_members

    def test_plotdata(self, tiny_run, tmp_path):
        cfg, record = tiny_run
        files = emit_plotdata(record, tmp_path / "plots")
        figs = [f for f in files if not f.name.endswith("_obs.csv")]
        assert len(figs) == 3 * 2 * 2 * 2
        for f in files:
            with f.open() as fh:
                rows = list(csv.DictReader(fh))
            t = [float(r["t"]) for r in rows]
            assert t == sorted(t)
            if f.name.endswith("_obs.csv"):
                assert all(x <= cfg.window_end for x in t)
            else:
                for r in rows:
                    assert float(r["lower"]) <= float(r["mean"]) <= float(r["upper"])
        obs = [f for f in files if f.name == "fig_phi-gpr_theta_2-theta_1_d0.05_n0_r0_obs.csv"]
        assert obs and len(obs[0].read_text().splitlines()) == 1 + 41

    def test_baselines_run(self, tmp_path):
        cfg = tiny(tmp_path, methods=("dd-gpr", "arima"), targets=("theta_2-theta_1",),
                   arima_p_max=2, arima_q_max=1)
        record = run_experiment(cfg)
        assert {m.method for m in record.metrics} == {"dd-gpr", "arima"}
        assert "theta_2-theta_1_d0.05_n0_r0" in record.checks["arima_orders"]

    def test_failure_marker(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise ArithmeticError("synthetic failure")

        monkeypatch.setattr(harness, "condition", boom)
        cfg = tiny(tmp_path)
        with pytest.raises(StageError) as info:
            run_experiment(cfg)
        assert info.value.stage == "phi-gpr"
        out = cfg.output_dir()
        assert (out / "FAILED").read_text().startswith("stage: phi-gpr")
        assert RunRecord.load(out / "record.json").status == "failed"

    def test_no_methods_writes_moments(self, tmp_path):
        cfg = tiny(tmp_path, methods=())
        run_experiment(cfg)
        header = (cfg.output_dir() / "moments.csv").read_text().splitlines()[0]
        assert header.startswith("t,theta_2-theta_1_mean")


class TestCli:
    def write(self, tmp_path, **kw):
        return str(tiny(tmp_path, **kw).write(tmp_path / "exp.cfg"))

    def test_forecast_and_metrics(self, tmp_path, capsys):
        path = self.write(tmp_path)
        assert main(["forecast", path]) == 0
        assert main(["metrics", path]) == 0
        out = capsys.readouterr().out
        assert "phi-gpr" in out and "forecast-2s" in out

    def test_simulate_and_moments(self, tmp_path):
        path = self.write(tmp_path)
        assert main(["--seed", "4", "simulate", path]) == 0
        assert (tmp_path / "run" / "ensemble.pgrc").exists()
        assert main(["moments", path]) == 0
        assert (tmp_path / "run" / "moments.csv").exists()

    def test_out_flag(self, tmp_path):
        path = self.write(tmp_path)
        assert main(["--out", str(tmp_path / "elsewhere"), "forecast", path]) == 0
        assert (tmp_path / "elsewhere" / "metrics.csv").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[simulation]\nn_mc = two\n")
        assert main(["forecast", str(bad)]) == 1
        assert main(["forecast", str(tmp_path / "missing.cfg")]) == 1
        assert main(["metrics", self.write(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise ArithmeticError("synthetic failure")

        monkeypatch.setattr(harness, "condition", boom)
        assert main(["forecast", self.write(tmp_path)]) == 2

    def test_recipe_unknown(self):
        assert main(["recipe", "nope"]) == 1


def test_ground_truth_not_in_prior(small_ensemble):
    truth, reduced, idx = make_ground_truth(small_ensemble, 77)
    gaps = np.abs(reduced.theta - truth.theta[None]).reshape(reduced.n_members, -1).max(axis=1)
    assert np.all(gaps > 0) and math.isfinite(gaps.min())
