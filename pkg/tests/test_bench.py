import copy
import json

import jsonschema
import numpy as np
import pytest

from ddk.bench import (
    boxplot_svg,
    run_experiment,
    run_trial,
    summarize,
    summary_csv,
    trials_csv,
    write_outputs,
)
from ddk.benchconfig import ExperimentConfig
from ddk.cli import DEMO_PRESETS, demo_config, main

SMALL_T2 = {
    "task": "t2",
    "system": {"type": "random", "n_x": 2, "n_u": 1, "n_y": 1},
    "horizon": {"L": 6, "L0": 2},
    "data": {"N": 30, "construction": "hankel"},
    "offline_noise": {"family": "gaussian", "sigma_w2": 1e-4, "sigma_v2": 1e-4},
    "online_noise": {"family": "gaussian", "sigma_w2": 1e-2, "sigma_v2": 1e-2},
    "methods": ["one_iteration", "predictor16"],
    "trials": 3,
    "base_seed": 7,
}


def small_config(**overrides):
    raw = copy.deepcopy(SMALL_T2)
    raw.update(overrides)
    return ExperimentConfig(raw=raw)


class TestConfig:
    def test_valid_config_accepted(self):
        config = small_config()
        assert config.trials == 3
        assert config.methods == ["one_iteration", "predictor16"]

    def test_unknown_keys_rejected(self):
        raw = copy.deepcopy(SMALL_T2)
        raw["surprise"] = 1
        with pytest.raises(jsonschema.ValidationError):
            ExperimentConfig(raw=raw)

    def test_unknown_method_rejected(self):
        with pytest.raises(jsonschema.ValidationError):
            small_config(methods=["gradient-descent"])

    def test_control_block_required_for_t3(self):
        raw = copy.deepcopy(DEMO_PRESETS["t3"])
        del raw["control"]
        with pytest.raises(ValueError):
            ExperimentConfig(raw=raw)

    def test_reference_length_must_match_horizon(self):
        raw = copy.deepcopy(DEMO_PRESETS["t3"])
        raw["control"]["y_ref"] = [[1.0, 5]]
        with pytest.raises(ValueError):
            ExperimentConfig(raw=raw)

    def test_config_hash_stable_under_key_order(self):
        a = small_config()
        shuffled = dict(reversed(list(copy.deepcopy(SMALL_T2).items())))
        b = ExperimentConfig(raw=shuffled)
        assert a.config_hash() == b.config_hash()

    def test_demo_presets_validate(self):
        for name in DEMO_PRESETS:
            demo_config(name)


class TestRunExperiment:
    def test_deterministic_trials_csv(self):
        config = small_config(trials=2)
        a = trials_csv(run_experiment(config))
        b = trials_csv(run_experiment(config))
        assert a == b

    def test_methods_see_identical_data(self):
        base = small_config(trials=1)
        only = small_config(trials=1, methods=["one_iteration"])
        both = run_experiment(base)[0]
        solo = run_experiment(only)[0]
        assert both.outcomes["one_iteration"].metric == solo.outcomes["one_iteration"].metric

    def test_zero_noise_recovery(self):
        zero = {"family": "gaussian", "sigma_w2": 0.0, "sigma_v2": 0.0}
        config = small_config(trials=1, offline_noise=zero, online_noise=zero,
                              methods=["nonlinear", "sqp", "one_iteration"])
        res = run_experiment(config)[0]
        for name, out in res.outcomes.items():
            assert out.metric <= 1e-6, f"{name}: {out.metric}"

    def test_worker_pool_matches_serial(self):
        config = small_config(trials=4)
        serial = trials_csv(run_experiment(config, workers=1))
        parallel = trials_csv(run_experiment(config, workers=2))
        assert serial == parallel

    def test_failures_recorded_not_fatal(self):
        # deepc methods require a control task; on t2 they fail per-trial
        config = small_config(trials=1, methods=["one_iteration", "deepc-unreg"])
        res = run_experiment(config)[0]
        assert res.outcomes["deepc-unreg"].failed
        assert not res.outcomes["one_iteration"].failed


class TestSummarize:
    def test_single_trial_summary_degenerate(self):
        config = small_config(trials=1)
        rows = summarize(run_experiment(config))
        for row in rows:
            assert row.minimum == row.q1 == row.median == row.q3 == row.maximum

    def test_quartile_convention(self):
        from ddk.bench import MethodOutcome, TrialResult

        results = []
        for i, v in enumerate([1.0, 2.0, 3.0, 4.0, 5.0]):
            res = TrialResult(trial=i, seed=f"0-{i}")
            res.outcomes["m"] = MethodOutcome(metric=v, wall_ms=1.0, converged=True)
            results.append(res)
        row = summarize(results)[0]
        assert row.median == 3.0
        assert row.q1 == 2.0
        assert row.q3 == 4.0

    def test_failures_counted_and_excluded(self):
        from ddk.bench import MethodOutcome, TrialResult

        results = []
        for i, v in enumerate([1.0, float("nan"), 3.0]):
            res = TrialResult(trial=i, seed=f"0-{i}")
            res.outcomes["m"] = MethodOutcome(metric=v, wall_ms=1.0,
                                              converged=True,
                                              error="" if np.isfinite(v) else "x")
            results.append(res)
        row = summarize(results)[0]
        assert row.failures == 1
        assert row.count == 2
        assert row.median == 2.0


class TestOutputs:
    def test_write_outputs_files(self, tmp_path):
        config = small_config(trials=2)
        results = run_experiment(config)
        out = write_outputs(config, results, tmp_path / "run", boxplot=True)
        assert (out / "trials.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "boxplot.svg").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_hash"] == config.config_hash()
        header = (out / "trials.csv").read_text().splitlines()[0]
        assert header == "trial,seed,method,metric,converged"
        timing_header = (out / "timings.csv").read_text().splitlines()[0]
        assert timing_header == "trial,seed,method,wall_ms,error"

    def test_summary_csv_shape(self):
        config = small_config(trials=2)
        text = summary_csv(summarize(run_experiment(config)))
        lines = text.strip().splitlines()
        assert lines[0].startswith("method,count,failures,min,q1,median")
        assert len(lines) == 1 + 2

    def test_boxplot_svg_wellformed(self):
        config = small_config(trials=2)
        svg = boxplot_svg(summarize(run_experiment(config)), title="t2")
        assert svg.startswith("<svg")
        assert svg.endswith("</svg>")
        assert "rect" in svg


class TestCli:
    def test_demo_run_and_summarize(self, tmp_path, capsys):
        out = tmp_path / "demo"
        code = main(["demo", "t2", "--trials", "2", "--seed", "3",
                     "--out", str(out)])
        assert code == 0
        first = capsys.readouterr().out
        assert "one_iteration" in first
        code = main(["summarize", "--in", str(out)])
        assert code == 0
        again = capsys.readouterr().out
        for line in first.splitlines():
            if line.startswith("one_iteration"):
                assert line in again

    def test_run_from_config_file(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(SMALL_T2))
        code = main(["run", "--config", str(cfg_path), "--trials", "1",
                     "--out", str(tmp_path / "res")])
        assert code == 0
        assert (tmp_path / "res" / "trials.csv").exists()
