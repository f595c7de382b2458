from __future__ import annotations

import json
from pathlib import Path

import pytest

from brar_pps.config import RunConfig, TrialBenchConfig, load_config, parse_config, parse_design
from brar_pps.design import DropRule, VarianceScaling, eset_design
from brar_pps.errors import ConfigError
from brar_pps.methods import Method, PpsMethod
from brar_pps.oc import OCMode
from brar_pps.report import OutputFormat
from brar_pps.state import TrialState


ESET_TOML = """
[design]
k = 3
n = 720
burn_in = 100
block_size = 100
analysis_schedule = "blocks"
superiority_threshold = 0.975
inferiority_threshold = 0.975
tuning = { power = 2 }
drop_rule = { p_low = 0.25, confidence = 0.95 }

[design.randomisation]
method = "exact"

[design.testing]
method = "ga"
accuracy = 1e-5

[simulation]
replications = 10000
seed = 7
threads = 4
scenarios = [[0.5, 0.5, 0.5], [0.5, 0.5, 0.65]]

[oc]
mode = "simulated"

[output]
format = "json"
"""


# ---- loading ----


class TestLoad:
    def test_toml(self, tmp_path):
        path = tmp_path / "eset.toml"
        path.write_text(ESET_TOML, encoding="utf-8")
        config = load_config(path)

        design = config.design
        assert design.schedule == (400, 500, 600, 700, 720)
        assert design.tuning == VarianceScaling(2)
        assert design.drop_rule == DropRule(0.25, 0.95)
        assert design.inferiority_threshold == 0.975
        assert design.rand_method == PpsMethod()
        assert design.test_method == PpsMethod(Method.GAUSSIAN, accuracy=1e-5)
        assert config.simulation.scenarios == ((0.5, 0.5, 0.5), (0.5, 0.5, 0.65))
        assert config.simulation.threads == 4
        assert config.oc.mode is OCMode.SIMULATED
        assert config.output.format is OutputFormat.JSON

    def test_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"design": {"k": 2, "n": 50, "priors": [[2, 1], [1, 2]]}}), encoding="utf-8")
        config = load_config(path)
        assert config.design.prior_state == TrialState((2, 1, 1, 2))
        assert config.design.schedule == (50,)

    def test_shipped_case_study_config(self):
        config = load_config(Path(__file__).resolve().parents[1] / "configs" / "eset.toml")
        assert config.design == eset_design()
        assert config.simulation.replications == 10_000

    def test_unknown_suffix(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("design: {}", encoding="utf-8")
        with pytest.raises(ConfigError, match="Use a .toml or .json file"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="Cannot read configuration"):
            load_config(tmp_path / "missing.toml")

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[design\nk = 2", encoding="utf-8")
        with pytest.raises(ConfigError, match="Cannot read configuration"):
            load_config(path)


# ---- parsing ----


class TestParse:
    def test_empty_document_uses_defaults(self):
        config = parse_config({})
        assert config == RunConfig()
        assert config.design is None
        assert config.calibration.alpha == 0.05

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="Unknown section"):
            parse_config({"trial": {}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"Unknown key\(s\) in \[simulation\]: replicates"):
            parse_config({"simulation": {"replicates": 10}})

    @pytest.mark.parametrize(
        "data",
        [
            {"simulation": {"replications": "10"}},
            {"simulation": {"replications": True}},
            {"calibration": {"alpha": "0.05"}},
            {"bench": {"preload": 1}},
            {"output": {"path": 3}},
        ],
    )
    def test_wrong_types(self, data):
        with pytest.raises(ConfigError, match="wrong type"):
            parse_config(data)

    def test_integers_are_accepted_as_reals(self):
        assert parse_config({"calibration": {"alpha": 1}}).calibration.alpha == 1

    @pytest.mark.parametrize(
        ("data", "match"),
        [
            ({"calibration": {"test": "bayes"}}, "'pp' or 'ux'"),
            ({"oc": {"mode": "fast"}}, "'exact' or 'simulated'"),
            ({"output": {"format": "xml"}}, "'csv' or 'json'"),
            ({"simulation": {"scenarios": [["a", 0.5]]}}, "response probabilities"),
            ({"bench": {"trials": [{"n": 10}]}}, "Invalid configuration"),
        ],
    )
    def test_invalid_values(self, data, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(data)

    def test_bench_trials(self):
        config = parse_config({"bench": {"methods": ["exact", "rs"], "trials": [{"k": 3, "n": 720, "burn_in": 100}]}})
        assert config.bench.methods == ("exact", "rs")
        assert config.bench.trials == (TrialBenchConfig(k=3, n=720, burn_in=100),)


class TestParseDesign:
    def test_missing_size(self):
        with pytest.raises(ConfigError, match="missing 'n'"):
            parse_design({"k": 2})

    def test_bad_priors(self):
        with pytest.raises(ConfigError, match="pairs of positive integers"):
            parse_design({"k": 2, "n": 5, "priors": [[1, 0], [1, 1]]})

    def test_bad_schedule_string(self):
        with pytest.raises(ConfigError, match="'blocks'"):
            parse_design({"k": 2, "n": 5, "analysis_schedule": "every"})

    def test_explicit_schedule(self):
        assert parse_design({"k": 2, "n": 20, "analysis_schedule": [20, 10]}).schedule == (10, 20)

    def test_design_errors_become_config_errors(self):
        with pytest.raises(ConfigError, match="Burn-in"):
            parse_design({"k": 3, "n": 10, "burn_in": 4})

    def test_bad_method(self):
        with pytest.raises(ConfigError, match=r"\[design.randomisation\] Unknown method"):
            parse_design({"k": 2, "n": 5, "randomisation": {"method": "mc"}})

    def test_unknown_tuning_key(self):
        with pytest.raises(ConfigError, match=r"\[design.tuning\]"):
            parse_design({"k": 2, "n": 5, "tuning": {"m": 2}})

    def test_sampling_method(self):
        design = parse_design({"k": 2, "n": 5, "randomisation": {"method": "rs", "samples": 500, "seed": 3}})
        assert design.rand_method == PpsMethod(Method.SAMPLING, samples=500, seed=3)
