"""Tests for run-config parsing, defaults, and cross-field validation."""

import json

import pytest

from epbt.errors import ConfigError
from epbt.runconfig import OUTPUT_DIR_ENV, RunConfig, config_from_dict, load_run_config


def write_config(tmp_path, **overrides):
    doc = {
        "strategy": "epbt",
        "dataset": "blobs",
        "population_size": 8,
        "generations": 3,
        "elite_count": 4,
        "epochs_per_generation": 1,
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestLoading:
    def test_minimal_config_loads(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path))
        assert cfg.strategy == "epbt" and cfg.population_size == 8

    def test_unknown_key_named_in_error(self, tmp_path):
        path = write_config(tmp_path, populaton_size=10)
        with pytest.raises(ConfigError, match="populaton_size"):
            load_run_config(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_run_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.json")

    def test_non_object_document_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_run_config(path)


class TestCrossFieldValidation:
    def test_elite_count_must_be_below_population(self):
        with pytest.raises(ConfigError, match="elite_count"):
            config_from_dict({"population_size": 8, "elite_count": 8})

    def test_tournament_size_bounded_by_population(self):
        with pytest.raises(ConfigError, match="tournament_size"):
            config_from_dict({"population_size": 4, "elite_count": 2, "tournament_size": 5})

    def test_elite_pool_must_exceed_elite_count(self):
        with pytest.raises(ConfigError, match="elite_pool"):
            config_from_dict(
                {"population_size": 8, "elite_count": 4, "elite_pool_size": 4}
            )

    def test_distill_alpha_bounds(self):
        with pytest.raises(ConfigError, match="distill_alpha"):
            config_from_dict({"population_size": 8, "elite_count": 4, "distill_alpha": 1.5})

    def test_negative_seed_rejected(self):
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict({"population_size": 8, "elite_count": 4, "seed": -1})

    def test_csv_dataset_requires_path(self):
        with pytest.raises(ConfigError, match="csv_path"):
            config_from_dict({"population_size": 8, "elite_count": 4, "dataset": "csv"})

    def test_bad_strategy(self):
        with pytest.raises(ConfigError, match="strategy"):
            config_from_dict({"strategy": "magic"})

    def test_bad_range_shape(self):
        with pytest.raises(ConfigError, match="theta_range"):
            config_from_dict(
                {"population_size": 8, "elite_count": 4, "theta_range": [1, 2, 3]}
            )

    def test_hidden_layer_entries(self):
        with pytest.raises(ConfigError, match="hidden_layers"):
            config_from_dict({"population_size": 8, "elite_count": 4, "hidden_layers": [4, 0]})


class TestDerivedSettings:
    def test_elite_pool_defaults_to_three_halves_k(self):
        cfg = config_from_dict({"population_size": 40, "elite_count": 20})
        assert cfg.to_pulsation().elite_pool == 30

    def test_elite_pool_clamped_to_population(self):
        cfg = config_from_dict({"population_size": 8, "elite_count": 5})
        assert cfg.to_pulsation().elite_pool == 8

    def test_null_period_disables_pulsation(self):
        cfg = config_from_dict(
            {"population_size": 8, "elite_count": 4, "pulsation_period": None}
        )
        assert cfg.to_pulsation() is None
        assert cfg.to_evolution_config().pulsation is None

    def test_workers_default_resolves_to_cpu_count(self):
        cfg = RunConfig(population_size=8, elite_count=4)
        assert cfg.resolved_workers() >= 1
        cfg.workers = 3
        assert cfg.resolved_workers() == 3

    def test_evolution_config_mirrors_fields(self):
        cfg = config_from_dict(
            {
                "population_size": 10,
                "elite_count": 5,
                "generations": 7,
                "epochs_per_generation": 3,
                "mutation_sigma": 0.2,
                "seed": 11,
                "workers": 2,
            }
        )
        evo = cfg.to_evolution_config()
        assert evo.population_size == 10 and evo.generations == 7
        assert evo.operators.mutation_sigma == 0.2
        assert evo.seed == 11 and evo.workers == 2

    def test_sgd_config_mirrors_fields(self):
        cfg = config_from_dict(
            {
                "population_size": 8,
                "elite_count": 4,
                "base_lr": 0.05,
                "batch_size": 64,
                "lr_milestones": [0.5],
            }
        )
        sgd = cfg.to_sgd()
        assert sgd.base_lr == 0.05 and sgd.batch_size == 64 and sgd.milestones == (0.5,)


class TestOutputDir:
    def test_missing_everywhere_is_an_error(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
        cfg = RunConfig(population_size=8, elite_count=4, output_dir=None)
        with pytest.raises(ConfigError, match="output"):
            cfg.resolved_output_dir()

    def test_env_var_overrides_config(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env_dir"))
        cfg = RunConfig(population_size=8, elite_count=4, output_dir=str(tmp_path / "cfg_dir"))
        assert cfg.resolved_output_dir() == tmp_path / "env_dir"
