# tests/test_config.py
import pytest
from pydantic import ValidationError

from recps.core.config import env_overrides, load_run_config, parse_assignments, read_config_file
from recps.schemas.run import RunConfig
from recps.utils.exceptions import ConfigError


class TestConfigSources:
    """Environment, file and flag parsing."""

    def test_env_overrides_pick_prefixed_fields(self):
        """Only RECPS_<FIELD> variables naming a real field are collected."""
        environ = {"RECPS_SEED": "7", "RECPS_NUM_SHADOWS": "16", "RECPS_UNKNOWN": "x", "HOME": "/root"}

        assert env_overrides(environ) == {"seed": "7", "num_shadows": "16"}

    def test_read_config_file(self, tmp_path):
        """Keys are case-insensitive and dashes become underscores."""
        path = tmp_path / "run.env"
        path.write_text("# toy run\nFAMILY=ncf\nnum-shadows=8\nlearning_rate=0.01\n")

        assert read_config_file(str(path)) == {"family": "ncf", "num_shadows": "8", "learning_rate": "0.01"}

    def test_unknown_file_key_is_rejected(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("shadows=8\n")

        with pytest.raises(ConfigError) as exc_info:
            read_config_file(str(path))
        assert exc_info.value.field == "shadows"

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(str(tmp_path / "absent.env"))

    def test_parse_assignments(self):
        assert parse_assignments(["dim=16", "family = lightgcn"]) == {"dim": "16", "family": "lightgcn"}

    def test_assignment_without_equals(self):
        with pytest.raises(ConfigError):
            parse_assignments(["dim16"])


class TestLoadRunConfig:
    """Precedence and validation of the resolved configuration."""

    def test_defaults(self):
        """Defaults follow the documented training setup."""
        config = load_run_config(use_environment=False)

        assert config.learning_rate == 0.001
        assert config.batch_size == 256
        assert config.max_epochs == 30
        assert config.patience == 5
        assert config.dim == 64
        assert config.layers == 3
        assert config.num_shadows == 64
        assert config.min_interactions == 20
        assert config.optimizer == "sgd"

    def test_flags_override_file(self, tmp_path):
        """Command-line values beat the config file, which beats defaults."""
        path = tmp_path / "run.env"
        path.write_text("seed=3\ndim=32\n")

        config = load_run_config(str(path), {"seed": 11, "workers": None}, use_environment=False)

        assert config.seed == 11
        assert config.dim == 32
        assert config.workers == 1

    def test_environment_below_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RECPS_DIM", "24")
        monkeypatch.setenv("RECPS_SEED", "5")
        path = tmp_path / "run.env"
        path.write_text("dim=48\n")

        config = load_run_config(str(path))

        assert config.dim == 48
        assert config.seed == 5

    def test_recorded_defaults_have_lowest_priority(self):
        config = load_run_config(overrides={"dim": 12}, use_environment=False, defaults={"dim": 4, "seed": 9})

        assert config.dim == 12
        assert config.seed == 9

    def test_invalid_value_raises_config_error(self):
        """Pydantic validation failures become ConfigError with the field name."""
        with pytest.raises(ConfigError) as exc_info:
            load_run_config(overrides={"num_shadows": 1}, use_environment=False)
        assert exc_info.value.field == "num_shadows"
        assert exc_info.value.exit_code == 2

    def test_removal_arms_from_string(self):
        config = load_run_config(overrides={"removal_arms": "user-level, random-interaction"}, use_environment=False)

        assert config.removal_arms == ["user-level", "random-interaction"]


class TestManifestView:
    def test_location_fields_excluded(self):
        """Paths and worker count never reach manifests."""
        view = RunConfig(dataset_path="/data/ml-1m.dat", output_dir="/tmp/a", workers=8).manifest_view()

        assert "dataset_path" not in view
        assert "output_dir" not in view
        assert "workers" not in view
        assert "log_level" not in view
        assert view["seed"] == 0

    def test_train_config_carries_fields(self):
        config = RunConfig(dim=16, optimizer="adam", seed=4)
        train_cfg = config.train_config()

        assert train_cfg.dim == 16
        assert train_cfg.optimizer == "adam"
        assert train_cfg.seed == 4
        assert config.train_config(seed=99).seed == 99

    def test_removal_plan(self):
        plan = RunConfig(removal_user_fraction=0.1, seed=2).removal_plan("user-level")

        assert plan.mode == "user-level"
        assert plan.target_user_fraction == 0.1
        assert plan.cutoff_theta is None
        assert plan.seed == 2

    def test_removal_grid_defaults_to_single_plan(self):
        config = RunConfig(removal_user_fraction=0.1, removal_interaction_fraction=0.4, seed=2)

        assert config.removal_grid("interaction-level") == [config.removal_plan("interaction-level")]

    def test_removal_grid_sweeps(self):
        config = RunConfig(removal_user_fractions="0.01, 0.05", removal_interaction_fractions="0.2,0.8")

        plans = config.removal_grid("random-interaction")
        assert [(p.target_user_fraction, p.interaction_fraction) for p in plans] == [
            (0.01, 0.2), (0.01, 0.8), (0.05, 0.2), (0.05, 0.8),
        ]
        assert [p.target_user_fraction for p in config.removal_grid("user-level")] == [0.01, 0.05]

    def test_removal_sweep_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            RunConfig(removal_interaction_fractions="0.5,1.5")
