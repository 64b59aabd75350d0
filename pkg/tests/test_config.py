import json

import pytest
from pydantic import ValidationError

from mindcross.config import (
    ModelConfig,
    RunConfig,
    Settings,
    SynthConfigFile,
    SyntheticConfig,
    TrainConfigFile,
    config_digest,
    load_config_file,
)
from mindcross.utilities.errors import ConfigError


def test_settings_read_prefixed_environment(monkeypatch):
    """Test that settings come from MINDCROSS_ environment variables."""
    monkeypatch.setenv("MINDCROSS_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("MINDCROSS_RECORD_WALL_TIME", "false")
    monkeypatch.setenv("MINDCROSS_EVAL_TRIALS", "7")
    settings = Settings(_env_file=None)
    assert settings.log_level == "DEBUG"
    assert settings.record_wall_time is False
    assert settings.eval_trials == 7


def test_load_config_file_applies_overrides(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"config_version": 1, "model": {"hidden": 16},
                                "run": {"epochs_train": 5, "da_variant": "kl"}}))
    config = load_config_file(path, TrainConfigFile,
                              {"run.epochs_train": 9, "run.seed": None, "model.dropout_p": 0.0})
    assert config.model.hidden == 16
    assert config.model.dropout_p == 0.0
    assert config.run.epochs_train == 9
    assert config.run.seed == 0
    assert config.run.da_variant == "kl"


def test_load_config_file_without_path_uses_defaults():
    config = load_config_file(None, SynthConfigFile, {"synthetic.n_subjects": 3})
    assert config.synthetic.n_subjects == 3
    assert config.synthetic.n_classes == SyntheticConfig().n_classes


def test_load_config_file_rejects_bad_input(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config_file(bad_json, TrainConfigFile)

    future = tmp_path / "future.json"
    future.write_text(json.dumps({"config_version": 99}))
    with pytest.raises(ConfigError, match="config_version"):
        load_config_file(future, TrainConfigFile)

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"run": {"epochs": 3}}))
    with pytest.raises(ValidationError):
        load_config_file(unknown, TrainConfigFile)


def test_config_digest_is_canonical():
    run = RunConfig(seed=3)
    assert config_digest(run) == config_digest(run.model_dump(mode="json"))
    assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})
    assert config_digest(run) != config_digest(RunConfig(seed=4))
    assert len(config_digest(run)) == 64


@pytest.mark.parametrize("subjects", [[], ["a", "a"], ["a", "shared"]])
def test_model_config_rejects_bad_subjects(subjects):
    with pytest.raises(ValidationError):
        ModelConfig(embed_dim=4, subjects=subjects)


def test_run_config_validation():
    with pytest.raises(ValidationError):
        RunConfig(batch_size=1)
    with pytest.raises(ValidationError):
        RunConfig(loss_terms=["rec", "rec"])
    with pytest.raises(ValidationError):
        RunConfig(da_variant="mmd")
    assert RunConfig(epochs_calib=0).epochs_calib == 0


def test_synthetic_config_validation():
    with pytest.raises(ValidationError):
        SyntheticConfig(m=4, latent_dim=8)
    with pytest.raises(ValidationError):
        SyntheticConfig(n_subjects=2, clone_source="subj3")
    assert SyntheticConfig(n_subjects=3).subject_ids() == ["subj1", "subj2", "subj3"]


def test_check_top_k_against_subject_count():
    RunConfig(top_k=3).check_top_k(3)
    with pytest.raises(ConfigError, match="top_k=4"):
        RunConfig(top_k=4).check_top_k(3)
