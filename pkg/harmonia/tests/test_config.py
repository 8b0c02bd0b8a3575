"""Layered settings and their validation."""

import json

import pytest
from singer_sdk.exceptions import ConfigValidationError

from harmonia.config import (
    EFFECTIVE_CONFIG,
    EVAL_SCHEMA,
    SAMPLE_SCHEMA,
    THREADS_ENV,
    TRAIN_SCHEMA,
    echo_settings,
    load_settings,
)
from harmonia.exceptions import ConfigError


@pytest.fixture(autouse=True)
def no_thread_env(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)


def test_defaults_are_limited_to_the_schema():
    settings = load_settings(schema=TRAIN_SCHEMA)
    assert settings["template_weight"] == 5.0
    assert settings["seeds"] == [123, 456, 789]
    assert (settings["epochs_phase1"], settings["epochs_phase2"], settings["patience"]) == (480, 240, 80)
    assert "kind" not in settings and "phase" not in settings


def test_file_then_environment_then_flags(tmp_path, monkeypatch, caplog):
    path = tmp_path / "run.env"
    path.write_text("lr = 0.01\nseeds = 1, 2\nthreads = 2\nkind = roman\n")
    settings = load_settings(path, schema=TRAIN_SCHEMA)
    assert settings["lr"] == 0.01
    assert settings["seeds"] == [1, 2]
    assert settings["threads"] == 2
    assert "kind" not in settings
    assert "kind" in caplog.text

    monkeypatch.setenv(THREADS_ENV, "3")
    assert load_settings(path, schema=TRAIN_SCHEMA)["threads"] == 3
    assert load_settings(path, {"threads": 5, "lr": None}, TRAIN_SCHEMA)["threads"] == 5
    assert load_settings(path, {"threads": 5, "lr": None}, TRAIN_SCHEMA)["lr"] == 0.01


def test_file_values_take_the_declared_type(tmp_path):
    path = tmp_path / "sample.env"
    path.write_text("n_sequences=4\ntemplate_weight=2\n")
    settings = load_settings(path, schema=SAMPLE_SCHEMA)
    assert settings["n_sequences"] == 4 and isinstance(settings["n_sequences"], int)
    assert settings["template_weight"] == 2.0 and isinstance(settings["template_weight"], float)


@pytest.mark.parametrize(
    "overrides, schema",
    [
        ({"lr": -1.0}, TRAIN_SCHEMA),
        ({"template_weight": 0.0}, TRAIN_SCHEMA),
        ({"beta_cap": 1.5}, TRAIN_SCHEMA),
        ({"seeds": []}, TRAIN_SCHEMA),
        ({"phase": 3}, TRAIN_SCHEMA),
        ({"kind": "key"}, EVAL_SCHEMA),
        ({"threads": 0}, EVAL_SCHEMA),
    ],
)
def test_invalid_values(overrides, schema):
    with pytest.raises(ConfigError) as info:
        load_settings(None, overrides, schema)
    assert info.value.errors
    assert isinstance(info.value, ConfigValidationError)


def test_uncoercible_file_value(tmp_path):
    path = tmp_path / "bad.env"
    path.write_text("patience=soon\n")
    with pytest.raises(ConfigError) as info:
        load_settings(path, schema=TRAIN_SCHEMA)
    assert "patience" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "absent.env")


def test_effective_config_is_written(tmp_path):
    settings = load_settings(None, {"lr": 0.5}, TRAIN_SCHEMA)
    path = echo_settings(settings, tmp_path / "out")
    assert path.name == EFFECTIVE_CONFIG
    assert json.loads(path.read_text()) == settings
    assert path.read_text().startswith('{\n    "batch_size"')
