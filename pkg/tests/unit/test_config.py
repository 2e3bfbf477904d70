"""Unit tests for experiment configuration and process settings."""
import json

import pytest
from hypothesis import given, strategies as st
from pydantic import ValidationError

from sste.config import DEFAULT_CONFIG, DEFAULT_LAMBDA_W, ExperimentConfig
from sste.exceptions import ConfigError
from sste.models import LayerMode, RescaleRecipe
from sste.settings import Settings, get_settings, reset_settings

pytestmark = pytest.mark.unit


def test_defaults():
    """Test default values of the experiment configuration."""
    cfg = ExperimentConfig()
    assert cfg.task == "synthetic_regression"
    assert cfg.layer_mode is LayerMode.DENSE
    assert cfg.prune.n == 2 and cfg.prune.m == 4
    assert cfg.rescale.recipe == "min_mse"
    assert cfg.rescale.freeze is True
    assert cfg.sr_ste.lambda_w is None
    assert cfg.lambda_w == DEFAULT_LAMBDA_W
    assert cfg.dtype == "float32"
    assert DEFAULT_CONFIG == cfg


def test_flat_keys_are_namespaced_and_sorted():
    flat = ExperimentConfig().to_flat()
    assert list(flat) == sorted(flat)
    assert flat["prune.gamma"] == 0.0
    assert flat["model.hidden"] == [32, 32]
    assert flat["mode"] == "dense"
    assert "prune" not in flat


@given(
    mode=st.sampled_from([m.value for m in LayerMode]),
    gamma=st.floats(min_value=0.0, max_value=1.0),
    lr=st.floats(min_value=0.0, max_value=10.0),
    hidden=st.lists(st.integers(min_value=1, max_value=64), max_size=3),
    recipe=st.sampled_from([r.value for r in RescaleRecipe]),
)
def test_flat_form_is_a_fixed_point(mode, gamma, lr, hidden, recipe):
    """from_flat(to_flat(c)) reproduces c exactly."""
    cfg = ExperimentConfig().with_overrides(
        {"mode": mode, "prune.gamma": gamma, "optim.lr": lr, "model.hidden": hidden, "rescale.recipe": recipe}
    )
    again = ExperimentConfig.from_flat(cfg.to_flat())
    assert again == cfg
    assert again.to_flat() == cfg.to_flat()


def test_save_and_load(tmp_path):
    cfg = ExperimentConfig.from_flat({"name": "saved", "mode": "sr_ste", "sr_ste.lambda_w": 1e-3, "fp8.forward": "e4m3"})
    path = tmp_path / "config.json"
    cfg.save(path)
    assert json.loads(path.read_text())["sr_ste.lambda_w"] == 1e-3
    assert ExperimentConfig.load(path) == cfg


@pytest.mark.parametrize(
    "flat",
    [
        {"prune.k": 3},
        {"learning_rate": 0.1},
        {"prune": {"n": 2}},
        {"prune.n.x": 1},
        {"prune.n": 4, "prune.m": 4},
        {"prune.gamma": 1.5},
        {"mode": "magnitude"},
        {"fp8.forward": "e2m5"},
        {"dtype": "float16"},
        {"train.dense_finetune_fraction": 1.0},
        {"mvue.gradz": True, "train.batch_size": 30},
        {"mvue.gradz": True, "train.batch_size": 64, "data.n_train": 50},
    ],
)
def test_invalid_flat_configs(flat):
    """Test that unknown keys and invalid values raise ConfigError."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_flat(flat)



def test_mvue_batch_check_uses_the_effective_minibatch():
    """Only ∇Z sparsification needs the minibatch in blocks of four; a full batch counts as the minibatch."""
    assert ExperimentConfig.from_flat({"mvue.gradz": True, "train.batch_size": 64, "data.n_train": 48})
    assert ExperimentConfig.from_flat({"mvue.weights": True, "train.batch_size": 30})
    assert ExperimentConfig.from_flat({"task": "toy", "mvue.gradz": True, "train.batch_size": 1})
    cfg = ExperimentConfig.from_flat({"train.batch_size": 30})
    with pytest.raises(ConfigError):
        cfg.with_overrides({"mvue.gradz": True})

def test_with_overrides():
    cfg = ExperimentConfig().with_overrides({"mode": "s_ste", "optim.lr": None, "prune.gamma": 0.5})
    assert cfg.mode == "s_ste"
    assert cfg.optim.lr == 0.1
    assert cfg.prune_config().gamma == 0.5
    with pytest.raises(ConfigError):
        cfg.with_overrides({"optim.momentum": 0.9})


def test_sr_ste_needs_explicit_lambda():
    cfg = ExperimentConfig.from_flat({"mode": "sr_ste"})
    with pytest.raises(ConfigError):
        cfg.require_explicit_lambda()
    cfg.with_overrides({"sr_ste.lambda_w": 2e-4}).require_explicit_lambda()
    ExperimentConfig.from_flat({"mode": "hard_ste"}).require_explicit_lambda()


def test_prune_config_carries_recipe():
    cfg = ExperimentConfig.from_flat({"prune.n": 1, "prune.m": 2, "rescale.recipe": "keep_l1"})
    prune = cfg.prune_config()
    assert (prune.n, prune.m, prune.rescale) == (1, 2, RescaleRecipe.KEEP_L1)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(listed)


def test_settings_from_environment(monkeypatch, tmp_path):
    """Test that SSTE_ variables override the defaults."""
    monkeypatch.setenv("SSTE_OUTPUT_ROOT", str(tmp_path))
    monkeypatch.setenv("SSTE_LOG_LEVEL", "debug")
    monkeypatch.setenv("SSTE_WORKERS", "3")
    reset_settings()
    try:
        settings = get_settings()
        assert settings.OUTPUT_ROOT == tmp_path
        assert settings.LOG_LEVEL == "DEBUG"
        assert settings.WORKERS == 3
        assert get_settings() is settings
    finally:
        reset_settings()


def test_settings_validation(monkeypatch):
    monkeypatch.setenv("SSTE_WORKERS", "0")
    with pytest.raises(ValidationError):
        Settings()
    monkeypatch.setenv("SSTE_WORKERS", "1")
    monkeypatch.setenv("SSTE_LOG_LEVEL", "chatty")
    with pytest.raises(ValidationError):
        Settings()
