import json

import pytest

from cisrec.config import (
    BPRConfig,
    ExperimentConfig,
    ModelKind,
    Protocol,
    TrainConfig,
    TreeInit,
    TreeLearnConfig,
    load_config,
    parse_override,
    validate_fractions,
)
from cisrec.errors import ConfigError


def test_defaults_are_runnable():
    config = load_config()
    assert config.model.kind is ModelKind.CIS_LEARNED
    assert config.model.dim == 25
    assert config.treelearn.init is TreeInit.CLUSTER
    assert config.eval.protocols == [Protocol.EXPLICIT, Protocol.ALL_UNOBSERVED]
    assert config.split.fractions == (0.8, 0.1, 0.1)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"kind": "bpr", "dim": 8}, "threads": 2}))
    config = load_config(path, {"model.dim": 4, "treelearn.arity": 3})
    assert config.model.kind is ModelKind.BPR
    assert config.model.dim == 4
    assert config.treelearn.arity == 3
    assert config.threads == 2


def test_unknown_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"colour": "red"}}))
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(overrides={"train.momentum": 0.9})


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_bad_enum_value():
    with pytest.raises(ConfigError) as info:
        load_config(overrides={"model.kind": "svd"})
    assert "model.kind" in str(info.value)


@pytest.mark.parametrize(
    "fractions", [(0.8, 0.1), (0.5, 0.3, 0.3), (1.0, 0.0, 0.0), (0.9, 0.2, -0.1)]
)
def test_fractions_rejected(fractions):
    with pytest.raises(ConfigError):
        validate_fractions(fractions)


def test_fractions_within_tolerance():
    assert validate_fractions([0.7, 0.2, 0.1]) == (0.7, 0.2, 0.1)


@pytest.mark.parametrize(
    "factory",
    [
        lambda: TrainConfig(lr_decay=0.0),
        lambda: TrainConfig(epochs=-1),
        lambda: TreeLearnConfig(arity=1),
        lambda: TreeLearnConfig(init="spectral"),
        lambda: TreeLearnConfig(max_stalls=0),
        lambda: BPRConfig(reg=-1.0),
    ],
)
def test_section_validation(factory):
    with pytest.raises(ConfigError):
        factory()


def test_learning_rate_schedule():
    config = TrainConfig(learning_rate=0.1, lr_decay=0.5)
    assert config.rate(0) == 0.1
    assert config.rate(2) == pytest.approx(0.025)


def test_config_hash_is_stable():
    a = load_config(overrides={"model.dim": 7})
    b = load_config(overrides={"model.dim": 7})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != load_config().config_hash()


def test_round_trip_through_dict():
    config = load_config(overrides={"bmf.alpha": 0.0, "eval.protocols": ["explicit"]})
    assert ExperimentConfig.from_dict(config.to_dict()) == config


def test_parse_override():
    assert parse_override("--model.dim=8") == ("model.dim", 8)
    assert parse_override("--model.kind=bpr") == ("model.kind", "bpr")
    assert parse_override("--train.freeze-user-factors=true") == ("train.freeze_user_factors", True)
    with pytest.raises(ConfigError):
        parse_override("--model.dim")
