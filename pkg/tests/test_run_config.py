import json

import pytest

from partmask_hub.core.exceptions import InvalidParameterError
from partmask_hub.core.run_config import (
    VARIANT_INTERPRETABLE,
    VARIANT_NO_FILTER_LOSS,
    VARIANT_ORDINARY,
    RunConfig,
    build_generator_config,
    build_layer_config,
    build_train_config,
    read_config_file,
    resolve_variant,
)
from partmask_hub.core.tensor import TaskLossKind


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        "[train]\nepochs = 5\nlr = 0.05\n\n"
        "[generator]\njitter = 1\n\n"
        "[layer]\nbeta = 2.5\n",
        encoding="utf-8",
    )
    return path


def test_flags_override_file_override_defaults(config_file):
    file_config = read_config_file(config_file)
    config = build_train_config({"epochs": 3, "lr": None}, file_config)
    assert config.epochs == 3
    assert config.lr == 0.05
    assert config.batch_size == 16
    assert config.seed == 7


def test_defaults_without_file():
    config = build_train_config({}, read_config_file(None))
    assert config.epochs == 40
    assert config.momentum == 0.9
    assert config.ema_decay == 0.99


def test_loss_kind_parsed():
    config = build_train_config({"loss_kind": "logistic"}, {})
    assert config.loss_kind is TaskLossKind.LOGISTIC


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv("GBX_THREADS", "3")
    assert build_train_config({}, {}).workers == 3
    monkeypatch.setenv("GBX_THREADS", "many")
    with pytest.raises(ValueError):
        build_train_config({}, {})


def test_generator_and_layer_sections(config_file):
    file_config = read_config_file(config_file)
    generator = build_generator_config({"clutter": 0, "negative": None}, file_config)
    assert generator.jitter == 1 and generator.clutter == 0 and generator.seed == 7
    assert not generator.negative
    layer = build_layer_config({"tau": 0.01}, file_config)
    assert layer.beta == 2.5 and layer.tau == 0.01 and layer.alpha is None


def test_unknown_key_rejected():
    with pytest.raises(InvalidParameterError):
        build_train_config({"epoch": 3}, {})


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[model]\nsize = 1\n", encoding="utf-8")
    with pytest.raises(InvalidParameterError):
        read_config_file(path)


def test_invalid_value_surfaces_as_value_error():
    with pytest.raises(ValueError):
        build_train_config({"batch_size": 0}, {})


@pytest.mark.parametrize(
    "no_mask,no_filter_loss,expected",
    [
        (False, False, VARIANT_INTERPRETABLE),
        (False, True, VARIANT_NO_FILTER_LOSS),
        (True, False, VARIANT_ORDINARY),
        (True, True, VARIANT_ORDINARY),
    ],
)
def test_resolve_variant(no_mask, no_filter_loss, expected):
    assert resolve_variant(no_mask=no_mask, no_filter_loss=no_filter_loss) == expected


def test_run_config_is_json_serializable(config_file):
    file_config = read_config_file(config_file)
    run = RunConfig(
        command="train",
        paths={"archive": "data/scenes"},
        train=build_train_config({}, file_config),
        generator=build_generator_config({}, file_config),
        layer=build_layer_config({}, file_config),
        variant=VARIANT_INTERPRETABLE,
    )
    data = json.loads(json.dumps(run.to_dict()))
    assert data["train"]["epochs"] == 5
    assert data["train"]["loss_kind"] == "softmax"
    assert data["layer"]["beta"] == 2.5
