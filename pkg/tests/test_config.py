import json

import pytest

from regimelab.config import (
    ConfigError,
    RunConfig,
    config_fingerprint,
    load_config,
    parse_config_dict,
)
from regimelab.market_sim import RegimeSchedule, RegimeSpec


def test_defaults_load_without_a_file():
    config = load_config(None)
    assert isinstance(config, RunConfig)
    assert config.seed == 0
    assert config.out_dir == "runs/default"
    assert config.simulate.horizon == 600
    assert config.dataset.ratios == [0.7, 0.15, 0.15]
    assert config.model.arch == "mlp"
    assert config.train.sft.learning_rate == 0.1
    assert config.train.rm.optimizer == "adam"
    assert config.train.rlmf_rounds == 40
    assert config.deploy.kl_anchor == "window"
    assert config.ig.perplexity == 12.0
    assert config.eval.greedy is True


def test_empty_dict_equals_defaults():
    assert parse_config_dict({}) == load_config(None)


def test_full_file_overrides_every_section(tmp_path):
    text = """
[run]
seed = 11
out_dir = "runs/exp1"

[simulate]
horizon = 300
init_price = 50.0
mu = [0.2, -0.2, 0.0]
phi = [0.0, 0.0, 0.0]
sigma = [0.4, 0.9, 1.5]
transition = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]
initial_dist = [1.0, 0.0, 0.0]
shock_dist = "laplace"

[simulate.shift]
at_step = 150
mu = [-0.2, 0.2, 0.0]

[dataset]
depth = 5
news_dim = 4
news_snr = 2.0
ratios = [0.6, 0.2, 0.2]
shuffle = true
base_date = "2015-01-05"

[model]
arch = "linear"
hidden = 8

[train.sft]
learning_rate = 0.2
epochs = 12

[train.rm]
batch_size = 16

[train.rlmf]
rounds = 5
use_mf = false
kl_coef = 0.5

[deploy]
window = 25
kl_anchor = "initial"
replay = true

[deploy.updates]
optimizer = "adam"
learning_rate = 0.01

[ig]
source = "features"
perplexity = 8.0
n_iter = 400
radius = 2.5

[eval]
greedy = false
"""
    path = tmp_path / "run.toml"
    path.write_text(text)
    config = load_config(str(path))
    assert config.seed == 11 and config.out_dir == "runs/exp1"
    assert config.simulate.horizon == 300
    assert config.simulate.shock_dist == "laplace"
    assert config.simulate.shift.at_step == 150
    assert config.simulate.shift.mu == [-0.2, 0.2, 0.0]
    assert config.simulate.shift.sigma is None
    assert config.dataset.depth == 5 and config.dataset.shuffle is True
    assert config.model.arch == "linear"
    assert config.train.sft.learning_rate == 0.2 and config.train.sft.epochs == 12
    assert config.train.rm.batch_size == 16
    assert config.train.rlmf.kl_coef == 0.5
    assert config.train.rlmf_rounds == 5 and config.train.use_mf is False
    assert config.deploy.window == 25 and config.deploy.kl_anchor == "initial"
    assert config.deploy.replay is True
    assert config.deploy.updates.learning_rate == 0.01
    assert config.ig.source == "features" and config.ig.radius == 2.5
    assert config.eval.greedy is False


def test_build_spec_without_shift_is_a_plain_spec():
    config = parse_config_dict({})
    assert isinstance(config.simulate.build_spec(), RegimeSpec)


def test_build_spec_with_shift_is_a_schedule():
    config = parse_config_dict(
        {"simulate": {"shift": {"at_step": 100, "mu": [-0.06, 0.09]}}}
    )
    schedule = config.simulate.build_spec()
    assert isinstance(schedule, RegimeSchedule)


@pytest.mark.parametrize(
    "data, fragment",
    [
        ({"bogus": 1}, "root"),
        ({"run": {"sede": 1}}, "run"),
        ({"simulate": {"horzon": 10}}, "simulate"),
        ({"train": {"sft": {"lr": 0.1}}}, "train.sft"),
        ({"train": {"rlmf": {"rondas": 2}}}, "train.rlmf"),
        ({"deploy": {"updates": {"momentum2": 0.9}}}, "deploy.updates"),
        ({"simulate": {"shift": {"at_step": 5, "muu": [1.0]}}}, "simulate.shift"),
    ],
)
def test_unknown_keys_are_rejected_with_their_path(data, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config_dict(data)


@pytest.mark.parametrize(
    "data",
    [
        {"run": {"seed": "zero"}},
        {"run": {"seed": -1}},
        {"simulate": {"horizon": 0}},
        {"simulate": {"horizon": True}},
        {"simulate": {"mu": "big"}},
        {"simulate": {"mu": [0.1, "x"]}},
        {"simulate": {"transition": [0.5, 0.5]}},
        {"simulate": {"shock_dist": "cauchy"}},
        {"simulate": {"shift": {"mu": [0.0, 0.0]}}},
        {"dataset": {"ratios": [0.5, 0.5]}},
        {"dataset": {"ratios": [0.5, 0.4, 0.2]}},
        {"dataset": {"depth": 0}},
        {"model": {"arch": "transformer"}},
        {"model": {"hidden": 0}},
        {"train": {"sft": {"learning_rate": -1.0}}},
        {"train": {"sft": {"seed": 3}}},
        {"train": {"rlmf": {"rounds": -1}}},
        {"deploy": {"window": 0}},
        {"deploy": {"kl_anchor": "midpoint"}},
        {"deploy": {"updates": {"optimizer": "rmsprop"}}},
        {"ig": {"source": "prices"}},
        {"ig": {"perplexity": 1.0}},
        {"ig": {"n_iter": 100}},
        {"ig": {"radius": 0.0}},
        {"eval": {"greedy": 1}},
        {"run": "not a table"},
    ],
)
def test_invalid_values_are_rejected(data):
    with pytest.raises(ConfigError):
        parse_config_dict(data)


def test_missing_file_and_bad_toml_raise_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "nope.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("run = {seed = ")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(str(bad))


def test_fingerprint_is_json_serializable_and_complete():
    config = parse_config_dict({"run": {"seed": 3}})
    fp = config_fingerprint(config)
    text = json.dumps(fp, sort_keys=True, allow_nan=False)
    assert '"seed": 3' in text
    for section in ("simulate", "dataset", "model", "train", "deploy", "ig", "eval"):
        assert section in fp
    assert fp["train"]["sft"]["learning_rate"] == 0.1
    assert fp["simulate"]["shift"] is None
