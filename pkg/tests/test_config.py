import json

import pytest

from drifa import config
from drifa.config import RunConfig
from drifa.errors import ConfigError


def test_paper_defaults():
    cfg = RunConfig.for_profile("paper")
    t = cfg.train
    assert (t.epochs, t.batch_size, t.lr) == (200, 32, 0.001)
    assert (t.scheduler_factor, t.scheduler_patience, t.min_lr) == (0.2, 5, 1e-5)
    assert (cfg.uq.ensembles, cfg.uq.iterations, cfg.uq.dropout_rate) == (5, 20, 0.25)
    assert cfg.ensemble_config().passes == 100
    assert cfg.data.fractions == [0.8, 0.1, 0.1]


def test_hash_encodes_training_defaults():
    cfg = RunConfig.for_profile("paper")
    canonical = json.loads(cfg.to_json())["train"]
    assert (canonical["epochs"], canonical["batch_size"], canonical["lr"]) == (200, 32, 0.001)
    for change in ({"epochs": 199}, {"batch_size": 16}, {"lr": 0.002}):
        assert cfg.with_overrides(train=change).hash() != cfg.hash()
    assert RunConfig.for_profile("paper").hash() == cfg.hash()


def test_desk_profile():
    cfg = RunConfig.for_profile("desk")
    assert cfg.train.epochs == 30 and cfg.data.image_size == [8, 8, 1] and cfg.model.channels == 8
    assert cfg.train.lr == 0.001 and cfg.train.batch_size == 32


def test_round_trip(tmp_path):
    cfg = RunConfig.for_profile("desk").with_overrides(
        model={"mfa": False, "omega_c": False, "task_weights": [0.5, 0.5]},
        data={"tasks": 2, "classes_per_task": [3, 2], "noise_sigma": 0.25},
        uq={"seeds": [1, 2, 3, 4, 5]},
    )
    assert config.loads(cfg.to_json()) == cfg
    config.dump(cfg, tmp_path / "c.json")
    back = config.load(tmp_path / "c.json")
    assert back == cfg and back.to_json() == cfg.to_json() and back.hash() == cfg.hash()


def test_ints_accepted_for_floats():
    cfg = config.loads('{"train": {"lr": 1}}')
    assert cfg.train.lr == 1.0 and isinstance(cfg.train.lr, float)


@pytest.mark.parametrize("text", [
    '{"trian": {}}',
    '{"train": {"epoch": 3}}',
    '{"profile": "laptop"}',
    '{"train": {"epochs": "ten"}}',
    '{"model": {"mfa": 1}}',
    '{"train": {"epochs": 0}}',
    '{"train": {"augment": ["shear"]}}',
    '{"data": {"fractions": [0.5, 0.5, 0.5]}}',
    '{"uq": {"ensembles": 2, "seeds": [1]}}',
    '{"model": {"dropout": 1.0}}',
    '[1, 2]',
    '{"train": ',
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        config.loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "nope.json")


def test_net_config_wiring():
    cfg = RunConfig.for_profile("desk").with_overrides(model={"downsample": [1], "mifa": False})
    net_cfg = cfg.net_config(modalities=3, in_channels=2, classes_per_task=[4])
    assert net_cfg.modalities == 3 and net_cfg.in_channels == 2
    assert net_cfg.downsample == (1,) and net_cfg.classes_per_task == (4,)
    assert not net_cfg.use_mifa
