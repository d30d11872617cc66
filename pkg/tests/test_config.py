import pytest

from minivd.config import DataConfig, ModelConfig, RunConfig, TextConfig


def test_roundtrip_through_dict():
    cfg = RunConfig(loss="wle", tau=1.5, seed=3)
    restored = RunConfig.from_dict(cfg.to_dict())
    assert restored == cfg


def test_roundtrip_through_file(tmp_path):
    cfg = RunConfig(
        data=DataConfig(train_dialogues=10, feature_dim=16),
        model=ModelConfig(hidden_dim=16),
        epochs=1,
    )
    path = tmp_path / "config.json"
    cfg.save(path)
    assert RunConfig.load(path) == cfg


def test_hash_is_stable_and_sensitive():
    a = RunConfig(seed=1)
    b = RunConfig(seed=1)
    c = RunConfig(seed=2)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 16


def test_loss_validation():
    with pytest.raises(ValueError):
        RunConfig(loss="gan")


def test_feature_width_must_match_hidden():
    with pytest.raises(ValueError):
        RunConfig(data=DataConfig(feature_dim=32), model=ModelConfig(hidden_dim=64))


def test_with_overrides():
    cfg = RunConfig(seed=1)
    other = cfg.with_overrides(seed=9, loss="wle")
    assert other.seed == 9
    assert other.loss == "wle"
    assert cfg.seed == 1
