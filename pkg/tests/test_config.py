import pytest

from rs4d.config import KEYS, parse_file, resolve
from rs4d.errors import ConfigError


def test_defaults():
    cfg = resolve()
    assert set(cfg) == {k.name for k in KEYS}
    assert cfg.hidden == 64 and cfg.decoder_hidden == (128, 128) and cfg.deterministic is True
    assert str(cfg.dataset_path()).endswith("dataset.s4ds")


def test_file_then_override(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nepochs = 3   # trailing\nlr=0.01\n\n")
    cfg = resolve(parse_file(path), {"epochs": "5"})
    assert cfg.epochs == 5 and cfg.lr == 0.01


def test_unknown_key_is_named(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("epoch = 3\n")
    with pytest.raises(ConfigError, match="'epoch'"):
        parse_file(path)


@pytest.mark.parametrize(
    "key,value",
    [("epochs", "many"), ("s4dc", "maybe"), ("model", "lstm"), ("noise_mode", "loud"), ("eval_split", "dev")],
)
def test_bad_values(key, value):
    with pytest.raises(ConfigError, match=key):
        resolve(overrides={key: value})


def test_text_round_trip():
    cfg = resolve(overrides={"counts": "1,2,3", "s4dc": "yes"})
    again = resolve(cfg.as_text())
    assert again == cfg
