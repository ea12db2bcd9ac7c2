import pytest

from dpgauss.config import DEFAULT_PATH, load_constants, parse_key_values, update_constant
from dpgauss.errors import ConfigError


def test_defaults_load_and_are_positive():
    c = load_constants()
    assert all(v > 0 for v in c.as_dict().values())
    assert c.alpha0 == 0.1 and c.refine_radius == 0.25


def test_parse_comments_and_errors():
    assert parse_key_values("a = 1  # note\n\n# skip\nb=2") == {"a": "1", "b": "2"}
    with pytest.raises(ConfigError):
        parse_key_values("just text")


def test_overrides():
    c = load_constants(overrides={"c2": 30})
    assert c.c2 == 30.0
    with pytest.raises(ConfigError):
        load_constants(overrides={"c9": 1})


def test_update_constant_round_trip(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(DEFAULT_PATH.read_text())
    update_constant(p, "c3", 1.25, "calibrated: test")
    assert load_constants(p).c3 == 1.25
    assert "calibrated: test" in p.read_text()


def test_missing_and_unknown(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("c1 = 1\n")
    with pytest.raises(ConfigError, match="missing"):
        load_constants(p)
    p.write_text(DEFAULT_PATH.read_text() + "extra = 2\n")
    with pytest.raises(ConfigError, match="unknown"):
        load_constants(p)
    with pytest.raises(ConfigError):
        load_constants(tmp_path / "nope.cfg")
