import pytest

from scenariogan import config as C


def test_defaults_cover_every_key():
    cfg = C.resolve()
    assert set(cfg) == set(C.KEYS)
    assert cfg["batch_size"] == 64 and cfg["gp_lambda"] == 10.0 and cfg["n_critic"] == 5


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\niterations = 7\nsensors = 4  # trailing\n")
    cfg = C.resolve("desk", path, ["sensors=2"])
    # profile < file < override
    assert cfg["iterations"] == 7 and cfg["sensors"] == 2 and cfg["steps"] == 5000


def test_render_round_trip(tmp_path):
    cfg = C.resolve("paper", overrides=["recurrent_hidden=16,8", "anomaly_step=10", "ttur=false"])
    path = tmp_path / "echo.cfg"
    path.write_text(C.render(cfg))
    assert C.resolve(path=path) == cfg


@pytest.mark.parametrize("pair", ["bogus=1", "iterations=lots", "ttur=maybe", "noequals"])
def test_bad_pairs(pair):
    with pytest.raises(C.ConfigError):
        C.resolve(overrides=[pair])


def test_bad_file_line(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("iterations 5\n")
    with pytest.raises(C.ConfigError, match=":1:"):
        C.read_file(path)


def test_unknown_profile():
    with pytest.raises(C.ConfigError, match="profile"):
        C.resolve("huge")


def test_typed_views():
    cfg = C.resolve(overrides=["sensors=3", "window=12"])
    g, c = C.generator_spec(cfg, 3), C.critic_spec(cfg, 3)
    assert g.window == c.window == 12 and g.n_sensors == 3
    assert C.synthetic_config(cfg).sensors == 3
    assert C.train_config(cfg, iterations=5).iterations == 5
    assert C.predictor_spec(cfg).repeats == 5


def test_describe_lists_every_key():
    text = C.describe_keys()
    assert all(name in text for name in C.KEYS)
