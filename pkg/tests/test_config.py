import pytest

from sanet.config import SCHEMA, ConfigError, RunConfig, help_text, parse_sections, parse_text


def test_defaults_valid_and_round_trip(tmp_path):
    rc = RunConfig.load()
    assert rc.lr0 == 1e-3 and rc.stages == 4 and rc.match_radius == 3.0
    p = tmp_path / "c.txt"
    p.write_text(rc.to_text())
    assert RunConfig.load(p).values == rc.values


def test_file_then_override_wins(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nepochs = 7  # trailing\nuse_cbam = no\n\n")
    rc = RunConfig.load(p, ["epochs=9"])
    assert rc.epochs == 9 and rc.use_cbam is False
    assert rc.model().use_cbam is False and rc.train().epochs == 9


@pytest.mark.parametrize(
    "text,msg",
    [
        ("nope = 1", "unknown config key"),
        ("epochs = many", "epochs"),
        ("use_cbam = maybe", "boolean"),
        ("cbam_order = sideways", "channel_first"),
        ("epochs 5", "key = value"),
        ("epochs = 1\nepochs = 2", "duplicate"),
        ("base_channels = 6", "multiple of 4"),
        ("synth_amplitude_min = 0\nsynth_amplitude_max = 0", "amplitude"),
        ("image_height = 60", "divisible"),
        ("n_test = 0", "n_test"),
    ],
)
def test_errors(tmp_path, text, msg):
    p = tmp_path / "c.txt"
    p.write_text(text)
    with pytest.raises(ConfigError, match=msg):
        RunConfig.load(p)


def test_override_errors():
    with pytest.raises(ConfigError, match="key=value"):
        RunConfig.load(None, ["epochs"])
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.load(None, ["lr=1"])


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        RunConfig.load(tmp_path / "none.txt")


def test_sections():
    top, secs = parse_sections("epochs = 2\n[a]\nuse_cbam = false\n[b]\n")
    assert top == {"epochs": 2} and secs == [("a", {"use_cbam": False}), ("b", {})]
    with pytest.raises(ConfigError, match="sections"):
        parse_text("[a]\n")
    with pytest.raises(ConfigError, match="duplicate section"):
        parse_sections("[a]\n[a]\n")


def test_help_lists_every_key():
    h = help_text()
    for k in SCHEMA:
        assert k.name in h and k.help in h


def test_synth_mapping():
    sp = RunConfig.load(None, ["synth_sigma_max=2.0", "image_width=128"]).synth()
    assert sp.sigma_max == 2.0 and sp.width == 128 and sp.height == 64
