import pytest

from demoforge.config import ENV_VAR, ConfigError, PipelineConfig, format_repair_section, load_config, override, parse_config
from demoforge.repair import RepairConfig

TEXT = """
[workspace]
aabb_min = -0.3, -0.5, 0.6
aabb_max = 0.7, 0.5, 1.6
floor_z = 0.76

[repair]
saliency_min_dist = 0.03
risk_zone.shelf = 0.1,0.1,0.8, 0.3,0.3,1.0,  0.2,0.2,1.1, 0,0,0,1

[buffer]
interval = 5
strategy = conventional

[render]
views = +z, -y
invert_mode = image

[run]
seed = 4
"""


def test_parse_full():
    cfg = parse_config(TEXT)
    assert cfg.workspace.floor_z == 0.76
    assert cfg.repair.saliency_min_dist == 0.03
    assert len(cfg.repair.risk_zones) == 1 and cfg.repair.risk_zones[0].prep_pose.position == (0.2, 0.2, 1.1)
    assert cfg.buffer.interval == 5 and cfg.buffer.strategy == "conventional"
    assert cfg.render.views == ("+z", "-y") and cfg.render.invert_mode == "image"
    assert cfg.seed == 4 and cfg.threads == 1


def test_defaults():
    assert parse_config("") == PipelineConfig()


@pytest.mark.parametrize(
    "text",
    [
        "[nope]\na = 1\n",
        "[buffer]\nstride = 3\n",
        "[buffer]\ninterval = ten\n",
        "[buffer]\nstrategy = lazy\n",
        "[render]\nviews = +w\n",
        "[repair]\nrisk_zone.a = 1, 2, 3\n",
        "[repair]\nretreat_alpha = 1.5\n",
        "[workspace]\naabb_min = 1, 1, 1\n",
        "not an ini file",
    ],
)
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_precedence(tmp_path, monkeypatch):
    p = tmp_path / "c.ini"
    p.write_text("[buffer]\ninterval = 7\n")
    monkeypatch.setenv(ENV_VAR, str(p))
    cfg = load_config()
    assert cfg.buffer.interval == 7
    assert override(cfg, "buffer", interval=3, strategy=None).buffer.interval == 3
    assert override(cfg, "buffer", interval=None).buffer.interval == 7
    monkeypatch.delenv(ENV_VAR)
    assert load_config().buffer.interval == 10


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/demoforge.ini")


def test_repair_section_roundtrip():
    cfg = parse_config(TEXT).repair
    again = parse_config(format_repair_section(cfg)).repair
    assert again == cfg
    assert parse_config(format_repair_section(RepairConfig())).repair == RepairConfig()
