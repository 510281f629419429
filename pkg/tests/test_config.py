from __future__ import annotations

import pytest

from stereotrack.config import PipelineConfig, config_from_dict, format_config, load_config, read_config
from stereotrack.errors import ConfigError
from stereotrack.metrics import DEFAULT_ALPHAS


def test_defaults():
    cfg = read_config(None)
    assert cfg == PipelineConfig()
    r = cfg.reid()
    assert (r.window, r.radius, r.overlap_limit, r.min_track_len) == (100, 50.0, 10, 30)
    e = cfg.evaluation()
    assert e.mode == "center" and e.dist_threshold is None and e.alphas == DEFAULT_ALPHAS
    assert cfg.image_size == (1920, 1080) and cfg.fps == 240.0


def test_load_overrides_with_comments():
    text = """
    # tuning for a slow camera
    fps = 120        # frames per second
    reid_radius = 35.5
    match_one_to_one = optimal
    eval_dist_threshold = 12
    eval_alphas = 0.25, 0.5 0.75
    svg = no
    """
    cfg = load_config(text)
    assert cfg.fps == 120.0 and cfg.reid_radius == 35.5
    assert cfg.match_one_to_one == "optimal" and cfg.svg is False
    assert cfg.eval_dist_threshold == 12.0 and cfg.eval_alphas == (0.25, 0.5, 0.75)
    assert load_config("eval_dist_threshold = auto", cfg).eval_dist_threshold is None


@pytest.mark.parametrize(
    "text",
    [
        "no_such_key = 1",
        "fps 240",
        "fps = fast",
        "svg = maybe",
        "reid_window = 1.5",
        "match_one_to_one = sometimes",
        "fps = -1",
        "reid_window = 5",
        "eval_alphas = 0 0.5",
        "eval_mode = giou",
    ],
)
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        load_config(text)


def test_format_round_trip():
    cfg = load_config("fps = 100\neval_alphas = 0.1 0.9\nsvg = false\nid_start = 1")
    assert load_config(format_config(cfg)) == cfg
    assert load_config(format_config(PipelineConfig())) == PipelineConfig()


def test_dict_round_trip():
    cfg = load_config("eval_dist_threshold = 7.5")
    assert config_from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})


def test_read_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("reid_min_track_len = 10\n")
    assert read_config(p).reid().min_track_len == 10
