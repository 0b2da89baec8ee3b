import dataclasses
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidartrack.config import ConfigError, PipelineConfig, dump_config, load_config, parse_config


def test_defaults_are_the_reference_setup():
    cfg = PipelineConfig()
    assert cfg.loss.vehicle_weight == 25 and cfg.loss.resolution_weights == (1.0, 0.7, 0.5)
    assert (cfg.cluster.max_dist, cfg.cluster.min_points, cfg.cluster.min_radius) == (1.0, 25, 0.5)
    assert cfg.tracker.prune_threshold == 0.001 and cfg.cluster.noise_gain == 100
    assert cfg.tracker.init_sigmas == (2.0, 2.0, math.pi / 2, 20.0, 0.2)
    assert (cfg.projection.height, cfg.projection.width) == (64, 451)


def test_empty_text_gives_defaults(tmp_path):
    assert parse_config("") == PipelineConfig()
    assert load_config(None) == PipelineConfig()
    p = tmp_path / "c.ini"
    p.write_text("")
    assert load_config(p) == PipelineConfig()


def test_round_trip_defaults():
    cfg = PipelineConfig()
    assert parse_config(dump_config(cfg)) == cfg


@given(st.floats(0.01, 50), st.integers(1, 100), st.sampled_from(["oracle", "geometric", "net"]),
       st.floats(0.1, 0.9), st.booleans(), st.integers(0, 2**31))
def test_round_trip_random(w, pts, det, lam, trucks, seed):
    cfg = PipelineConfig(detector=det, seed=seed)
    cfg.loss.vehicle_weight = w
    cfg.loss.resolution_weights = (1.0, lam, lam / 2)
    cfg.cluster.min_points = pts
    cfg.evaluation.include_trucks = trucks
    assert parse_config(dump_config(cfg)) == cfg


def test_overrides():
    cfg = parse_config("[pipeline]\ndetector = geometric\nseed = 9\n[cluster]\nmax_dist = 0.8\n"
                       "[tracker]\nprior_dims = 2.0, 5.0\n")
    assert cfg.detector == "geometric" and cfg.seed == 9 and cfg.cluster.max_dist == 0.8
    assert cfg.tracker.prior_dims == (2.0, 5.0)
    assert dataclasses.replace(cfg, seed=0).cluster.max_dist == 0.8


@pytest.mark.parametrize("text, field", [
    ("[loss]\nvehicle_weight = -1", "loss.vehicle_weight"),
    ("[loss]\nresolution_weights = 1, 0.7", "loss.resolution_weights"),
    ("[cluster]\nmin_points = many", "cluster.min_points"),
    ("[cluster]\nscore_threshold = 1.5", "cluster.score_threshold"),
    ("[pipeline]\ndetector = radar", "pipeline.detector"),
    ("[tracker]\nbogus = 1", "tracker.bogus"),
    ("[nonsense]\nx = 1", "nonsense"),
    ("[evaluation]\ninclude_trucks = maybe", "evaluation.include_trucks"),
    ("[train]\nlr = nan", "train.lr"),
    ("not an ini file", "syntax"),
])
def test_field_level_errors(text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert any(e.startswith(field) for e in exc.value.errors)


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as exc:
        parse_config("[loss]\nvehicle_weight = 0\n[ground]\ntolerance = -1\n")
    assert len(exc.value.errors) == 2
