import io
import json

import numpy as np
import pytest

from junction_watch import pipeline, simulator
from junction_watch.errors import ConfigError, DataError, MissingBaseline
from junction_watch.routes import Normalizer
from junction_watch.tracking import TrackerConfig, Trajectory
from support import run_pipeline


def test_config_defaults():
    cfg = pipeline.PipelineConfig()
    assert (cfg.window_size, cfg.degree_threshold, cfg.fps) == (5, 2, 10.0)
    assert cfg.degrees == tuple(range(1, 21))


def test_config_round_trip(tmp_path):
    cfg = pipeline.PipelineConfig(
        width=1280,
        height=960,
        routes="routes.json",
        normalizer=Normalizer(-10, 10, -5, 5),
        tracker=TrackerConfig(gate=0.2, max_misses=3),
        window_size=4,
        mode="per_vehicle",
    )
    pipeline.save_config(cfg, tmp_path / "c.json")
    back = pipeline.load_config(tmp_path / "c.json")
    # relative paths resolve against the config's directory
    assert back.routes == str(tmp_path / "routes.json")
    assert back == pipeline.config_from_dict(pipeline.config_to_dict(cfg), tmp_path)
    assert back.tracker_config().width == 1280 and back.tracker.gate == 0.2
    assert pipeline.config_from_dict({}) == pipeline.PipelineConfig()


@pytest.mark.parametrize(
    "data",
    [
        {"anomaly": {"degrees": [0, 20]}},
        {"anomaly": {"degrees": [1, 25]}},
        {"anomaly": {"error_threshold": -1}},
        {"anomaly": {"mode": "median"}},
        {"camera": {"fps": 0}},
        {"camera": {"width": "wide"}},
        {"anomaly": {"degrees": 3}},
    ],
)
def test_config_validation(data):
    with pytest.raises(ConfigError):
        pipeline.config_from_dict(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        pipeline.load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        pipeline.load_config(tmp_path / "bad.json")


def test_trajectory_io_round_trip():
    t = Trajectory(7, np.array([0.0, 0.1]), np.array([[1.5, 2.0], [3.0, 4.25]]), np.array([0, 1]), np.zeros((2, 2)), False)
    buf = io.StringIO()
    pipeline.write_trajectories([t], buf)
    (back,) = pipeline.read_trajectories(io.StringIO(buf.getvalue()))
    assert back.track_id == 7 and not back.complete
    np.testing.assert_array_equal(back.points, t.points)
    np.testing.assert_array_equal(back.frames, t.frames)
    for bad in ['{"track_id": 1}', "not json", '{"track_id": 1, "timestamps": [0], "points": [[0, 0], [1, 1]]}']:
        with pytest.raises(DataError):
            pipeline.read_trajectories(io.StringIO(bad + "\n"))


def test_straight_routes_baseline_degree_one(setup_day):
    _, report = setup_day
    for rid in ("EB", "WB", "NB", "SB"):
        assert report.baselines[rid].lowest_degree == 1
    for rid in ("EN", "WS"):
        assert report.baselines[rid].lowest_degree in (3, 4)


def test_missing_baseline_raises(setup_day, models, cfg):
    run, report = setup_day
    partial = {k: v for k, v in report.baselines.items() if k != "EB"}
    eb = [ct for ct in run.classified if ct.route_id == "EB"][:1]
    with pytest.raises(MissingBaseline, match="EB"):
        pipeline.detect(eb, partial, models, cfg)


@pytest.mark.slow
def test_clean_day_has_no_anomalies(setup_day, lens, cfg, models, normalizer):
    _, report = setup_day
    run = run_pipeline(simulator.default_script(duration=900.0, seed=21), lens, cfg, models, normalizer)
    verdicts = pipeline.detect(run.classified, report.baselines, models, cfg)
    assert len(verdicts) > 50
    assert not any(v.is_anomaly for v in verdicts)


@pytest.mark.slow
def test_stall_detected_within_six_vehicles(setup_day, lens, cfg, models, normalizer):
    _, report = setup_day
    inc = simulator.IncidentSpec("stall", "EB", 300.0, 300.0)
    script = simulator.default_script(duration=900.0, seed=22, incidents=(inc,))
    run = run_pipeline(script, lens, cfg, models, normalizer)
    verdicts = pipeline.detect(run.classified, report.baselines, models, cfg)
    onset = run.output.truth.incidents[0]["start"]
    after = [v for v in verdicts if v.route_id == "EB" and v.timestamp >= onset]
    flagged = [i for i, v in enumerate(after) if v.is_anomaly]
    assert flagged and flagged[0] < 6


def test_no_incident_diffs_chain_previous_day(models, cfg):
    # identical days give identical degrees, so every diff is zero
    from junction_watch.routes import ClassifiedTrajectory

    x = np.linspace(0, 1, 30)
    day = [
        ClassifiedTrajectory(Trajectory(i, x + i, np.column_stack([x, np.full(30, 0.525)])), "EB", 0.0, {})
        for i in range(25)
    ]
    diffs = pipeline.no_incident_diffs([day, day, day], models, cfg)
    assert diffs == [0] * 50
    assert pipeline.no_incident_diffs([day], models, cfg) == []
