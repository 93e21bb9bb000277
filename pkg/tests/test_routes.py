import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from junction_watch import simulator
from junction_watch.errors import ConfigError, NonMonotonic, NoOverlap, RankDeficient, Unclassifiable
from junction_watch.routes import (
    Normalizer,
    RouteDefinition,
    RouteFrame,
    classify,
    fit_route,
    load_route_definitions,
    route_definitions_to_dict,
    trajectory_route_error,
)
from junction_watch.tracking import Trajectory
from support import classification_accuracy, run_pipeline


def traj(points, tid=1):
    pts = np.asarray(points, dtype=float)
    return Trajectory(tid, np.arange(len(pts), dtype=float), pts)


def line_route(rid="A", offset=0.0, n=8):
    x = np.linspace(0, 10, n)
    return fit_route(RouteDefinition(rid, np.column_stack([x, 0.5 * x + offset]), 2))


def test_fit_recovers_quadratic():
    x = np.linspace(0, 400, 8)
    y = 0.002 * x**2 - 0.5 * x + 300
    m = fit_route(RouteDefinition("q", np.column_stack([x, y]), 2))
    assert m.coefficients == pytest.approx((300, -0.5, 0.002), abs=1e-9)
    assert m.residual_rms < 1e-9
    assert m.domain == (0, 400)


def test_collinear_points_give_zero_leading_term():
    m = line_route()
    assert abs(m.coefficients[2]) < 1e-9
    assert m.residual_rms < 1e-9


def test_fit_errors():
    x = np.linspace(0, 1, 5)
    with pytest.raises(RankDeficient):
        fit_route(RouteDefinition("r", np.column_stack([x, x]), 7))
    with pytest.raises(RankDeficient):
        fit_route(RouteDefinition("r", [[0, 0], [0, 1], [1, 2], [1, 3]], 2))
    with pytest.raises(NonMonotonic):
        fit_route(RouteDefinition("r", [[0, 0], [1, 1], [2, 0], [1.5, -1], [3, 2]], 2))
    with pytest.raises(ConfigError):
        fit_route(RouteDefinition("r", np.column_stack([x, x]), 1))


def test_route_frame_round_trip():
    frame = RouteFrame("y", 30.0, (0.4, 0.6))
    pts = np.array([[0.1, 0.2], [0.9, -0.3], [0.5, 0.5]])
    u, v = frame.forward(pts)
    assert frame.inverse(u, v) == pytest.approx(pts, abs=1e-12)
    assert RouteFrame.from_dict(frame.to_dict()) == frame


def test_y_parametric_route_handles_vertical_arm():
    y = np.linspace(0, 1, 9)
    m = fit_route(RouteDefinition("v", np.column_stack([np.full(9, 0.3), y]), 2, RouteFrame("y")))
    assert m.sample(5)[:, 0] == pytest.approx(np.full(5, 0.3))
    assert trajectory_route_error(traj(np.column_stack([np.full(4, 0.35), y[:4]])), m) == pytest.approx(0.05)


def test_route_error_examples():
    m = line_route()
    x = np.linspace(1, 9, 20)
    on = np.column_stack([x, 0.5 * x])
    assert trajectory_route_error(traj(on), m) == pytest.approx(0.0, abs=1e-12)
    assert trajectory_route_error(traj(on + [0, 3.0]), m) == pytest.approx(3.0)
    alternating = on + np.column_stack([np.zeros(20), np.tile([2.0, -2.0], 10)])
    assert trajectory_route_error(traj(alternating), m) == pytest.approx(2.0)


def test_out_of_domain_points_ignored():
    m = line_route()
    pts = np.array([[5, 2.5], [6, 3.0], [30, 100]])
    assert trajectory_route_error(traj(pts), m) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NoOverlap):
        trajectory_route_error(traj([[50, 0], [60, 0]]), m)


@settings(max_examples=100)
@given(st.floats(-50, 50))
def test_error_translation_covariance(d):
    m = line_route()
    x = np.linspace(0, 10, 15)
    assert trajectory_route_error(traj(np.column_stack([x, 0.5 * x + d])), m) == pytest.approx(abs(d), abs=1e-9)


def test_classify_examples():
    a, b = line_route("A"), line_route("B", offset=50.0)
    x = np.linspace(0, 10, 12)
    t = traj(np.column_stack([x, 0.5 * x + 1.0]))
    ct = classify(t, [a, b])
    assert ct.route_id == "A" and ct.error == pytest.approx(1.0)
    assert ct.per_route_errors["B"] == pytest.approx(49.0)
    assert classify(traj(np.column_stack([x, 0.5 * x])), [a]).error == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(Unclassifiable):
        classify(traj([[100, 0], [200, 0]]), [a, b])
    with pytest.raises(ConfigError):
        classify(t, [])


def test_classify_tie_breaks_by_id():
    below, above = line_route("Z", offset=-1.0), line_route("M", offset=1.0)
    x = np.linspace(0, 10, 12)
    t = traj(np.column_stack([x, 0.5 * x]))
    for order in itertools.permutations([below, above]):
        assert classify(t, list(order)).route_id == "M"


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(4)), st.floats(-30, 30))
def test_classify_permutation_invariant(perm, shift):
    routes = [line_route(rid, offset=off) for rid, off in zip("ABCD", (0.0, 10.0, -10.0, 25.0))]
    x = np.linspace(0, 10, 12)
    t = traj(np.column_stack([x, 0.5 * x + shift]))
    base = classify(t, routes)
    got = classify(t, [routes[i] for i in perm])
    assert (got.route_id, got.per_route_errors) == (base.route_id, base.per_route_errors)


def test_normalizer():
    n = Normalizer(0, 200, 100, 300)
    np.testing.assert_allclose(n.apply([[100, 200]]), [[0.5, 0.5]])
    np.testing.assert_allclose(n.invert(n.apply([[17, 250]])), [[17, 250]])
    with pytest.raises(ConfigError):
        Normalizer(1, 1, 0, 1)


def test_route_file_round_trip(tmp_path, route_defs):
    path = tmp_path / "routes.json"
    path.write_text(json.dumps(route_definitions_to_dict(route_defs)))
    loaded = load_route_definitions(path)
    assert [d.id for d in loaded] == [d.id for d in route_defs]
    for a, b in zip(loaded, route_defs):
        assert np.array_equal(a.control_points, b.control_points)
        assert (a.degree, a.frame) == (b.degree, b.frame)
    path.write_text('{"routes": [{"id": "x"}]}')
    with pytest.raises(ConfigError):
        load_route_definitions(path)


def test_default_routes_fit(models):
    assert sorted(models) == ["EB", "EN", "NB", "SB", "WB", "WS"]
    for m in models.values():
        # the quartic turns approximate a circular arc, so they keep a small residual
        assert m.residual_rms < (1e-9 if m.degree == 2 else 0.01)


@pytest.mark.slow
def test_noiseless_classification_is_perfect(lens, cfg, models, normalizer):
    script = simulator.default_script(
        duration=600.0, seed=3, lateral_noise_sigma=0.0, drift_sigma=0.0
    )
    correct, total = classification_accuracy(run_pipeline(script, lens, cfg, models, normalizer))
    assert total >= 100
    assert correct == total


@pytest.mark.slow
def test_half_pixel_noise_classification(lens, cfg, models, normalizer):
    script = simulator.default_script(
        duration=2700.0,
        seed=4,
        lateral_noise_sigma=0.5 / normalizer.scale,
        drift_sigma=0.0,
    )
    correct, total = classification_accuracy(run_pipeline(script, lens, cfg, models, normalizer))
    assert total >= 500
    assert correct / total >= 0.99
