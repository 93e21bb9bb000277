import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from junction_watch.errors import (
    DegeneratePair,
    InsufficientCorrespondences,
    NonPositiveK,
    OutsideCalibratedRange,
)
from junction_watch.geometry import (
    CorrespondencePair,
    DistortionModel,
    Point2,
    birdeye_points,
    fisheye_points,
    fit_distortion,
    load_calibration,
    load_model,
    radial_distance,
    save_model,
    to_birdeye,
    to_fisheye,
    write_calibration,
)


def synth_pairs(coefs, center, radii, angles=(0.3,)):
    """Pairs built by pushing bird's-eye radii through a known K (the fit must invert this)."""
    model = DistortionModel(Point2(*center), tuple(coefs), max(radii))
    pairs = []
    for zf in radii:
        for a in angles:
            pf = (center[0] + zf * math.cos(a), center[1] + zf * math.sin(a))
            k = model.k(zf)
            pb = (center[0] + zf / k * math.cos(a), center[1] + zf / k * math.sin(a))
            pairs.append(CorrespondencePair(Point2(*pf), Point2(*pb)))
    return pairs


@pytest.mark.parametrize(
    "p, c, expected",
    [((3, 4), (0, 0), 5.0), ((7, -2), (7, -2), 0.0), ((10, 0), (4, 0), 6.0)],
)
def test_radial_distance(p, c, expected):
    assert radial_distance(p, c) == expected


def test_fit_identity_pairs():
    pts = [Point2(float(x), float(y)) for x, y in [(10, 0), (0, 20), (30, 5), (-40, 7), (11, -50)]]
    model = fit_distortion([CorrespondencePair(p, p) for p in pts], (0, 0), order=2)
    assert np.allclose(model.coefficients, (1, 0, 0), atol=1e-12)
    assert model.residual_rms < 1e-12


def test_fit_recovers_linear_gain():
    pairs = synth_pairs((1.0, 0.001), (960, 960), range(50, 501, 50))
    model = fit_distortion(pairs, (960, 960), order=1)
    assert model.coefficients[0] == pytest.approx(1.0, abs=1e-9)
    assert model.coefficients[1] == pytest.approx(0.001, abs=1e-9)
    assert model.residual_rms < 1e-9
    assert model.valid_radius == pytest.approx(500.0)


def test_fit_constant_gain():
    pairs = synth_pairs((2.0,), (0, 0), [10, 20, 30])
    model = fit_distortion(pairs, (0, 0), order=0)
    assert model.coefficients == pytest.approx((2.0,), abs=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_fit_consistency_with_higher_order(order):
    truth = (1.0, -3e-4, 1e-7)[: order]
    pairs = synth_pairs(truth, (500, 400), np.linspace(20, 700, 25), angles=(0.1, 2.0))
    model = fit_distortion(pairs, (500, 400), order=3)
    assert model.residual_rms < 1e-9
    assert np.allclose(model.coefficients[: len(truth)], truth, atol=1e-9)


def test_fit_errors():
    pairs = synth_pairs((1.0, 0.001), (0, 0), [50, 100])
    with pytest.raises(InsufficientCorrespondences):
        fit_distortion(pairs, (0, 0), order=3)
    with pytest.raises(DegeneratePair):
        fit_distortion([CorrespondencePair(Point2(5, 0), Point2(0, 0))] + pairs, (0, 0), order=1)
    # a gain that collapses at the rim makes the quadratic dip below zero
    collapsing = [
        CorrespondencePair(Point2(z, 0.0), Point2(z / k, 0.0))
        for z, k in [(100, 1.0), (200, 1.0), (300, 1.0), (400, 0.01)]
    ]
    with pytest.raises(NonPositiveK):
        fit_distortion(collapsing, (0, 0), order=2)


def test_center_pairs_are_skipped():
    pairs = synth_pairs((1.0, 0.001), (0, 0), [50, 100, 150])
    model = fit_distortion([CorrespondencePair(Point2(0, 0), Point2(0, 0))] + pairs, (0, 0), order=1)
    assert model.coefficients == pytest.approx((1.0, 0.001), abs=1e-9)


def test_to_birdeye_examples():
    ident = DistortionModel.identity()
    assert to_birdeye(ident, (123, 45)) == (123, 45)
    halve = DistortionModel(Point2(0, 0), (2.0,), 1e3)
    assert to_birdeye(halve, (10, 0)) == pytest.approx((5, 0))
    lin = DistortionModel(Point2(960, 960), (1.0, 0.001), 1000)
    x, y = to_birdeye(lin, (1160, 960))
    assert x == pytest.approx(960 + 200 / 1.2, abs=1e-9)
    assert y == 960


def test_to_fisheye_examples():
    assert to_fisheye(DistortionModel.identity(), (3.5, -2)) == pytest.approx((3.5, -2))
    assert to_fisheye(DistortionModel(Point2(0, 0), (2.0,), 1e3), (5, 0)) == pytest.approx((10, 0))


def test_center_is_fixed_point(lens):
    assert to_birdeye(lens, lens.center) == lens.center
    assert to_fisheye(lens, lens.center) == lens.center


def test_extrapolation_warns_but_projects():
    lin = DistortionModel(Point2(0, 0), (1.0, 0.001), 100)
    with pytest.warns(OutsideCalibratedRange):
        p = to_birdeye(lin, (200, 0))
    assert p.x == pytest.approx(200 / 1.2)
    _, mask = birdeye_points(lin, [(50, 0), (105, 0), (111, 0)])
    assert mask.tolist() == [False, False, True]


def test_nonpositive_model_rejected():
    with pytest.raises(NonPositiveK):
        DistortionModel(Point2(0, 0), (1.0, -0.01), 200)


def test_round_trip_1000_points(rng):
    model = DistortionModel(Point2(960, 960), (1.0, 0.001), 1400)
    # zb = zf / (1 + 0.001 zf) stays below 1000 px, so sample inside that disc
    r = 990 * np.sqrt(rng.uniform(size=1000))
    a = rng.uniform(0, 2 * np.pi, size=1000)
    pb = 960 + np.column_stack([r * np.cos(a), r * np.sin(a)])
    pf = fisheye_points(model, pb)
    back, _ = birdeye_points(model, pf)
    assert np.max(np.hypot(*(back - pb).T)) < 1e-6


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(-1300, 1300),
    y=st.floats(-1300, 1300),
    q1=st.floats(-4e-4, 1e-3),
)
def test_round_trip_property(x, y, q1):
    model = DistortionModel(Point2(960, 960), (1.0, q1), 1900)
    pf = (960 + x, 960 + y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideCalibratedRange)
        rt = to_fisheye(model, to_birdeye(model, pf))
    assert math.dist(rt, pf) < 1e-6


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-900, 900), y=st.floats(-900, 900))
def test_direction_preserved(x, y, lens):
    pf = (lens.center.x + x, lens.center.y + y)
    pb = to_birdeye(lens, pf)
    if abs(x) + abs(y) > 1e-6:
        a_f = math.atan2(pf[1] - lens.center.y, pf[0] - lens.center.x)
        a_b = math.atan2(pb[1] - lens.center.y, pb[0] - lens.center.x)
        assert abs(math.remainder(a_f - a_b, 2 * math.pi)) < 1e-9


def test_model_and_calibration_files(tmp_path):
    model = DistortionModel(Point2(10, 20), (1.0, 2e-4), 300, residual_rms=0.5)
    save_model(model, tmp_path / "m.json")
    assert load_model(tmp_path / "m.json") == model
    assert json.loads((tmp_path / "m.json").read_text())["order"] == 1

    pairs = synth_pairs((1.0, 0.001), (0, 0), [50, 100, 150])
    write_calibration(tmp_path / "c.txt", pairs, center=(0.0, 0.0), order=1)
    got, center, order = load_calibration(tmp_path / "c.txt")
    assert got == pairs and center == (0, 0) and order == 1
