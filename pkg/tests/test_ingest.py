import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from junction_watch.errors import InvalidBox, MalformedRecord, NonMonotonicFrame
from junction_watch.ingest import (
    BBox,
    Detection,
    DetectionReader,
    DetectorReport,
    FrameBatch,
    StreamMeta,
    bbox_center,
    detector_score,
    load_detector_reports,
    parse_stream,
    rank_detectors,
    serialize_stream,
)


def test_empty_input_yields_nothing():
    assert list(parse_stream("")) == []
    assert list(parse_stream("# detections width=640 height=480 fps=25\n")) == []


def test_frame_with_three_then_empty_frame():
    text = (
        "0 0.0 10 10 20 20 0.9 car\n"
        "0 0.0 30 30 40 45 0.8 car\n"
        "0 0.0 50 50 60 60 0.7 bus\n"
        "1 0.1\n"
    )
    batches = list(parse_stream(text))
    assert [len(b.detections) for b in batches] == [3, 0]
    assert batches[1].frame_index == 1 and batches[1].timestamp == 0.1
    assert batches[0].detections[2].class_label == "bus"


def test_header_sets_meta():
    reader = DetectionReader("# detections width=640 height=480 fps=25\n0 0.0\n")
    assert reader.meta == StreamMeta(640, 480, 25.0)
    assert len(list(reader)) == 1


def test_invalid_box_names_line():
    text = "0 0.0 10 10 20 20 0.9 car\n1 0.1 50 10 40 20 0.9 car\n"
    with pytest.raises(InvalidBox, match="line 2"):
        list(parse_stream(text))


@pytest.mark.parametrize(
    "line",
    ["0 0.0 10 10 20", "x 0.0", "0 0.0 10 10 20 20 1.5 car", "0 nan", "0 0.0 a 10 20 20 0.9 car"],
)
def test_malformed_records(line):
    with pytest.raises(MalformedRecord):
        list(parse_stream(line + "\n"))


def test_non_monotonic_frames():
    with pytest.raises(NonMonotonicFrame):
        list(parse_stream("3 0.3\n2 0.2\n"))
    with pytest.raises(NonMonotonicFrame):
        list(parse_stream("1 0.3\n2 0.2\n"))


def test_malformed_record_fields():
    with pytest.raises(MalformedRecord) as info:
        list(parse_stream("0 0.0\n\n1 0.1 1 2\n"))
    assert info.value.lineno == 3


coord = st.floats(0, 1900, allow_nan=False)


@st.composite
def batches(draw):
    n = draw(st.integers(0, 6))
    out, frame, ts = [], 0, 0.0
    for _ in range(n):
        frame += draw(st.integers(1, 3))
        ts += draw(st.floats(0.0, 1.0))
        dets = []
        for _ in range(draw(st.integers(0, 4))):
            x, y = draw(coord), draw(coord)
            w, h = draw(st.floats(0.5, 20)), draw(st.floats(0.5, 20))
            dets.append(
                Detection(BBox(x, y, x + w, y + h), draw(st.floats(0, 1)), draw(st.sampled_from(["car", "bus"])))
            )
        out.append(FrameBatch(frame, ts, tuple(dets)))
    return out


@settings(max_examples=150, deadline=None)
@given(batches())
def test_stream_round_trip(bs):
    text = serialize_stream(bs, StreamMeta(1920, 1920, 10.0))
    reader = DetectionReader(io.StringIO(text))
    assert list(reader) == bs
    assert reader.meta == StreamMeta(1920, 1920, 10.0)


@settings(max_examples=150)
@given(coord, coord, st.floats(0.5, 50), st.floats(0.5, 50), st.floats(-100, 100), st.floats(-100, 100))
def test_center_translation_equivariance(x, y, w, h, dx, dy):
    b = BBox(x, y, x + w, y + h)
    c, ct = bbox_center(b), bbox_center(b.translated(dx, dy))
    assert ct.x == pytest.approx(c.x + dx, abs=1e-9)
    assert ct.y == pytest.approx(c.y + dy, abs=1e-9)


def test_bbox_center_example():
    assert bbox_center(BBox(0, 0, 10, 4)) == (5, 2)


@pytest.mark.parametrize(
    "name, m50, m75, m95, ms, score",
    [
        ("YoloV3", 95.6, 89.9, 80.7, 250, 88.28),
        ("YoloV3-tiny", 89.5, 80.9, 55.0, 80, 83.97),
        ("Faster-RCNN", 85.0, 75.0, 70.0, 420, 75.1),
    ],
)
def test_reference_detector_scores(name, m50, m75, m95, ms, score):
    assert detector_score(DetectorReport(name, m50, m75, m95, ms / 1000)) == pytest.approx(score, abs=1e-9)


def test_perfect_instant_detector_scores_100():
    assert detector_score(DetectorReport("ideal", 100, 100, 100, 0.0)) == pytest.approx(100.0)


def test_ranking_is_stable_and_descending():
    reports = [
        DetectorReport("a", 50, 50, 50, 0.5),
        DetectorReport("b", 90, 90, 90, 0.1),
        DetectorReport("c", 50, 50, 50, 0.5),
    ]
    assert [r.name for r, _ in rank_detectors(reports)] == ["b", "a", "c"]


def test_detector_csv():
    text = "name,map50,map75,map95,inference_ms\nYoloV3,95.6,89.9,80.7,250\nFaster-RCNN,85,75,70,420\n"
    reports = load_detector_reports(text)
    assert [r.name for r in reports] == ["YoloV3", "Faster-RCNN"]
    assert reports[0].inference == pytest.approx(0.25)
    with pytest.raises(MalformedRecord):
        load_detector_reports("name,map50,map75,map95\nx,1,2,3\n")
    with pytest.raises(MalformedRecord):
        load_detector_reports("name,map50,map75,map95,inference_s\nx,1,two,3,0.1\n")


@settings(max_examples=150)
@given(coord, coord, st.floats(0.5, 50), st.floats(0.5, 50), st.floats(0.1, 10))
def test_center_scale_equivariance_about_corner(x, y, w, h, k):
    c = bbox_center(BBox(x, y, x + w, y + h))
    cs = bbox_center(BBox(x, y, x + k * w, y + k * h))
    assert cs.x == pytest.approx(x + k * (c.x - x))
    assert cs.y == pytest.approx(y + k * (c.y - y))
