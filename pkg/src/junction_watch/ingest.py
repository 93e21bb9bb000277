"""Detection stream parsing and detector model scoring.

Stream format, one detection per line::

    # detections width=1920 height=1920 fps=10
    frame_index timestamp x_min y_min x_max y_max confidence class

A line holding only ``frame_index timestamp`` marks a frame without
detections, so empty frames survive a round trip.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import InvalidBox, MalformedRecord, NonMonotonicFrame
from .geometry import Point2

DEFAULT_CONFIDENCE = 0.5
HEADER_TAG = "detections"


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBox(f"non-finite box {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBox(f"degenerate box {vals}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def around(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def bbox_center(b: BBox) -> Point2:
    return Point2((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    confidence: float = 1.0
    class_label: str = "car"

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class FrameBatch:
    frame_index: int
    timestamp: float
    detections: tuple[Detection, ...] = ()


@dataclass(frozen=True)
class StreamMeta:
    width: int = 1920
    height: int = 1920
    fps: float = 10.0

    def header(self) -> str:
        return f"# {HEADER_TAG} width={self.width} height={self.height} fps={self.fps!r}"


def _parse_header(line: str) -> StreamMeta | None:
    parts = line.lstrip("#").split()
    if not parts or parts[0] != HEADER_TAG:
        return None
    kv = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
    try:
        return StreamMeta(int(kv["width"]), int(kv["height"]), float(kv["fps"]))
    except (KeyError, ValueError):
        return None


class DetectionReader:
    """Iterates a detection stream frame by frame.

    ``meta`` is populated from the header line if present; it keeps the
    defaults otherwise.
    """

    def __init__(self, source: IO[str] | IO[bytes] | str | bytes):
        if isinstance(source, bytes):
            source = source.decode()
        if isinstance(source, str):
            source = io.StringIO(source)
        self._source = source
        self.meta = StreamMeta()
        self._lines = self._iter_lines()
        self._pending = None
        # read up to the first record so the header is known before iteration
        for item in self._lines:
            self._pending = item
            break

    def _iter_lines(self):
        for lineno, raw in enumerate(self._source, 1):
            if isinstance(raw, bytes):
                raw = raw.decode()
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                meta = _parse_header(line)
                if meta is not None:
                    self.meta = meta
                continue
            yield lineno, line

    def _records(self):
        if self._pending is not None:
            yield self._pending
            self._pending = None
        yield from self._lines

    def __iter__(self) -> Iterator[FrameBatch]:
        current = None
        stamp = 0.0
        dets: list[Detection] = []
        last_index = -1
        last_stamp = -math.inf
        for lineno, line in self._records():
            parts = line.split()
            if len(parts) not in (2, 8):
                raise MalformedRecord(lineno, line, f"expected 2 or 8 fields, got {len(parts)}")
            try:
                frame = int(parts[0])
                ts = float(parts[1])
            except ValueError as exc:
                raise MalformedRecord(lineno, line, str(exc)) from exc
            if frame < 0 or not math.isfinite(ts):
                raise MalformedRecord(lineno, line, "bad frame index or timestamp")
            if frame != current:
                if current is not None:
                    yield FrameBatch(current, stamp, tuple(dets))
                if frame <= last_index:
                    raise NonMonotonicFrame(f"line {lineno}: frame {frame} follows frame {last_index}")
                if ts < last_stamp:
                    raise NonMonotonicFrame(f"line {lineno}: timestamp {ts} decreases")
                current, stamp, dets = frame, ts, []
                last_index, last_stamp = frame, ts
            elif ts != stamp:
                raise MalformedRecord(lineno, line, "timestamp differs within a frame")
            if len(parts) == 8:
                try:
                    coords = [float(v) for v in parts[2:6]]
                    conf = float(parts[6])
                except ValueError as exc:
                    raise MalformedRecord(lineno, line, str(exc)) from exc
                try:
                    box = BBox(*coords)
                except InvalidBox as exc:
                    raise InvalidBox(f"line {lineno}: {exc}: {line!r}") from None
                if not 0.0 <= conf <= 1.0:
                    raise MalformedRecord(lineno, line, "confidence outside [0, 1]")
                dets.append(Detection(box, conf, parts[7]))
        if current is not None:
            yield FrameBatch(current, stamp, tuple(dets))


def parse_stream(source) -> Iterator[FrameBatch]:
    return iter(DetectionReader(source))


def format_batch(batch: FrameBatch) -> list[str]:
    head = f"{batch.frame_index} {batch.timestamp!r}"
    if not batch.detections:
        return [head]
    return [
        f"{head} {d.bbox.x_min!r} {d.bbox.y_min!r} {d.bbox.x_max!r} {d.bbox.y_max!r} "
        f"{d.confidence!r} {d.class_label}"
        for d in batch.detections
    ]


def write_stream(batches: Iterable[FrameBatch], out: IO[str], meta: StreamMeta | None = None) -> None:
    out.write((meta or StreamMeta()).header() + "\n")
    for batch in batches:
        for line in format_batch(batch):
            out.write(line + "\n")


def serialize_stream(batches: Iterable[FrameBatch], meta: StreamMeta | None = None) -> str:
    buf = io.StringIO()
    write_stream(batches, buf, meta)
    return buf.getvalue()


# Detector model scoring


@dataclass(frozen=True)
class DetectorReport:
    name: str
    map50: float
    map75: float
    map95: float
    inference: float  # seconds
    extra: dict = field(default_factory=dict, compare=False)


def detector_score(r: DetectorReport) -> float:
    """Weighted score in percent.

    The speed term uses inference time in seconds scaled to percent; this
    reading reproduces the reference YoloV3 / YoloV3-tiny / Faster-RCNN
    scores exactly.  Inference above one second drives the term negative.
    """
    return 0.4 * r.map50 + 0.3 * r.map75 + 0.1 * r.map95 + 0.2 * (1.0 - r.inference) * 100.0


def rank_detectors(reports: Iterable[DetectorReport]) -> list[tuple[DetectorReport, float]]:
    scored = [(r, detector_score(r)) for r in reports]
    # sorted() is stable, so equal scores keep input order
    return sorted(scored, key=lambda rs: -rs[1])


def load_detector_reports(text: str) -> list[DetectorReport]:
    """Parse a CSV with columns name,map50,map75,map95 and inference_ms or inference_s."""
    import csv

    reader = csv.DictReader(io.StringIO(text))
    fields = set(reader.fieldnames or ())
    if "inference_ms" in fields:
        scale, col = 1e-3, "inference_ms"
    elif "inference_s" in fields:
        scale, col = 1.0, "inference_s"
    else:
        raise MalformedRecord(1, ",".join(reader.fieldnames or ()), "missing inference_ms/inference_s column")
    reports = []
    for lineno, row in enumerate(reader, 2):
        try:
            vals = [float(row[k]) for k in ("map50", "map75", "map95")]
            inference = float(row[col]) * scale
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(lineno, str(row), str(exc)) from exc
        if not all(math.isfinite(v) for v in (*vals, inference)) or inference < 0:
            raise MalformedRecord(lineno, str(row), "non-finite or negative value")
        reports.append(DetectorReport(row["name"].strip(), *vals, inference))
    return reports
