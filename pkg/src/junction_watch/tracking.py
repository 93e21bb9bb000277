"""Multi-vehicle tracking: Jaccard cost matrix, optimal assignment, Kalman smoothing.

Tracks live in fisheye pixel space.  Each completed track is emitted as a
``Trajectory`` whose points are projected into the bird's-eye plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import OutOfOrderFrame
from .geometry import DistortionModel, birdeye_points
from .ingest import BBox, Detection, FrameBatch, bbox_center

_F = np.array(
    [
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)
_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class KalmanParams:
    process_noise: tuple[float, float, float, float] = (1.0, 1.0, 0.25, 0.25)
    measurement_noise: tuple[float, float] = (4.0, 4.0)
    initial_velocity_var: float = 1000.0

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.process_noise)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.measurement_noise)


DEFAULT_KALMAN = KalmanParams()


@dataclass(frozen=True, eq=False)
class TrackState:
    position: np.ndarray  # (2,) fisheye px
    velocity: np.ndarray  # (2,) px per frame
    covariance: np.ndarray  # (4, 4)
    bbox: BBox

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_detection(cls, bbox: BBox, params: KalmanParams = DEFAULT_KALMAN) -> "TrackState":
        rx, ry = params.measurement_noise
        v0 = params.initial_velocity_var
        return cls(
            position=np.array(bbox_center(bbox), dtype=float),
            velocity=np.zeros(2),
            covariance=np.diag([rx, ry, v0, v0]),
            bbox=bbox,
        )


def kalman_predict(s: TrackState, params: KalmanParams = DEFAULT_KALMAN) -> TrackState:
    """Constant-velocity step of one frame; the bbox moves with the predicted displacement."""
    dx, dy = s.velocity
    P = _F @ s.covariance @ _F.T + params.Q
    return TrackState(
        position=s.position + s.velocity,
        velocity=s.velocity,
        covariance=0.5 * (P + P.T),
        bbox=s.bbox.translated(float(dx), float(dy)),
    )


def kalman_update(
    s: TrackState,
    measured,
    params: KalmanParams = DEFAULT_KALMAN,
    bbox: BBox | None = None,
) -> TrackState:
    """Position-only measurement update (Joseph form keeps the covariance PSD)."""
    x = s.mean
    P = s.covariance
    S = _H @ P @ _H.T + params.R
    K = np.linalg.solve(S, _H @ P).T
    x = x + K @ (np.asarray(measured, dtype=float) - x[:2])
    IKH = np.eye(4) - K @ _H
    P = IKH @ P @ IKH.T + K @ params.R @ K.T
    return TrackState(
        position=x[:2],
        velocity=x[2:],
        covariance=0.5 * (P + P.T),
        bbox=bbox if bbox is not None else s.bbox,
    )


def jaccard(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise Jaccard index of two ``(n, 4)`` / ``(m, 4)`` box arrays."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def build_cost_matrix(tracks: Sequence["Track"], detections: Sequence[Detection]) -> np.ndarray:
    """Jaccard matrix between predicted track boxes (rows) and detections (columns).

    Call after the tracks have been predicted forward to the current frame.
    """
    if not tracks or not detections:
        return np.zeros((len(tracks), len(detections)))
    return iou_matrix(
        [t.state.bbox.as_tuple() for t in tracks],
        [d.bbox.as_tuple() for d in detections],
    )


def assign(J, gate: float = 0.1):
    """Maximum total-Jaccard assignment, gated after solving.

    Returns ``(matched, unmatched_tracks, unmatched_detections)``.
    """
    J = np.asarray(J, dtype=float)
    n, m = J.shape if J.ndim == 2 else (0, 0)
    matched = []
    if n and m:
        rows, cols = linear_sum_assignment(J, maximize=True)
        matched = [(int(r), int(c)) for r, c in zip(rows, cols) if J[r, c] >= gate]
    used_r = {r for r, _ in matched}
    used_c = {c for _, c in matched}
    return (
        matched,
        [r for r in range(n) if r not in used_r],
        [c for c in range(m) if c not in used_c],
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    track_id: int
    timestamps: np.ndarray  # (n,)
    points: np.ndarray  # (n, 2) bird's-eye
    frames: np.ndarray | None = None
    fisheye: np.ndarray | None = None
    complete: bool = True

    def __len__(self) -> int:
        return len(self.timestamps)

    def with_points(self, points: np.ndarray) -> "Trajectory":
        return replace(self, points=np.asarray(points, dtype=float))


@dataclass
class Track:
    id: int
    state: TrackState
    age: int = 1
    misses: int = 0
    hits: int = 1
    frames: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    coasted: list = field(default_factory=list)

    def record(self, frame: int, timestamp: float, coasting: bool) -> None:
        self.frames.append(frame)
        self.timestamps.append(timestamp)
        self.positions.append(self.state.position.copy())
        self.coasted.append(coasting)


@dataclass(frozen=True)
class TrackerConfig:
    width: int = 1920
    height: int = 1920
    gate: float = 0.1
    min_hits: int = 3
    max_misses: int = 5
    min_trajectory_len: int = 10
    border_margin: float = 8.0
    confidence_threshold: float = 0.5
    kalman: KalmanParams = DEFAULT_KALMAN


class Tracker:
    """Frame-ordered stateful tracker.

    ``step`` consumes one ``FrameBatch`` and returns the trajectories that
    completed on that frame; ``finish`` flushes whatever is still alive.
    """

    def __init__(self, config: TrackerConfig | None = None, lens: DistortionModel | None = None):
        self.config = config or TrackerConfig()
        self.lens = lens
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame: int | None = None

    def _leaving(self, track: Track) -> bool:
        c = self.config
        x, y = track.state.position
        vx, vy = track.state.velocity
        m = c.border_margin
        return (
            (x < m and vx < 0)
            or (x > c.width - m and vx > 0)
            or (y < m and vy < 0)
            or (y > c.height - m and vy > 0)
        )

    def _emit(self, track: Track, complete: bool = True) -> Trajectory | None:
        c = self.config
        n = len(track.coasted)
        while n and track.coasted[n - 1]:
            n -= 1
        if track.hits < c.min_hits or n < c.min_trajectory_len:
            return None
        fish = np.asarray(track.positions[:n])
        if self.lens is not None:
            bev, _ = birdeye_points(self.lens, fish)
        else:
            bev = fish.copy()
        return Trajectory(
            track_id=track.id,
            timestamps=np.asarray(track.timestamps[:n], dtype=float),
            points=bev,
            frames=np.asarray(track.frames[:n], dtype=int),
            fisheye=fish,
            complete=complete,
        )

    def step(self, batch: FrameBatch) -> list[Trajectory]:
        c = self.config
        if self._last_frame is not None and batch.frame_index <= self._last_frame:
            raise OutOfOrderFrame(self._last_frame, batch.frame_index)
        self._last_frame = batch.frame_index
        dets = [d for d in batch.detections if d.confidence >= c.confidence_threshold]

        for t in self.tracks:
            t.state = kalman_predict(t.state, c.kalman)
            t.age += 1
        J = build_cost_matrix(self.tracks, dets)
        matched, lost, fresh = assign(J, c.gate)

        for r, col in matched:
            t = self.tracks[r]
            box = dets[col].bbox
            t.state = kalman_update(t.state, bbox_center(box), c.kalman, bbox=box)
            t.misses = 0
            t.hits += 1
            t.record(batch.frame_index, batch.timestamp, False)
        for r in lost:
            t = self.tracks[r]
            t.misses += 1
            t.record(batch.frame_index, batch.timestamp, True)

        completed = []
        alive = []
        for t in self.tracks:
            if t.misses > c.max_misses or (t.hits >= c.min_hits and self._leaving(t)):
                traj = self._emit(t)
                if traj is not None:
                    completed.append(traj)
            else:
                alive.append(t)
        for col in fresh:
            t = Track(self._next_id, TrackState.from_detection(dets[col].bbox, c.kalman))
            self._next_id += 1
            t.record(batch.frame_index, batch.timestamp, False)
            alive.append(t)
        self.tracks = alive
        return completed

    def finish(self) -> list[Trajectory]:
        out = [traj for t in self.tracks if (traj := self._emit(t, complete=False)) is not None]
        self.tracks = []
        return out


def track_stream(
    batches: Iterable[FrameBatch],
    config: TrackerConfig | None = None,
    lens: DistortionModel | None = None,
    include_partial: bool = False,
) -> list[Trajectory]:
    """Run a tracker over a whole stream; trajectories in completion order."""
    tracker = Tracker(config, lens)
    out: list[Trajectory] = []
    for batch in batches:
        out.extend(tracker.step(batch))
    tail = tracker.finish()
    if include_partial:
        out.extend(tail)
    return out
