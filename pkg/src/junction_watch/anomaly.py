"""Degree-based trajectory anomaly detection.

Setup: the trajectories of one route class are pooled and fitted with
polynomials of degree 1..20; the lowest degree whose mean absolute residual
stays under the error threshold becomes the route's baseline.

Runtime: each newly classified trajectory is pooled with the previous five
trajectories of its class, the sweep is repeated and the resulting degree is
compared with the baseline.  A difference of more than ``degree_threshold``
(2 by default) is an anomaly.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from numpy.polynomial import legendre

from .errors import (
    ConfigError,
    MissingBaseline,
    NoAdequateDegree,
    TooFewPoints,
    TooFewSamples,
)
from .routes import ClassifiedTrajectory, RouteModel

DEFAULT_DEGREES = tuple(range(1, 21))
DEFAULT_ERROR_THRESHOLD = 0.01
DEFAULT_DEGREE_THRESHOLD = 2
DEFAULT_WINDOW = 5
MIN_SETUP_VEHICLES = 20
COND_LIMIT = 1e12
WHISKER = 1.5


@dataclass(frozen=True)
class DegreeSweepResult:
    per_degree_error: dict[int, float]
    lowest_adequate: int | None
    threshold: float
    unreliable: frozenset[int] = frozenset()


def _pool_errors(u: np.ndarray, v: np.ndarray, degrees: Sequence[int]) -> tuple[dict[int, float], set[int]]:
    """Mean absolute least-squares residual for every degree over one point cloud.

    The abscissa is mapped onto [-1, 1] and expanded in Legendre polynomials;
    the nested fits then fall out of a single QR factorization.
    """
    max_deg = max(degrees)
    lo, hi = float(u.min()), float(u.max())
    t = (2.0 * (u - lo) / (hi - lo) - 1.0) if hi > lo else np.zeros_like(u)
    V = legendre.legvander(t, max_deg)
    Q, R = np.linalg.qr(V)
    coeffs = Q.T @ v
    n_distinct = len(np.unique(t))
    diag = np.abs(np.diag(R))
    errors: dict[int, float] = {}
    unreliable: set[int] = set()
    for d in degrees:
        k = d + 1
        reliable = k <= n_distinct and diag[:k].min() > 0.0
        if reliable:
            cond = np.linalg.cond(R[:k, :k])
            reliable = math.isfinite(cond) and cond <= COND_LIMIT
        if reliable:
            resid = v - Q[:, :k] @ coeffs[:k]
        else:
            unreliable.add(d)
            sol, *_ = np.linalg.lstsq(V[:, :k], v, rcond=None)
            resid = v - V[:, :k] @ sol
        errors[d] = float(np.mean(np.abs(resid)))
    return errors, unreliable


def degree_sweep(
    points,
    threshold: float = DEFAULT_ERROR_THRESHOLD,
    degrees: Sequence[int] = DEFAULT_DEGREES,
    mode: str = "pooled",
) -> DegreeSweepResult:
    """Find the lowest polynomial degree that fits the points within ``threshold``.

    ``points`` is either one ``(n, 2)`` array of route-frame ``(u, v)`` pairs or
    a sequence of such arrays, one per vehicle.  In ``"pooled"`` mode all
    points share a single fit per degree; ``"per_vehicle"`` fits each vehicle
    separately and averages the per-vehicle errors.
    """
    degrees = sorted(set(int(d) for d in degrees))
    if not degrees or degrees[0] < 1:
        raise ConfigError(f"degrees must be positive, got {degrees}")
    groups = [np.asarray(points, dtype=float)] if isinstance(points, np.ndarray) else [
        np.asarray(g, dtype=float).reshape(-1, 2) for g in points
    ]
    total = sum(len(g) for g in groups)
    if total < degrees[-1] + 1:
        raise TooFewPoints(f"{total} points cannot support degree {degrees[-1]}")

    if mode == "pooled":
        pts = np.concatenate(groups)
        errors, unreliable = _pool_errors(pts[:, 0], pts[:, 1], degrees)
    elif mode == "per_vehicle":
        sums = dict.fromkeys(degrees, 0.0)
        counts = dict.fromkeys(degrees, 0)
        for g in groups:
            if len(g) < 2:
                continue
            e, bad = _pool_errors(g[:, 0], g[:, 1], degrees)
            for d in degrees:
                if d not in bad:
                    sums[d] += e[d]
                    counts[d] += 1
        unreliable = {d for d in degrees if counts[d] == 0}
        errors = {d: (sums[d] / counts[d] if counts[d] else math.inf) for d in degrees}
    else:
        raise ConfigError(f"unknown sweep mode {mode!r}")

    lowest = next((d for d in degrees if d not in unreliable and errors[d] <= threshold), None)
    return DegreeSweepResult(errors, lowest, threshold, frozenset(unreliable))


def route_points(ct: ClassifiedTrajectory, route: RouteModel) -> np.ndarray:
    u, v = route.frame.forward(ct.trajectory.points)
    return np.column_stack([u, v])


@dataclass(frozen=True)
class AnomalyBaseline:
    route_id: str
    lowest_degree: int
    error_threshold: float
    sample_count: int
    created_at: float

    def __post_init__(self):
        if not 1 <= self.lowest_degree <= max(DEFAULT_DEGREES):
            raise ConfigError(f"baseline degree {self.lowest_degree} outside [1, 20]")


@dataclass
class BaselineReport:
    baselines: dict[str, AnomalyBaseline] = field(default_factory=dict)
    insufficient: dict[str, str] = field(default_factory=dict)
    sweeps: dict[str, DegreeSweepResult] = field(default_factory=dict)


def group_by_route(classified: Iterable[ClassifiedTrajectory]) -> dict[str, list[ClassifiedTrajectory]]:
    groups: dict[str, list[ClassifiedTrajectory]] = {}
    for ct in classified:
        groups.setdefault(ct.route_id, []).append(ct)
    return groups


def build_baseline(
    classified: Iterable[ClassifiedTrajectory],
    routes: Mapping[str, RouteModel],
    threshold: float = DEFAULT_ERROR_THRESHOLD,
    min_setup_vehicles: int = MIN_SETUP_VEHICLES,
    degrees: Sequence[int] = DEFAULT_DEGREES,
    mode: str = "pooled",
    created_at: float | None = None,
) -> BaselineReport:
    """One baseline per route class from a day of classified trajectories.

    ``created_at`` defaults to the latest trajectory timestamp so reruns on the
    same data write identical stores.  Classes below ``min_setup_vehicles``
    are listed in ``insufficient`` rather than dropped silently.
    """
    report = BaselineReport()
    groups = group_by_route(classified)
    for rid in sorted(set(routes) | set(groups)):
        members = groups.get(rid, [])
        if rid not in routes:
            report.insufficient[rid] = "route not defined"
            continue
        if len(members) < min_setup_vehicles:
            report.insufficient[rid] = f"{len(members)} vehicles < {min_setup_vehicles}"
            continue
        pts = [route_points(ct, routes[rid]) for ct in members]
        sweep = degree_sweep(pts, threshold, degrees, mode)
        report.sweeps[rid] = sweep
        if sweep.lowest_adequate is None:
            raise NoAdequateDegree(
                f"route {rid}: no degree up to {max(degrees)} reaches error threshold {threshold}"
            )
        stamp = created_at
        if stamp is None:
            stamp = max(float(ct.trajectory.timestamps[-1]) for ct in members)
        report.baselines[rid] = AnomalyBaseline(rid, sweep.lowest_adequate, threshold, len(members), stamp)
    return report


@dataclass(frozen=True)
class AnomalyVerdict:
    trajectory_id: int
    route_id: str
    runtime_degree: int
    baseline_degree: int
    degree_diff: int
    is_anomaly: bool
    merged_vehicle_ids: tuple[int, ...]
    timestamp: float = 0.0


def runtime_check(
    incoming: ClassifiedTrajectory,
    window: Sequence[ClassifiedTrajectory],
    baseline: AnomalyBaseline | None,
    route: RouteModel,
    degree_threshold: int = DEFAULT_DEGREE_THRESHOLD,
    degrees: Sequence[int] = DEFAULT_DEGREES,
    mode: str = "pooled",
) -> AnomalyVerdict:
    """Compare the pooled degree of ``incoming`` plus ``window`` against the baseline.

    If no degree in range reaches the threshold the runtime degree is recorded
    as ``max(degrees) + 1`` and the verdict is always an anomaly.
    """
    if baseline is None:
        raise MissingBaseline(incoming.route_id)
    pts = [route_points(ct, route) for ct in (incoming, *window)]
    sweep = degree_sweep(pts, baseline.error_threshold, degrees, mode)
    if sweep.lowest_adequate is None:
        runtime = max(degrees) + 1
        anomalous = True
    else:
        runtime = sweep.lowest_adequate
        anomalous = abs(runtime - baseline.lowest_degree) > degree_threshold
    return AnomalyVerdict(
        trajectory_id=incoming.track_id,
        route_id=incoming.route_id,
        runtime_degree=runtime,
        baseline_degree=baseline.lowest_degree,
        degree_diff=runtime - baseline.lowest_degree,
        is_anomaly=anomalous,
        merged_vehicle_ids=tuple(ct.track_id for ct in window),
        timestamp=float(incoming.trajectory.timestamps[-1]),
    )


class RuntimeMonitor:
    """Per-route sliding windows of recent trajectories feeding ``runtime_check``."""

    def __init__(
        self,
        baselines: Mapping[str, AnomalyBaseline],
        routes: Mapping[str, RouteModel],
        window_size: int = DEFAULT_WINDOW,
        degree_threshold: int = DEFAULT_DEGREE_THRESHOLD,
        degrees: Sequence[int] = DEFAULT_DEGREES,
        mode: str = "pooled",
    ):
        if window_size < 0 or degree_threshold < 0:
            raise ConfigError("window size and degree threshold must be non-negative")
        self.baselines = dict(baselines)
        self.routes = dict(routes)
        self.window_size = window_size
        self.degree_threshold = degree_threshold
        self.degrees = tuple(degrees)
        self.mode = mode
        self.windows: dict[str, deque] = {}

    def check(self, ct: ClassifiedTrajectory) -> AnomalyVerdict:
        window = self.windows.setdefault(ct.route_id, deque(maxlen=self.window_size))
        verdict = runtime_check(
            ct,
            list(window),
            self.baselines.get(ct.route_id),
            self.routes[ct.route_id],
            self.degree_threshold,
            self.degrees,
            self.mode,
        )
        if self.window_size:
            window.append(ct)
        return verdict


class BoxStats(NamedTuple):
    lower_whisker: float
    q1: float
    median: float
    q3: float
    upper_whisker: float


def box_stats(samples: Sequence[float], whis: float = WHISKER) -> BoxStats:
    x = np.asarray(samples, dtype=float)
    if x.size < 4:
        raise TooFewSamples(f"box plot needs at least 4 samples, got {x.size}")
    q1, med, q3 = np.percentile(x, [25, 50, 75], method="linear")
    iqr = q3 - q1
    upper = float(x[x <= q3 + whis * iqr].max())
    lower = float(x[x >= q1 - whis * iqr].min())
    return BoxStats(lower, float(q1), float(med), float(q3), upper)


def iqr_threshold(samples: Sequence[float], whis: float = WHISKER) -> tuple[float, float]:
    """Box-plot whiskers ``(lower, upper)``; samples outside them are anomalous."""
    s = box_stats(samples, whis)
    return s.lower_whisker, s.upper_whisker


class NormalSummary(NamedTuple):
    p10: int
    median: int
    p90: int
    degrees: tuple[int, ...]


def degree_percentiles(values: Sequence[int]) -> NormalSummary:
    v = np.asarray(values)
    p10, med, p90 = np.percentile(v, [10, 50, 90], method="inverted_cdf")
    return NormalSummary(int(p10), int(med), int(p90), tuple(int(x) for x in values))


def characterize_normal(
    runs: Sequence[Iterable[ClassifiedTrajectory]],
    routes: Mapping[str, RouteModel],
    threshold: float = DEFAULT_ERROR_THRESHOLD,
    degrees: Sequence[int] = DEFAULT_DEGREES,
    mode: str = "pooled",
    min_vehicles: int = 1,
) -> dict[str, NormalSummary]:
    """Per-route 10th percentile, median and 90th percentile of the lowest degree across runs."""
    per_route: dict[str, list[int]] = {}
    for run in runs:
        for rid, members in sorted(group_by_route(run).items()):
            if rid not in routes or len(members) < min_vehicles:
                continue
            sweep = degree_sweep([route_points(ct, routes[rid]) for ct in members], threshold, degrees, mode)
            per_route.setdefault(rid, []).append(
                sweep.lowest_adequate if sweep.lowest_adequate is not None else max(degrees) + 1
            )
    return {rid: degree_percentiles(vals) for rid, vals in sorted(per_route.items())}


# persistence

BASELINE_FIELDS = ("route_id", "lowest_degree", "error_threshold", "sample_count", "created_at")


def dump_baselines(baselines: Iterable[AnomalyBaseline]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BASELINE_FIELDS)
    for b in sorted(baselines, key=lambda b: b.route_id):
        w.writerow([b.route_id, b.lowest_degree, repr(b.error_threshold), b.sample_count, repr(b.created_at)])
    return buf.getvalue()


def save_baselines(baselines: Iterable[AnomalyBaseline], path) -> None:
    Path(path).write_text(dump_baselines(baselines))


def load_baselines(path) -> dict[str, AnomalyBaseline]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"baseline store not found: {path}")
    out = {}
    try:
        for row in csv.DictReader(io.StringIO(path.read_text())):
            b = AnomalyBaseline(
                row["route_id"],
                int(row["lowest_degree"]),
                float(row["error_threshold"]),
                int(row["sample_count"]),
                float(row["created_at"]),
            )
            out[b.route_id] = b
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed baseline store: {exc}") from exc
    return out


def format_verdict(v: AnomalyVerdict) -> str:
    merged = ",".join(str(i) for i in v.merged_vehicle_ids) or "-"
    label = "ANOMALY" if v.is_anomaly else "normal"
    return (
        f"{v.timestamp!r} {v.trajectory_id} {v.route_id} {v.runtime_degree} "
        f"{v.baseline_degree} {v.degree_diff:+d} {label} {merged}"
    )


def parse_verdict(line: str) -> AnomalyVerdict:
    ts, tid, rid, rt, bd, diff, label, merged = line.split()
    return AnomalyVerdict(
        trajectory_id=int(tid),
        route_id=rid,
        runtime_degree=int(rt),
        baseline_degree=int(bd),
        degree_diff=int(diff),
        is_anomaly=label == "ANOMALY",
        merged_vehicle_ids=() if merged == "-" else tuple(int(i) for i in merged.split(",")),
        timestamp=float(ts),
    )
