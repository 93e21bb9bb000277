"""Pipeline configuration, trajectory files and the stage glue used by the CLI.

One JSON config holds every constant of the pipeline; missing keys fall back
to the defaults below (window 5, degree threshold 2, degrees 1..20, 10 fps).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from . import anomaly
from .errors import ConfigError, DataError, Unclassifiable
from .geometry import DistortionModel, load_model
from .ingest import FrameBatch
from .routes import (
    ClassifiedTrajectory,
    Normalizer,
    RouteDefinition,
    RouteModel,
    classify,
    fit_route,
    load_route_definitions,
    normalize_definition,
)
from .tracking import KalmanParams, Trajectory, TrackerConfig, track_stream

MAX_DEGREE = 20


@dataclass(frozen=True)
class PipelineConfig:
    width: int = 1920
    height: int = 1920
    fps: float = 10.0
    # file locations; relative paths resolve against the config file
    calibration: str | None = None
    routes: str | None = None
    baselines: str | None = None
    verdict_log: str | None = None
    normalizer: Normalizer | None = None  # bird's-eye px bounds; None = default junction bounds
    tracker: TrackerConfig = TrackerConfig()
    error_threshold: float = anomaly.DEFAULT_ERROR_THRESHOLD
    degree_threshold: int = anomaly.DEFAULT_DEGREE_THRESHOLD
    window_size: int = anomaly.DEFAULT_WINDOW
    min_degree: int = 1
    max_degree: int = MAX_DEGREE
    mode: str = "pooled"
    min_setup_vehicles: int = anomaly.MIN_SETUP_VEHICLES

    def __post_init__(self):
        if self.degree_threshold < 0 or self.window_size < 0:
            raise ConfigError("degree_threshold and window_size must be non-negative")
        if not 1 <= self.min_degree <= self.max_degree <= MAX_DEGREE:
            raise ConfigError(f"degree range must lie within [1, {MAX_DEGREE}]")
        if self.error_threshold <= 0:
            raise ConfigError("error_threshold must be positive")
        if self.mode not in ("pooled", "per_vehicle"):
            raise ConfigError(f"unknown fit mode {self.mode!r}")
        if self.width <= 0 or self.height <= 0 or self.fps <= 0:
            raise ConfigError("camera width, height and fps must be positive")

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(range(self.min_degree, self.max_degree + 1))

    def tracker_config(self) -> TrackerConfig:
        return replace(self.tracker, width=self.width, height=self.height)


def config_to_dict(cfg: PipelineConfig) -> dict:
    t = cfg.tracker
    return {
        "camera": {"width": cfg.width, "height": cfg.height, "fps": cfg.fps},
        "paths": {
            "calibration": cfg.calibration,
            "routes": cfg.routes,
            "baselines": cfg.baselines,
            "verdict_log": cfg.verdict_log,
        },
        "birdeye": asdict(cfg.normalizer) if cfg.normalizer else None,
        "tracker": {
            "gate": t.gate,
            "min_hits": t.min_hits,
            "max_misses": t.max_misses,
            "min_trajectory_len": t.min_trajectory_len,
            "border_margin": t.border_margin,
            "confidence_threshold": t.confidence_threshold,
            "process_noise": list(t.kalman.process_noise),
            "measurement_noise": list(t.kalman.measurement_noise),
            "initial_velocity_var": t.kalman.initial_velocity_var,
        },
        "anomaly": {
            "error_threshold": cfg.error_threshold,
            "degree_threshold": cfg.degree_threshold,
            "window_size": cfg.window_size,
            "degrees": [cfg.min_degree, cfg.max_degree],
            "mode": cfg.mode,
            "min_setup_vehicles": cfg.min_setup_vehicles,
        },
    }


def config_from_dict(data: Mapping, base_dir: Path | None = None) -> PipelineConfig:
    try:
        cam = data.get("camera", {})
        paths = data.get("paths", {})
        tr = data.get("tracker", {})
        an = data.get("anomaly", {})
        kal = KalmanParams(
            tuple(float(x) for x in tr.get("process_noise", KalmanParams.process_noise)),
            tuple(float(x) for x in tr.get("measurement_noise", KalmanParams.measurement_noise)),
            float(tr.get("initial_velocity_var", KalmanParams.initial_velocity_var)),
        )
        d = TrackerConfig()
        tracker = TrackerConfig(
            gate=float(tr.get("gate", d.gate)),
            min_hits=int(tr.get("min_hits", d.min_hits)),
            max_misses=int(tr.get("max_misses", d.max_misses)),
            min_trajectory_len=int(tr.get("min_trajectory_len", d.min_trajectory_len)),
            border_margin=float(tr.get("border_margin", d.border_margin)),
            confidence_threshold=float(tr.get("confidence_threshold", d.confidence_threshold)),
            kalman=kal,
        )
        lo, hi = an.get("degrees", [1, MAX_DEGREE])

        def _path(key):
            p = paths.get(key)
            if p is None or base_dir is None or Path(p).is_absolute():
                return p
            return str(base_dir / p)

        bev = data.get("birdeye")
        return PipelineConfig(
            width=int(cam.get("width", 1920)),
            height=int(cam.get("height", 1920)),
            fps=float(cam.get("fps", 10.0)),
            calibration=_path("calibration"),
            routes=_path("routes"),
            baselines=_path("baselines"),
            verdict_log=_path("verdict_log"),
            normalizer=Normalizer(**bev) if bev else None,
            tracker=tracker,
            error_threshold=float(an.get("error_threshold", anomaly.DEFAULT_ERROR_THRESHOLD)),
            degree_threshold=int(an.get("degree_threshold", anomaly.DEFAULT_DEGREE_THRESHOLD)),
            window_size=int(an.get("window_size", anomaly.DEFAULT_WINDOW)),
            min_degree=int(lo),
            max_degree=int(hi),
            mode=str(an.get("mode", "pooled")),
            min_setup_vehicles=int(an.get("min_setup_vehicles", anomaly.MIN_SETUP_VEHICLES)),
        )
    except (AttributeError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")


# resolved inputs


def resolve_lens(cfg: PipelineConfig, path=None) -> DistortionModel:
    """Lens from an explicit path, else the config's, else the default simulator lens."""
    from .simulator import default_lens

    path = path or cfg.calibration
    if path is None:
        return default_lens(cfg.width, cfg.height)
    return load_model(path)


def resolve_normalizer(cfg: PipelineConfig, lens: DistortionModel | None = None) -> Normalizer:
    from .simulator import default_normalizer

    return cfg.normalizer or default_normalizer(lens, cfg.width, cfg.height)


def resolve_routes(cfg: PipelineConfig, normalizer: Normalizer, path=None) -> list[RouteDefinition]:
    from .simulator import default_route_definitions

    path = path or cfg.routes
    if path is None:
        return default_route_definitions(normalizer)
    return load_route_definitions(path)


def route_models(defs: Sequence[RouteDefinition], normalizer: Normalizer) -> dict[str, RouteModel]:
    return {d.id: fit_route(normalize_definition(d, normalizer)) for d in defs}


# stages


def track(batches: Iterable[FrameBatch], cfg: PipelineConfig, lens: DistortionModel) -> list[Trajectory]:
    return track_stream(batches, cfg.tracker_config(), lens)


def classify_all(
    trajectories: Iterable[Trajectory], models: Mapping[str, RouteModel], normalizer: Normalizer
) -> tuple[list[ClassifiedTrajectory], list[int]]:
    """Classify bird's-eye px trajectories; returns (classified, ids that matched no route)."""
    routes = list(models.values())
    out, rejected = [], []
    for t in trajectories:
        try:
            out.append(classify(normalizer.trajectory(t), routes))
        except Unclassifiable:
            rejected.append(t.track_id)
    return out, rejected


def baselines(
    classified: Iterable[ClassifiedTrajectory], models: Mapping[str, RouteModel], cfg: PipelineConfig
) -> anomaly.BaselineReport:
    return anomaly.build_baseline(
        classified, models, cfg.error_threshold, cfg.min_setup_vehicles, cfg.degrees, cfg.mode
    )


def detect(
    classified: Iterable[ClassifiedTrajectory],
    baseline: Mapping[str, anomaly.AnomalyBaseline],
    models: Mapping[str, RouteModel],
    cfg: PipelineConfig,
) -> list[anomaly.AnomalyVerdict]:
    """Runtime verdicts in arrival order; classes without a baseline raise ``MissingBaseline``."""
    mon = anomaly.RuntimeMonitor(baseline, models, cfg.window_size, cfg.degree_threshold, cfg.degrees, cfg.mode)
    return [mon.check(ct) for ct in classified]


def no_incident_diffs(
    runs: Sequence[Sequence[ClassifiedTrajectory]], models: Mapping[str, RouteModel], cfg: PipelineConfig
) -> list[int]:
    """Signed runtime degree differences over consecutive incident-free days.

    Run ``i`` is checked against the baselines built from run ``i - 1``, the
    "previous day" of the runtime procedure; routes without a previous-day
    baseline contribute nothing.
    """
    samples: list[int] = []
    for prev, cur in zip(runs, runs[1:]):
        report = baselines(prev, models, cfg)
        known = [ct for ct in cur if ct.route_id in report.baselines]
        samples.extend(v.degree_diff for v in detect(known, report.baselines, models, cfg))
    return samples


# trajectory files: one JSON object per line


def trajectory_record(t: Trajectory, route_id: str | None = None) -> dict:
    rec = {
        "track_id": int(t.track_id),
        "complete": bool(t.complete),
        "timestamps": [float(x) for x in t.timestamps],
        "points": [[float(x), float(y)] for x, y in t.points],
    }
    if t.frames is not None:
        rec["frames"] = [int(f) for f in t.frames]
    if t.fisheye is not None:
        rec["fisheye"] = [[float(x), float(y)] for x, y in t.fisheye]
    if route_id is not None:
        rec["route_id"] = route_id
    return rec


def write_trajectories(trajectories: Iterable[Trajectory], out: IO[str]) -> None:
    for t in trajectories:
        out.write(json.dumps(trajectory_record(t)) + "\n")


def read_trajectories(source: IO[str]) -> list[Trajectory]:
    out = []
    for lineno, line in enumerate(source, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            pts = np.asarray(rec["points"], dtype=float).reshape(-1, 2)
            ts = np.asarray(rec["timestamps"], dtype=float)
            if len(pts) != len(ts):
                raise ValueError("points and timestamps differ in length")
            out.append(
                Trajectory(
                    track_id=int(rec["track_id"]),
                    timestamps=ts,
                    points=pts,
                    frames=np.asarray(rec["frames"], dtype=int) if "frames" in rec else None,
                    fisheye=np.asarray(rec["fisheye"], dtype=float).reshape(-1, 2) if "fisheye" in rec else None,
                    complete=bool(rec.get("complete", True)),
                )
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"trajectory line {lineno}: {exc}") from exc
    return out
