"""Junction routes as polynomials and minimum-MAE trajectory classification.

Each route lives in its own parametric frame: bird's-eye coordinates are
min-max normalized, rotated by the route's angle and optionally swapped so
that the route is a single-valued function ``v = poly(u)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ConfigError, NonMonotonic, NoOverlap, RankDeficient, Unclassifiable
from .tracking import Trajectory

DOMAIN_MARGIN = 0.05
MIN_ROUTE_DEGREE = 2
MAX_ROUTE_DEGREE = 7


@dataclass(frozen=True)
class Normalizer:
    """Min-max scaling of bird's-eye pixels into the unit square."""

    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError(f"empty normalization bounds {self}")

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        lo = np.array([self.x_min, self.y_min])
        span = np.array([self.x_max - self.x_min, self.y_max - self.y_min])
        return (pts - lo) / span

    def invert(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        lo = np.array([self.x_min, self.y_min])
        span = np.array([self.x_max - self.x_min, self.y_max - self.y_min])
        return pts * span + lo

    def trajectory(self, t: Trajectory) -> Trajectory:
        return t.with_points(self.apply(t.points))

    @property
    def scale(self) -> float:
        """Pixels per normalized unit (geometric mean of both axes)."""
        return math.sqrt((self.x_max - self.x_min) * (self.y_max - self.y_min))


@dataclass(frozen=True)
class RouteFrame:
    """Parametric frame: rotate by ``angle_deg`` about ``pivot``, then pick the abscissa axis."""

    axis: str = "x"
    angle_deg: float = 0.0
    pivot: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ConfigError(f"frame axis must be 'x' or 'y', got {self.axis!r}")

    def forward(self, points) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float).reshape(-1, 2) - np.asarray(self.pivot)
        th = math.radians(self.angle_deg)
        c, s = math.cos(th), math.sin(th)
        a = c * pts[:, 0] + s * pts[:, 1]
        b = -s * pts[:, 0] + c * pts[:, 1]
        return (a, b) if self.axis == "x" else (b, a)

    def inverse(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        a, b = (u, v) if self.axis == "x" else (v, u)
        th = math.radians(self.angle_deg)
        c, s = math.cos(th), math.sin(th)
        x = c * a - s * b
        y = s * a + c * b
        return np.stack([x, y], axis=-1) + np.asarray(self.pivot)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "angle_deg": self.angle_deg, "pivot": list(self.pivot)}

    @classmethod
    def from_dict(cls, d: dict | None) -> "RouteFrame":
        d = d or {}
        pivot = tuple(float(p) for p in d.get("pivot", (0.0, 0.0)))
        return cls(d.get("axis", "x"), float(d.get("angle_deg", 0.0)), pivot)


@dataclass(frozen=True, eq=False)
class RouteDefinition:
    id: str
    control_points: np.ndarray
    degree: int
    frame: RouteFrame = RouteFrame()

    def __post_init__(self):
        object.__setattr__(self, "control_points", np.asarray(self.control_points, dtype=float).reshape(-1, 2))


@dataclass(frozen=True, eq=False)
class RouteModel:
    id: str
    coefficients: tuple[float, ...]  # ascending powers of the frame abscissa
    frame: RouteFrame
    domain: tuple[float, float]
    direction: int = 1  # +1 when travel runs toward increasing abscissa
    residual_rms: float = field(default=0.0)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, u):
        return P.polyval(u, np.asarray(self.coefficients))

    def sample(self, n: int = 200) -> np.ndarray:
        """Points along the route in the frame it was fitted in, in travel order."""
        lo, hi = self.domain
        u = np.linspace(lo, hi, n)
        if self.direction < 0:
            u = u[::-1]
        return self.frame.inverse(u, self(u))


def fit_route(d: RouteDefinition) -> RouteModel:
    if not MIN_ROUTE_DEGREE <= d.degree <= MAX_ROUTE_DEGREE:
        raise ConfigError(f"route {d.id}: degree {d.degree} outside [{MIN_ROUTE_DEGREE}, {MAX_ROUTE_DEGREE}]")
    u, v = d.frame.forward(d.control_points)
    if len(np.unique(u)) < d.degree + 1:
        raise RankDeficient(
            f"route {d.id}: degree {d.degree} needs {d.degree + 1} distinct abscissae, got {len(np.unique(u))}"
        )
    du = np.diff(u)
    if not (np.all(du > 0) or np.all(du < 0)):
        raise NonMonotonic(f"route {d.id}: control points double back along the {d.frame.axis} axis")
    poly = np.polynomial.Polynomial.fit(u, v, d.degree)
    coefs = poly.convert().coef
    coefs = np.pad(coefs, (0, d.degree + 1 - len(coefs)))
    resid = P.polyval(u, coefs) - v
    return RouteModel(
        id=d.id,
        coefficients=tuple(float(c) for c in coefs),
        frame=d.frame,
        domain=(float(u.min()), float(u.max())),
        direction=1 if du[0] > 0 else -1,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def trajectory_route_error(t: Trajectory, m: RouteModel, margin: float = DOMAIN_MARGIN) -> float:
    """Mean absolute ordinate error over the trajectory points inside the route's domain."""
    u, v = m.frame.forward(t.points)
    lo, hi = m.domain
    pad = margin * (hi - lo)
    inside = (u >= lo - pad) & (u <= hi + pad)
    if not inside.any():
        raise NoOverlap(f"trajectory {t.track_id} does not overlap route {m.id}")
    return float(np.mean(np.abs(v[inside] - m(u[inside]))))


@dataclass(frozen=True, eq=False)
class ClassifiedTrajectory:
    trajectory: Trajectory
    route_id: str
    error: float
    per_route_errors: dict[str, float]

    @property
    def track_id(self) -> int:
        return self.trajectory.track_id


def classify(t: Trajectory, routes: Sequence[RouteModel]) -> ClassifiedTrajectory:
    if not routes:
        raise ConfigError("no routes to classify against")
    errors: dict[str, float] = {}
    for m in routes:
        try:
            errors[m.id] = trajectory_route_error(t, m)
        except NoOverlap:
            continue
    if not errors:
        raise Unclassifiable(f"trajectory {t.track_id} overlaps no route")
    best = min(sorted(errors), key=lambda rid: errors[rid])
    return ClassifiedTrajectory(t, best, errors[best], dict(sorted(errors.items())))


def load_route_definitions(path) -> list[RouteDefinition]:
    """Routes file: JSON ``{"routes": [{"id", "degree", "points", "frame"}]}`` in bird's-eye px."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"routes file not found: {path}")
    try:
        data = json.loads(path.read_text())
        return [
            RouteDefinition(
                id=str(r["id"]),
                control_points=np.asarray(r["points"], dtype=float),
                degree=int(r["degree"]),
                frame=RouteFrame.from_dict(r.get("frame")),
            )
            for r in data["routes"]
        ]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed routes file: {exc}") from exc


def route_definitions_to_dict(defs: Sequence[RouteDefinition]) -> dict:
    return {
        "routes": [
            {
                "id": d.id,
                "degree": d.degree,
                "frame": d.frame.to_dict(),
                "points": d.control_points.tolist(),
            }
            for d in defs
        ]
    }


def normalize_definition(d: RouteDefinition, normalizer: Normalizer) -> RouteDefinition:
    return RouteDefinition(d.id, normalizer.apply(d.control_points), d.degree, d.frame)
