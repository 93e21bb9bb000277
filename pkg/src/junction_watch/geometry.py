"""Radial distortion model for a fisheye junction camera.

A fisheye displacement from the distortion center is a scalar multiple of
the matching bird's-eye displacement::

    D(P_f, P_c) = K(z) * D(P_b, P_c),    K(z) = q0 + q1*z + q2*z**2 + ...

where ``z`` is the distance of the fisheye point from the center.  ``K`` is
fitted from operator-supplied (fisheye, bird's-eye) point pairs and then
used to project every tracked vehicle location into the bird's-eye plane.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import (
    ConfigError,
    DegeneratePair,
    InsufficientCorrespondences,
    NoConvergence,
    NonPositiveK,
    OutsideCalibratedRange,
)

DEFAULT_ORDER = 3
MAX_ORDER = 6
EXTRAPOLATION_FACTOR = 1.1
ROOT_ITERATIONS = 100


class Point2(NamedTuple):
    x: float
    y: float


class CorrespondencePair(NamedTuple):
    fisheye: Point2
    birdeye: Point2


def radial_distance(p, center) -> float:
    return math.hypot(center[0] - p[0], center[1] - p[1])


def _k_min(coefficients: np.ndarray, upper: float) -> float:
    """Minimum of the polynomial over [0, upper]: endpoints or interior critical points."""
    candidates = [0.0, float(upper)]
    if len(coefficients) > 2:
        for root in P.polyroots(P.polyder(coefficients)):
            if abs(root.imag) < 1e-12 and 0.0 < root.real < upper:
                candidates.append(float(root.real))
    return float(np.min(P.polyval(np.asarray(candidates), coefficients)))


@dataclass(frozen=True)
class DistortionModel:
    center: Point2
    coefficients: tuple[float, ...]
    valid_radius: float
    residual_rms: float = field(default=0.0, compare=False)

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefficients)
        if not coefs:
            raise ConfigError("distortion model needs at least one coefficient")
        if not all(math.isfinite(c) for c in coefs) or not math.isfinite(self.valid_radius):
            raise ConfigError("distortion model has non-finite values")
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "center", Point2(float(self.center[0]), float(self.center[1])))
        kmin = _k_min(np.asarray(coefs), self.valid_radius)
        if not kmin > 0.0:
            raise NonPositiveK(
                f"K(z) reaches {kmin:.6g} on [0, {self.valid_radius:.6g}]; it must stay positive"
            )

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    def k(self, z):
        return P.polyval(z, np.asarray(self.coefficients))

    def is_extrapolated(self, p_f) -> bool:
        return radial_distance(p_f, self.center) > self.valid_radius * EXTRAPOLATION_FACTOR

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "center": [self.center.x, self.center.y],
            "coefficients": list(self.coefficients),
            "valid_radius": self.valid_radius,
            "residual_rms": self.residual_rms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DistortionModel":
        try:
            coefs = [float(c) for c in data["coefficients"]]
            model = cls(
                center=Point2(*map(float, data["center"])),
                coefficients=tuple(coefs),
                valid_radius=float(data["valid_radius"]),
                residual_rms=float(data.get("residual_rms", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed distortion model: {exc}") from exc
        if "order" in data and int(data["order"]) != model.order:
            raise ConfigError("distortion model order does not match coefficient count")
        return model

    @classmethod
    def identity(cls, center=(0.0, 0.0), valid_radius: float = 1e6) -> "DistortionModel":
        return cls(Point2(*center), (1.0,), valid_radius)


def save_model(model: DistortionModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> DistortionModel:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"lens model file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return DistortionModel.from_dict(data)


def fit_distortion(
    pairs: Sequence[CorrespondencePair],
    center,
    order: int = DEFAULT_ORDER,
) -> DistortionModel:
    """Least-squares fit of the radial gain polynomial.

    Each pair gives one scalar equation ``K(z_i) * |D_b| = |D_f|`` with
    ``z_i = |D_f|``.  The abscissa is rescaled to [0, 1] before solving so
    that high orders stay well conditioned.
    """
    if not 0 <= order <= MAX_ORDER:
        raise ConfigError(f"order must be in [0, {MAX_ORDER}], got {order}")
    cx, cy = float(center[0]), float(center[1])
    z_f, z_b = [], []
    for i, (pf, pb) in enumerate(pairs):
        df = math.hypot(pf[0] - cx, pf[1] - cy)
        db = math.hypot(pb[0] - cx, pb[1] - cy)
        if df == 0.0 and db == 0.0:
            continue
        if df == 0.0 or db == 0.0:
            raise DegeneratePair(f"pair {i} has exactly one point on the distortion center")
        z_f.append(df)
        z_b.append(db)
    z_f = np.asarray(z_f)
    z_b = np.asarray(z_b)
    if len(np.unique(z_f)) < order + 1:
        raise InsufficientCorrespondences(
            f"order {order} needs {order + 1} distinct radii, got {len(np.unique(z_f))}"
        )
    scale = float(z_f.max())
    design = z_b[:, None] * np.vander(z_f / scale, order + 1, increasing=True)
    sol, _, rank, _ = np.linalg.lstsq(design, z_f, rcond=None)
    if rank < order + 1:
        raise InsufficientCorrespondences("correspondences do not constrain every coefficient")
    residual = design @ sol - z_f
    coefs = tuple(float(c / scale**i) for i, c in enumerate(sol))
    return DistortionModel(
        center=Point2(cx, cy),
        coefficients=coefs,
        valid_radius=scale,
        residual_rms=float(np.sqrt(np.mean(residual**2))),
    )


def birdeye_points(model: DistortionModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized fisheye -> bird's-eye projection.

    Returns the projected ``(n, 2)`` array and a boolean mask of points that
    lie beyond the calibrated radius (projected anyway).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c = np.asarray(model.center)
    d = pts - c
    z = np.hypot(d[:, 0], d[:, 1])
    k = model.k(z)
    if np.any(k <= 0.0):
        raise NonPositiveK(f"K(z) <= 0 at z = {z[k <= 0.0][0]:.6g}")
    return c + d / k[:, None], z > model.valid_radius * EXTRAPOLATION_FACTOR


def to_birdeye(model: DistortionModel, p_f) -> Point2:
    out, extrapolated = birdeye_points(model, [p_f])
    if extrapolated[0]:
        warnings.warn(
            OutsideCalibratedRange(f"point {tuple(p_f)} lies beyond the calibrated radius"),
            stacklevel=2,
        )
    return Point2(float(out[0, 0]), float(out[0, 1]))


def _fisheye_radius(model: DistortionModel, z_b: np.ndarray) -> np.ndarray:
    """Solve ``z_f - z_b * K(z_f) = 0`` for every bird's-eye radius by bisection."""
    coefs = np.asarray(model.coefficients)

    def g(z, zb):
        return z - zb * P.polyval(z, coefs)

    lo = np.zeros_like(z_b)
    hi = z_b.copy()
    todo = z_b > 0.0
    for _ in range(64):
        grow = todo & (g(hi, z_b) <= 0.0)
        if not grow.any():
            break
        hi[grow] *= 2.0
    else:
        raise NoConvergence("could not bracket the fisheye radius")
    tol = 1e-12 * np.maximum(hi, 1.0)
    for _ in range(ROOT_ITERATIONS):
        if not np.any(todo & (hi - lo > tol)):
            break
        mid = 0.5 * (lo + hi)
        neg = g(mid, z_b) <= 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    else:
        raise NoConvergence(f"radius root finder exceeded {ROOT_ITERATIONS} iterations")
    return np.where(todo, 0.5 * (lo + hi), 0.0)


def fisheye_points(model: DistortionModel, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c = np.asarray(model.center)
    d = pts - c
    z_b = np.hypot(d[:, 0], d[:, 1])
    z_f = _fisheye_radius(model, z_b)
    ratio = np.divide(z_f, z_b, out=np.ones_like(z_b), where=z_b > 0.0)
    return c + d * ratio[:, None]


def to_fisheye(model: DistortionModel, p_b) -> Point2:
    out = fisheye_points(model, [p_b])
    return Point2(float(out[0, 0]), float(out[0, 1]))


def load_calibration(path) -> tuple[list[CorrespondencePair], Point2 | None, int | None]:
    """Read a calibration file.

    Format: ``#`` comments, optional ``center cx cy`` and ``order k`` lines,
    then one ``fx fy bx by`` row per correspondence.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"calibration file not found: {path}")
    pairs: list[CorrespondencePair] = []
    center = None
    order = None
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "center" and len(parts) == 3:
                center = Point2(float(parts[1]), float(parts[2]))
            elif parts[0] == "order" and len(parts) == 2:
                order = int(parts[1])
            elif len(parts) == 4:
                fx, fy, bx, by = map(float, parts)
                if not all(map(math.isfinite, (fx, fy, bx, by))):
                    raise ValueError("non-finite coordinate")
                pairs.append(CorrespondencePair(Point2(fx, fy), Point2(bx, by)))
            else:
                raise ValueError("expected 'fx fy bx by'")
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}: {raw!r}") from exc
    return pairs, center, order


def write_calibration(path, pairs: Iterable[CorrespondencePair], center=None, order=None) -> None:
    lines = []
    if center is not None:
        lines.append(f"center {float(center[0])!r} {float(center[1])!r}")
    if order is not None:
        lines.append(f"order {order}")
    for pf, pb in pairs:
        lines.append(" ".join(repr(float(v)) for v in (*pf, *pb)))
    Path(path).write_text("\n".join(lines) + "\n")
