"""Static SVG views of routes, trajectories and verdicts.

Drawing happens in normalized bird's-eye coordinates, so every route and
trajectory of a junction shares one square canvas.  Output is plain text
with fixed number formatting, hence byte-stable for identical input.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .anomaly import AnomalyVerdict
from .routes import ClassifiedTrajectory, RouteModel

ROUTE_COLOR = "#1f4fd8"
TRAJECTORY_COLOR = "#d62728"
ANOMALY_COLOR = "#ff9f00"


def _polyline(points: np.ndarray, size: int, **attrs) -> str:
    pts = np.clip(np.asarray(points, dtype=float), -0.5, 1.5) * size
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    extra = " ".join(f'{k.replace("_", "-")}="{escape(str(v))}"' for k, v in attrs.items())
    return f'<polyline points="{coords}" fill="none" {extra}/>'


def render_svg(
    routes: Sequence[RouteModel] | Mapping[str, RouteModel] = (),
    classified: Iterable[ClassifiedTrajectory] = (),
    verdicts: Iterable[AnomalyVerdict] = (),
    size: int = 800,
    title: str | None = None,
) -> str:
    """Routes in blue, trajectories in red, trajectories with an anomaly verdict in orange."""
    if isinstance(routes, Mapping):
        routes = list(routes.values())
    flagged = {v.trajectory_id for v in verdicts if v.is_anomaly}
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<title>{escape(title)}</title>')
    out.append('<g class="routes">')
    for m in sorted(routes, key=lambda r: r.id):
        out.append(_polyline(m.sample(200), size, stroke=ROUTE_COLOR, stroke_width=3, id=f"route-{m.id}"))
    out.append("</g>")
    out.append('<g class="trajectories">')
    for ct in sorted(classified, key=lambda c: c.track_id):
        anomalous = ct.track_id in flagged
        out.append(
            _polyline(
                ct.trajectory.points,
                size,
                stroke=ANOMALY_COLOR if anomalous else TRAJECTORY_COLOR,
                stroke_width=2.5 if anomalous else 1,
                id=f"track-{ct.track_id}",
                data_route=ct.route_id,
                **({"class": "anomaly"} if anomalous else {}),
            )
        )
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
