"""Junction incident detection from fisheye-camera vehicle detections.

Detections are tracked in the fisheye image, projected to a bird's-eye
plane, matched to polynomial routes and watched for shape anomalies by
comparing the lowest adequate polynomial degree against a baseline day.
"""

__version__ = "0.1.0"
