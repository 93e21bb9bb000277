"""Exception hierarchy.

Errors split into two families so the CLI can map them to distinct exit
codes: ``ConfigError`` for bad configuration / definition files and
``DataError`` for problems in the data being processed.
"""


class JunctionWatchError(Exception):
    """Base class for all package errors."""


class ConfigError(JunctionWatchError):
    pass


class DataError(JunctionWatchError):
    pass


# geometry
class InsufficientCorrespondences(ConfigError):
    pass


class DegeneratePair(ConfigError):
    pass


class NonPositiveK(ConfigError):
    pass


class NoConvergence(DataError):
    pass


class OutsideCalibratedRange(UserWarning):
    """Projection of a point farther from the center than the calibration covered."""


# ingest
class MalformedRecord(DataError):
    def __init__(self, lineno, line, reason):
        self.lineno = lineno
        self.line = line
        super().__init__(f"line {lineno}: {reason}: {line.rstrip()!r}")


class NonMonotonicFrame(DataError):
    pass


class InvalidBox(DataError):
    pass


# tracking
class OutOfOrderFrame(DataError):
    def __init__(self, previous, current):
        self.previous = previous
        self.current = current
        super().__init__(f"frame {current} arrived after frame {previous}")


# routes
class RankDeficient(ConfigError):
    pass


class NonMonotonic(ConfigError):
    pass


class NoOverlap(DataError):
    pass


class Unclassifiable(DataError):
    pass


# anomaly
class TooFewPoints(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NoAdequateDegree(ConfigError):
    pass


class MissingBaseline(ConfigError):
    def __init__(self, route_id):
        self.route_id = route_id
        super().__init__(f"no baseline recorded for route {route_id!r}")


# simulator
class InvalidScript(ConfigError):
    pass


class ScriptHasIncidents(ConfigError):
    pass
