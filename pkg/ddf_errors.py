"""
DDFNet Errors
=============
Typed exceptions shared by every module. Each carries a `category` so the
CLI can turn it into a stable exit code and a one-line JSON error record.

Change log:
  2026-10-18  Initial implementation
"""


class DDFError(Exception):
    """Base class for all DDFNet failures."""

    category = "internal"


class ShapeError(DDFError, ValueError):
    """Tensor shape or parameter size does not match what an op expects."""

    category = "shape"


class ConfigError(DDFError, ValueError):
    """Configuration value outside its documented range, or unknown key."""

    category = "config"


class LineageError(DDFError):
    """A training stage was invoked without the checkpoint lineage it needs."""

    category = "lineage"


class DataError(DDFError):
    """Missing, untagged or degenerate data (clips, boxes, splits)."""

    category = "data"


class TrackingError(DDFError):
    """Tracking could not start (e.g. no first-frame annotation)."""

    category = "data"
