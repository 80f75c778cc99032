"""Image moments of greyscale rasters and player-heading recovery.

Coordinates follow image convention: ``x`` is the column index and ``y`` the
row index, with the origin at the top-left pixel.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import EpisumError

NON_CARDINAL = "non_cardinal"
DIRECTION_TOLERANCE = math.radians(10.0)


class EmptyBlobError(EpisumError, ValueError):
    pass


class OrientationUndefinedError(EpisumError, ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class MomentSet:
    raw: dict  # (p, q) -> M_pq for p, q in 0..2
    centroid: tuple
    central: dict  # (p, q) -> mu_pq for p + q <= 2
    normalized_central: dict  # "20", "02", "11" -> mu'_pq
    theta: float


def _intensities(r):
    return np.asarray(getattr(r, "intensities", r), dtype=np.float64)


def raw_moment(r, p, q):
    """Raw moment ``M_pq = sum_x sum_y x^p y^q I(x, y)``."""
    if p < 0 or q < 0:
        raise ValueError("moment orders must be non-negative")
    img = _intensities(r)
    xs = np.arange(img.shape[1], dtype=np.float64) ** p
    ys = np.arange(img.shape[0], dtype=np.float64) ** q
    return float(ys @ img @ xs)


def centroid(r):
    m00 = raw_moment(r, 0, 0)
    if m00 <= 0:
        raise EmptyBlobError("empty blob: raster has zero total intensity")
    return raw_moment(r, 1, 0) / m00, raw_moment(r, 0, 1) / m00


def central_moment(r, p, q, center=None):
    img = _intensities(r)
    xbar, ybar = centroid(r) if center is None else center
    xs = (np.arange(img.shape[1], dtype=np.float64) - xbar) ** p
    ys = (np.arange(img.shape[0], dtype=np.float64) - ybar) ** q
    return float(ys @ img @ xs)


def _theta(mu20, mu02, mu11):
    if mu20 == mu02 and mu11 == 0:
        raise OrientationUndefinedError("orientation undefined for an isotropic blob")
    return 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)


def central_moments(r):
    """Full :class:`MomentSet`; ``theta`` is NaN when the blob is isotropic."""
    raw = {(p, q): raw_moment(r, p, q) for p in range(3) for q in range(3)}
    if raw[0, 0] <= 0:
        raise EmptyBlobError("empty blob: raster has zero total intensity")
    center = (raw[1, 0] / raw[0, 0], raw[0, 1] / raw[0, 0])
    central = {
        (p, q): central_moment(r, p, q, center)
        for p in range(3)
        for q in range(3)
        if p + q <= 2
    }
    mu00 = central[0, 0]
    norm = {
        "20": central[2, 0] / mu00,
        "02": central[0, 2] / mu00,
        "11": central[1, 1] / mu00,
    }
    try:
        theta = _theta(norm["20"], norm["02"], norm["11"])
    except OrientationUndefinedError:
        theta = float("nan")
    return MomentSet(raw, center, central, norm, theta)


def orientation(r):
    """Principal-axis angle in radians, on the branch ``(-pi/2, pi/2]``.

    Uses the two-argument arctangent of ``(2 mu'11, mu'20 - mu'02)`` so the
    quadrant is resolved.  Because ``y`` grows downward, a positive angle
    leans toward the bottom-right.
    """
    m = central_moments(r)
    return _theta(m.normalized_central["20"], m.normalized_central["02"], m.normalized_central["11"])


def infer_direction(r, tolerance=DIRECTION_TOLERANCE):
    """Recover a glyph's heading as left/right/up/down or ``"non_cardinal"``.

    The axis comes from the orientation angle; the sense along it comes from
    centroid skew: a filled triangle's mass sits toward its base, so the
    apex lies on the side of the bounding-box centre away from the centroid.
    """
    img = _intensities(r)
    if not np.any(img > 0):
        return NON_CARDINAL
    try:
        theta = orientation(img)
    except OrientationUndefinedError:
        return NON_CARDINAL
    xbar, ybar = centroid(img)
    rows, cols = np.nonzero(img > 0)
    if abs(theta) <= tolerance:
        skew = (cols.min() + cols.max()) / 2.0 - xbar
        if skew > 0:
            return "right"
        if skew < 0:
            return "left"
        return NON_CARDINAL
    if abs(abs(theta) - math.pi / 2) <= tolerance:
        skew = (rows.min() + rows.max()) / 2.0 - ybar
        if skew > 0:
            return "down"
        if skew < 0:
            return "up"
    return NON_CARDINAL
