"""Equal Earth forward projection and per-domain coordinate rescaling.

Constants are the four published Equal Earth polynomial coefficients on the
unit sphere. The projection is pseudocylindrical and equal-area; x and y are
odd in longitude and latitude respectively.
"""

from __future__ import annotations

import numpy as np

A1 = 1.340264
A2 = -0.081106
A3 = 0.000893
A4 = 0.003796

_M = np.sqrt(3.0) / 2.0


class ProjectionDomainError(ValueError):
    """Input outside lon [-180, 180] / lat [-90, 90]."""


def equal_earth_project(lon, lat):
    """Project degrees (lon, lat) to Equal Earth (x, y) in projection units.

    Accepts scalars or arrays; returns a pair with the broadcast shape.
    """
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if np.any(np.abs(lon) > 180.0) or np.any(np.abs(lat) > 90.0):
        raise ProjectionDomainError(
            "equal_earth_project: lon must be in [-180, 180] and lat in [-90, 90]"
        )
    lam = np.radians(lon)
    phi = np.radians(lat)
    theta = np.arcsin(_M * np.sin(phi))
    t2 = theta * theta
    t6 = t2 * t2 * t2
    y = theta * (A1 + A2 * t2 + t6 * (A3 + A4 * t2))
    denom = 3.0 * (A1 + 3.0 * A2 * t2 + t6 * (7.0 * A3 + 9.0 * A4 * t2))
    x = 2.0 * np.sqrt(3.0) * lam * np.cos(theta) / denom
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


class DomainRescaler:
    """Affine map from projected coordinates to [-1, 1] per axis over a lon/lat box.

    Rescaling makes the random-feature length scales mean the same thing
    regardless of the size of the study region. Extremes of x over a box lie
    on its boundary or on the equator crossing, so those are what we scan.
    """

    def __init__(self, lon_min: float = -180.0, lon_max: float = 180.0,
                 lat_min: float = -90.0, lat_max: float = 90.0):
        if not (lon_min < lon_max and lat_min < lat_max):
            raise ValueError(
                f"degenerate domain box lon=[{lon_min},{lon_max}] lat=[{lat_min},{lat_max}]"
            )
        self.bounds = (lon_min, lon_max, lat_min, lat_max)
        lats = np.linspace(lat_min, lat_max, 257)
        if lat_min < 0.0 < lat_max:
            lats = np.append(lats, 0.0)
        lons = np.linspace(lon_min, lon_max, 257)
        edge_lon = np.concatenate([np.full_like(lats, lon_min), np.full_like(lats, lon_max), lons,
                                   np.full_like(lons, lon_min)])
        edge_lat = np.concatenate([lats, lats, np.full_like(lons, lat_min),
                                   np.full_like(lons, lat_max)])
        x, y = equal_earth_project(edge_lon, edge_lat)
        self._x_lo, self._x_hi = float(x.min()), float(x.max())
        self._y_lo, self._y_hi = float(y.min()), float(y.max())

    def __call__(self, lon, lat):
        """Project and rescale to the unit box; returns an (n, 2) array."""
        x, y = equal_earth_project(lon, lat)
        sx = 2.0 * (np.asarray(x) - self._x_lo) / (self._x_hi - self._x_lo) - 1.0
        sy = 2.0 * (np.asarray(y) - self._y_lo) / (self._y_hi - self._y_lo) - 1.0
        return np.stack([np.atleast_1d(sx), np.atleast_1d(sy)], axis=1)
