"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

COORD_COLUMNS = 3  # lon, lat, epoch_day


def check_coordinate_matrix(X, min_features: int = COORD_COLUMNS) -> np.ndarray:
    """Validate an (n, 3 + k) design matrix whose leading columns are
    longitude (degrees), latitude (degrees), and time (days since
    1970-01-01). Returns a float64 array."""
    X = check_array(X, dtype=np.float64, ensure_min_features=min_features)
    lon, lat = X[:, 0], X[:, 1]
    if np.any(np.abs(lon) > 180.0):
        raise ValueError("column 0 (longitude) must lie in [-180, 180] degrees")
    if np.any(np.abs(lat) > 90.0):
        raise ValueError("column 1 (latitude) must lie in [-90, 90] degrees")
    return X


def check_target(y, n_rows: int) -> np.ndarray:
    y = check_array(y, dtype=np.float64, ensure_2d=False)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-dimensional, got shape {y.shape}")
    if len(y) != n_rows:
        raise ValueError(f"X has {n_rows} rows but y has {len(y)}")
    return y
