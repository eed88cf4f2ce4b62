import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoproxy.projection import DomainRescaler, ProjectionDomainError, equal_earth_project


def reference_projection(lon_deg: float, lat_deg: float) -> tuple[float, float]:
    """Independent scalar evaluation of the published polynomial (math module,
    separate code path from the vectorized implementation)."""
    a1, a2, a3, a4 = 1.340264, -0.081106, 0.000893, 0.003796
    lam = math.radians(lon_deg)
    phi = math.radians(lat_deg)
    theta = math.asin(math.sqrt(3.0) / 2.0 * math.sin(phi))
    t2 = theta * theta
    t6 = t2 * t2 * t2
    y = theta * (a1 + a2 * t2 + t6 * (a3 + a4 * t2))
    x = (2.0 * math.sqrt(3.0) * lam * math.cos(theta)
         / (3.0 * (a1 + 3.0 * a2 * t2 + t6 * (7.0 * a3 + 9.0 * a4 * t2))))
    return x, y


def test_origin_maps_to_origin():
    assert equal_earth_project(0.0, 0.0) == (0.0, 0.0)


def test_reference_point_10_50():
    # frozen from the independent evaluation of the closed-form polynomial
    x, y = equal_earth_project(10.0, 50.0)
    assert abs(x - 0.1240350278331) < 1e-12
    assert abs(y - 0.9415402346600) < 1e-12


@given(st.floats(-180, 180), st.floats(-90, 90))
def test_odd_symmetry(lon, lat):
    x, y = equal_earth_project(lon, lat)
    xn, yn = equal_earth_project(-lon, -lat)
    assert math.isclose(x, -xn, abs_tol=1e-12)
    assert math.isclose(y, -yn, abs_tol=1e-12)


@given(st.floats(-180, 180), st.floats(-90, 90))
def test_matches_independent_reference(lon, lat):
    x, y = equal_earth_project(lon, lat)
    xr, yr = reference_projection(lon, lat)
    assert math.isclose(x, xr, rel_tol=1e-12, abs_tol=1e-14)
    assert math.isclose(y, yr, rel_tol=1e-12, abs_tol=1e-14)


@pytest.mark.parametrize("lon,lat", [(181.0, 0.0), (-181.0, 0.0), (0.0, 91.0), (0.0, -90.5)])
def test_domain_errors(lon, lat):
    with pytest.raises(ProjectionDomainError):
        equal_earth_project(lon, lat)


def test_vectorized_matches_scalar():
    lons = np.array([-120.0, 0.0, 45.0])
    lats = np.array([30.0, -15.0, 60.0])
    xs, ys = equal_earth_project(lons, lats)
    for i in range(3):
        x, y = equal_earth_project(float(lons[i]), float(lats[i]))
        assert xs[i] == x and ys[i] == y


def test_y_independent_of_longitude():
    _, y1 = equal_earth_project(-170.0, 37.0)
    _, y2 = equal_earth_project(60.0, 37.0)
    assert y1 == y2


def test_rescaler_maps_box_into_unit_square():
    resc = DomainRescaler(-105.0, -85.0, 30.0, 50.0)
    rng = np.random.default_rng(5)
    lons = rng.uniform(-105.0, -85.0, size=200)
    lats = rng.uniform(30.0, 50.0, size=200)
    pts = resc(lons, lats)
    assert pts.shape == (200, 2)
    assert pts.min() >= -1.0 - 1e-9
    assert pts.max() <= 1.0 + 1e-9
    # corners span the range
    corners = resc(np.array([-105.0, -85.0]), np.array([30.0, 50.0]))
    assert corners[:, 1].min() == -1.0
    assert corners[:, 1].max() == 1.0


def test_rescaler_rejects_degenerate_box():
    with pytest.raises(ValueError):
        DomainRescaler(10.0, 10.0, 0.0, 1.0)
