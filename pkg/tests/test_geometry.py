import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swb.errors import DegenerateGeodesic, InvalidArgument
from swb.geometry import (
    GroundSpace,
    costs_to_atoms,
    geodesic_interpolate,
    pairwise_costs,
    rotate_about_axis,
    sphere_geodesic_cost,
    squared_euclidean_cost,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_squared_euclidean_examples():
    assert squared_euclidean_cost([0.0, 0.0], [3.0, 4.0]) == 25.0
    assert squared_euclidean_cost([1.5], [1.5]) == 0.0


def test_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        squared_euclidean_cost([0.0, 0.0], [1.0])


def test_sphere_cost_examples():
    ex, ey, ez = np.eye(3)
    assert sphere_geodesic_cost(ex, ey) == pytest.approx((math.pi / 2) ** 2, abs=1e-15)
    assert sphere_geodesic_cost(ez, -ez) == pytest.approx(math.pi**2, abs=1e-15)
    assert sphere_geodesic_cost(ex, ex) == 0.0


def test_sphere_cost_rejects_non_unit():
    with pytest.raises(InvalidArgument):
        sphere_geodesic_cost([2.0, 0.0, 0.0], [1.0, 0.0, 0.0])


def test_sphere_cost_clamps_rounding():
    # inner product of a unit vector with itself can round above 1
    x = unit([0.1, 0.7, 0.3])
    assert sphere_geodesic_cost(x, x) == pytest.approx(0.0, abs=1e-14)


@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3))
def test_euclidean_symmetric_nonnegative(a, b):
    assert squared_euclidean_cost(a, b) == squared_euclidean_cost(b, a) >= 0


@settings(max_examples=200)
@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_sphere_triangle_inequality(c):
    pts = [np.array(c[3 * i:3 * i + 3]) for i in range(3)]
    if any(np.linalg.norm(p) < 1e-3 for p in pts):
        return
    x, y, z = (unit(p) for p in pts)
    d = lambda a, b: math.sqrt(sphere_geodesic_cost(a, b))
    assert d(x, z) <= d(x, y) + d(y, z) + 1e-9


def test_interpolate_euclidean_midpoint():
    np.testing.assert_allclose(geodesic_interpolate([0.0, 0.0], [2.0, 4.0], 0.5), [1.0, 2.0])


def test_interpolate_sphere_quarter():
    ex, ey, _ = np.eye(3)
    mid = geodesic_interpolate(ex, ey, 0.5, GroundSpace.sphere())
    np.testing.assert_allclose(mid, unit([1.0, 1.0, 0.0]), atol=1e-15)


def test_interpolate_antipodal_raises():
    ez = np.array([0.0, 0.0, 1.0])
    with pytest.raises(DegenerateGeodesic):
        geodesic_interpolate(ez, -ez, 0.3, GroundSpace.sphere())


@settings(max_examples=100)
@given(st.floats(0, 1))
def test_interpolate_stays_on_sphere(t):
    x, y = unit([1, 2, 3]), unit([-2, 1, 0.5])
    p = geodesic_interpolate(x, y, t, GroundSpace.sphere())
    assert abs(np.linalg.norm(p) - 1) < 1e-12
    total = math.sqrt(sphere_geodesic_cost(x, y))
    # arccos near 1 resolves angles only to about sqrt(machine eps)
    assert math.sqrt(sphere_geodesic_cost(x, p)) == pytest.approx(t * total, abs=5e-8)


def test_pairwise_matches_scalar(rng):
    a, b = rng.normal(size=(7, 2)), rng.normal(size=(5, 2))
    C = pairwise_costs(a, b, GroundSpace.euclidean(2))
    for i in range(7):
        for j in range(5):
            assert C[i, j] == pytest.approx(squared_euclidean_cost(a[i], b[j]), rel=1e-14)
    s = rng.normal(size=(4, 3))
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    C = pairwise_costs(s, s, GroundSpace.sphere())
    assert C[1, 2] == pytest.approx(sphere_geodesic_cost(s[1], s[2]))


def test_costs_to_atoms_matches_pairwise(rng):
    atoms = rng.normal(size=(6, 3))
    x = rng.normal(size=3)
    sp = GroundSpace.euclidean(3)
    np.testing.assert_allclose(costs_to_atoms(x, atoms, sp), pairwise_costs(x[None], atoms, sp)[0])


def test_rotation_quarter_turn():
    out = rotate_about_axis([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], math.pi / 2)
    np.testing.assert_allclose(out[0], [0.0, 1.0, 0.0], atol=1e-15)


def test_space_validation():
    with pytest.raises(InvalidArgument):
        GroundSpace("torus", 2)
    with pytest.raises(InvalidArgument):
        GroundSpace("sphere2", 2)
    with pytest.raises(InvalidArgument):
        GroundSpace.sphere().validate_point([1.0, 1.0, 0.0])
