"""Ground spaces and squared-distance transport costs on R^d and S^2.

Points are plain 1-D float arrays. Costs are always evaluated on demand; no
module in this package keeps an n x n support cost matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateGeodesic, InvalidArgument

UNIT_TOL = 1e-9

EUCLIDEAN = "euclidean"
SPHERE2 = "sphere2"


@dataclass(frozen=True)
class GroundSpace:
    """Metric space the measures live on.

    Parameters
    ----------
    kind : {"euclidean", "sphere2"}
    dim : int
        Ambient coordinate dimension (3 for the sphere).
    diameter_hint : float, optional
        Known upper bound on pairwise distances.
    """

    kind: str
    dim: int
    diameter_hint: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, SPHERE2):
            raise InvalidArgument(f"unknown space kind {self.kind!r}")
        if self.dim < 1:
            raise InvalidArgument("dimension must be >= 1")
        if self.kind == SPHERE2:
            if self.dim != 3:
                raise InvalidArgument("sphere2 requires dim == 3")
            if self.diameter_hint is not None and self.diameter_hint > np.pi:
                raise InvalidArgument("sphere2 diameter cannot exceed pi")
        if self.diameter_hint is not None and self.diameter_hint < 0:
            raise InvalidArgument("diameter_hint must be nonnegative")

    @property
    def is_sphere(self) -> bool:
        return self.kind == SPHERE2

    @classmethod
    def euclidean(cls, dim: int, diameter_hint: Optional[float] = None) -> "GroundSpace":
        return cls(EUCLIDEAN, dim, diameter_hint)

    @classmethod
    def sphere(cls) -> "GroundSpace":
        return cls(SPHERE2, 3, np.pi)

    def validate_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.dim:
            raise InvalidArgument(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgument("point has non-finite coordinates")
        if self.is_sphere and abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
            raise InvalidArgument("sphere point is not unit norm")
        return x

    def cost(self, x, y) -> float:
        if self.is_sphere:
            return sphere_geodesic_cost(x, y)
        return squared_euclidean_cost(x, y)

    def distance(self, x, y) -> float:
        return float(np.sqrt(self.cost(x, y)))


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def _check_unit(x):
    if x.shape[0] != 3 or abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
        raise InvalidArgument("sphere cost expects unit-norm 3-vectors")


def squared_euclidean_cost(x, y) -> float:
    x, y = _pair(x, y)
    diff = x - y
    return float(diff @ diff)


def sphere_geodesic_cost(x, y) -> float:
    """Squared great-circle distance between two unit 3-vectors."""
    x, y = _pair(x, y)
    _check_unit(x)
    _check_unit(y)
    ip = float(np.clip(x @ y, -1.0, 1.0))
    return float(np.arccos(ip) ** 2)


def geodesic_interpolate(x, y, t: float, space: Optional[GroundSpace] = None) -> np.ndarray:
    """Point at fraction ``t`` along the geodesic from ``x`` to ``y``.

    Straight line in R^d; slerp on the sphere (chosen when ``space`` is a
    sphere, or when both inputs are unit 3-vectors and no space is given).
    """
    x, y = _pair(x, y)
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument("t must lie in [0, 1]")
    sphere = space.is_sphere if space is not None else False
    if not sphere:
        return (1.0 - t) * x + t * y
    _check_unit(x)
    _check_unit(y)
    ip = float(np.clip(x @ y, -1.0, 1.0))
    if ip <= -1.0 + 1e-12:
        raise DegenerateGeodesic("antipodal points have no unique geodesic")
    theta = np.arccos(ip)
    if theta < 1e-15:
        return x.copy()
    out = (np.sin((1.0 - t) * theta) * x + np.sin(t * theta) * y) / np.sin(theta)
    return out / np.linalg.norm(out)


def costs_to_atoms(x, atoms: np.ndarray, space: GroundSpace) -> np.ndarray:
    """Vector of c(x, y_i) over all atoms (length n)."""
    x = np.asarray(x, dtype=float)
    if space.is_sphere:
        ip = np.clip(atoms @ x, -1.0, 1.0)
        return np.arccos(ip) ** 2
    diff = atoms - x
    return np.einsum("ij,ij->i", diff, diff)


def pairwise_costs(a: np.ndarray, b: np.ndarray, space: GroundSpace) -> np.ndarray:
    """Dense (len(a), len(b)) cost matrix; desk-scale exact solvers only."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise InvalidArgument("dimension mismatch between point sets")
    if space.is_sphere:
        return np.arccos(np.clip(a @ b.T, -1.0, 1.0)) ** 2
    if a.shape[0] * b.shape[0] <= 250_000:
        # exact differences keep c(x, x) == 0 bit-for-bit
        diff = a[:, None, :] - b[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    sq = (
        np.einsum("ij,ij->i", a, a)[:, None]
        + np.einsum("ij,ij->i", b, b)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(sq, 0.0)


def rotate_about_axis(points: np.ndarray, axis, angles) -> np.ndarray:
    """Rodrigues rotation of row vectors ``points`` by ``angles`` about ``axis``.

    ``angles`` may be a scalar or one angle per row.
    """
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    p = np.atleast_2d(np.asarray(points, dtype=float))
    ang = np.asarray(angles, dtype=float)
    c = np.cos(ang)[..., None] if ang.ndim else np.cos(ang)
    s = np.sin(ang)[..., None] if ang.ndim else np.sin(ang)
    kxp = np.cross(k, p)
    kdp = (p @ k)[:, None]
    return p * c + kxp * s + k[None, :] * kdp * (1.0 - c)
