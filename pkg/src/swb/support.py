"""Fixed barycenter supports: box meshes in R^d, Fibonacci lattices on S^2.

Atom order is fixed at construction; atom indices are what the solver and
the wire protocol exchange.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgument
from .geometry import UNIT_TOL, GroundSpace

GRID_MAGIC = "swb-grid"


@dataclass(frozen=True)
class SupportGrid:
    """``n`` ordered atoms (rows of ``atoms``) in ``space``."""

    atoms: np.ndarray
    space: GroundSpace

    def __post_init__(self):
        atoms = np.ascontiguousarray(np.atleast_2d(np.asarray(self.atoms, dtype=float)))
        if atoms.shape[0] < 1:
            raise InvalidArgument("a support grid needs at least one atom")
        if atoms.shape[1] != self.space.dim:
            raise InvalidArgument("atom dimension does not match the space")
        if not np.all(np.isfinite(atoms)):
            raise InvalidArgument("atoms must be finite")
        if self.space.is_sphere:
            norms = np.linalg.norm(atoms, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOL):
                raise InvalidArgument("sphere atoms must be unit norm")
        if np.unique(atoms, axis=0).shape[0] != atoms.shape[0]:
            raise InvalidArgument("atoms must be pairwise distinct")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise InvalidArgument("lo and hi must have the same length")
        if np.any(lo > hi):
            raise InvalidArgument("lo must be <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)


def fit_bounding_box(samples) -> BoundingBox:
    """Smallest axis-aligned box containing every sample."""
    pts = np.asarray(samples, dtype=float)
    if pts.size == 0:
        raise InvalidArgument("cannot fit a bounding box to an empty sample list")
    pts = np.atleast_2d(pts)
    return BoundingBox(pts.min(axis=0), pts.max(axis=0))


def _axis_counts(lengths: np.ndarray, delta: float) -> np.ndarray:
    # relative slack so that delta = L/m lands on m+1 points, not m
    k = np.floor(lengths / delta * (1.0 + 1e-12)).astype(np.int64) + 1
    k[lengths <= 0] = 1
    return k


def mesh_counts(box: BoundingBox, target_n: int) -> tuple[np.ndarray, float]:
    """Per-axis counts and common spacing for :func:`mesh_grid`.

    Scans every spacing at which some axis count changes, keeps the count
    vector whose product is closest to ``target_n`` (never above
    ``2 * target_n``; ties go to the smaller product), and returns the
    widest spacing realising it.
    """
    if target_n < 1:
        raise InvalidArgument("target_n must be positive")
    L = box.lengths
    active = L > 0
    if not np.any(active):
        return np.ones_like(L, dtype=np.int64), 0.0
    # spacing breakpoints L_i / m; beyond m = target_n the product only grows
    cands = sorted(
        {float(L[i] / m) for i in np.flatnonzero(active) for m in range(1, target_n + 1)},
        reverse=True,
    )
    best = None
    for delta in cands:
        k = _axis_counts(L, delta)
        prod = int(np.prod(k))
        if prod > 2 * target_n:
            break
        key = (abs(prod - target_n), prod)
        if best is None or key < best[0]:
            best = (key, k)
    if best is None:
        k = np.ones_like(L, dtype=np.int64)
    else:
        k = best[1]
    spans = [L[i] / (k[i] - 1) for i in range(len(L)) if k[i] > 1]
    delta = float(min(spans)) if spans else float(L[active].max())
    return k, delta


def mesh_grid(box: BoundingBox, target_n: int) -> SupportGrid:
    """Evenly spaced mesh over ``box`` with a common spacing on every axis.

    Each axis gets a count proportional to its length; the mesh is centred
    inside the box, and degenerate axes hold a single coordinate.
    """
    k, delta = mesh_counts(box, target_n)
    L = box.lengths
    axes = []
    for i in range(len(L)):
        if k[i] == 1:
            axes.append(np.array([box.lo[i] + 0.5 * L[i]]))
            continue
        offset = 0.5 * (L[i] - (k[i] - 1) * delta)
        pts = box.lo[i] + offset + delta * np.arange(k[i])
        axes.append(np.clip(pts, box.lo[i], box.hi[i]))
    mesh = np.array(list(itertools.product(*axes)), dtype=float)
    return SupportGrid(mesh, GroundSpace.euclidean(len(L)))


def sphere_lattice(n: int) -> SupportGrid:
    """``n`` quasi-uniform unit vectors from the Fibonacci spiral."""
    if n < 1:
        raise InvalidArgument("n must be positive")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * i
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return SupportGrid(pts, GroundSpace.sphere())


def nearest_atom_distance(grid: SupportGrid, probes) -> np.ndarray:
    """Distance from every probe to its closest atom, in the grid's metric."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[0] == 0:
        raise InvalidArgument("need at least one probe")
    if probes.shape[1] != grid.dim:
        raise InvalidArgument("probe dimension does not match the grid")
    dist, _ = cKDTree(grid.atoms).query(probes, k=1)
    if grid.space.is_sphere:
        # chordal -> geodesic is monotone, so the nearest atom is unchanged
        dist = 2.0 * np.arcsin(np.clip(dist / 2.0, 0.0, 1.0))
    return dist


def cover_radius(grid: SupportGrid, probes) -> float:
    """Largest probe-to-nearest-atom distance (empirical cover radius)."""
    return float(nearest_atom_distance(grid, probes).max())


def uniform_sphere(n: int, rng) -> np.ndarray:
    g = rng.standard_normal((n, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def save_grid(grid: SupportGrid, path) -> None:
    """Write ``swb-grid <kind> <d> <n>`` then one atom per line."""
    lines = [f"{GRID_MAGIC} {grid.space.kind} {grid.dim} {grid.n}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in grid.atoms]
    Path(path).write_text("\n".join(lines) + "\n")


def load_grid(path) -> SupportGrid:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 4 or head[0] != GRID_MAGIC:
        raise InvalidArgument(f"{path}: not an {GRID_MAGIC} file")
    kind, d, n = head[1], int(head[2]), int(head[3])
    rows = [line.split() for line in text[1:] if line.strip()]
    if len(rows) != n or any(len(r) != d for r in rows):
        raise InvalidArgument(f"{path}: expected {n} rows of {d} coordinates")
    atoms = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(n, d)
    space = GroundSpace.sphere() if kind == "sphere2" else GroundSpace.euclidean(d)
    return SupportGrid(atoms, space)
