"""Exact optimal transport between small discrete measures.

``exact_w2sq`` solves the transport LP as a min-cost flow: weights are scaled
to integers (``WEIGHT_SCALE``) and solved by successive shortest paths, the
resulting flow is reduced to a spanning-tree basis, and the basis is then
re-solved with the original floating-point weights. The reported cost is
therefore exact for the given weights whenever the integer optimum's basis
stays primal feasible, which fails only for mass differences below
``1 / WEIGHT_SCALE``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._backend import kernels
from .errors import InstanceTooLarge, InvalidArgument
from .geometry import GroundSpace, pairwise_costs
from .support import SupportGrid

WEIGHT_SCALE = 10**9
MAX_ENTRIES = 1_000_000
MAX_SAMPLES = 500
MEASURE_MAGIC = "swb-measure"


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: np.ndarray
    weights: np.ndarray
    space: Optional[GroundSpace] = None

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != atoms.shape[0]:
            raise InvalidArgument("one weight per atom required")
        if np.any(w < 0):
            raise InvalidArgument("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12 * max(1, w.size):
            raise InvalidArgument(f"weights must sum to 1 (got {w.sum()!r})")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)
        if self.space is None:
            object.__setattr__(self, "space", GroundSpace.euclidean(atoms.shape[1]))

    @classmethod
    def uniform(cls, points, space: Optional[GroundSpace] = None) -> "DiscreteMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), space)

    @classmethod
    def on_grid(cls, grid: SupportGrid, weights) -> "DiscreteMeasure":
        return cls(grid.atoms, weights, grid.space)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def drop_zeros(self) -> "DiscreteMeasure":
        keep = self.weights > 0
        w = self.weights[keep]
        return DiscreteMeasure(self.atoms[keep], w / w.sum(), self.space)


@dataclass
class TransportPlan:
    """Sparse coupling: ``mass[e]`` moves from source ``rows[e]`` to target ``cols[e]``."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    shape: tuple
    source_potentials: Optional[np.ndarray] = field(default=None, repr=False)
    target_potentials: Optional[np.ndarray] = field(default=None, repr=False)

    def dense(self) -> np.ndarray:
        P = np.zeros(self.shape)
        np.add.at(P, (self.rows, self.cols), self.mass)
        return P

    def marginals(self):
        a = np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])
        b = np.bincount(self.cols, weights=self.mass, minlength=self.shape[1])
        return a, b

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.mass > 0))


def integerize(weights: np.ndarray, scale: int = WEIGHT_SCALE) -> np.ndarray:
    """Round ``weights * scale`` to integers summing exactly to ``scale``."""
    raw = np.asarray(weights, dtype=float) * scale
    q = np.floor(raw).astype(np.int64)
    short = int(scale - q.sum())
    # largest-remainder apportionment
    order = np.argsort(-(raw - q), kind="stable")
    if short > 0:
        q[order[:short]] += 1
    elif short < 0:
        q[np.argsort(-q, kind="stable")[:-short]] -= 1
    return q


def _basis_from_flow(F: np.ndarray, C: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Turn an optimal integer flow into a spanning-tree basis.

    Cycles in the flow support are cancelled (they have zero reduced cost),
    then components are joined Prim-style by the cheapest reduced-cost edge
    while shifting the joined component's potentials so that every basis edge
    is tight and all reduced costs stay nonnegative.
    """
    m, n = F.shape
    F = F.copy()
    rows, cols = np.nonzero(F)
    parent = list(range(m + n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    adj: dict[int, set] = {x: set() for x in range(m + n)}
    tree: set = set()
    for i, k in zip(rows.tolist(), cols.tolist()):
        a, b = i, m + k
        if F[i, k] == 0:
            continue
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            adj[a].add(b)
            adj[b].add(a)
            tree.add((i, k))
            continue
        # cycle: path b -> a in the forest, closed by edge (a, b)
        prev = {b: None}
        stack = [b]
        while stack:
            x = stack.pop()
            if x == a:
                break
            for y in adj[x]:
                if y not in prev:
                    prev[y] = x
                    stack.append(y)
        path = [a]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        # cycle edges in order: (a,b) then path b->...->a reversed
        nodes = [a] + path[::-1]  # a, b, ..., a
        cyc = []
        for x, y in zip(nodes[:-1], nodes[1:]):
            src, dst = (x, y - m) if x < m else (y, x - m)
            cyc.append((src, dst))
        plus = cyc[0::2]
        minus = cyc[1::2]
        th_minus = min(F[e] for e in minus)
        th_plus = min(F[e] for e in plus)
        if th_minus <= th_plus:
            for e in plus:
                F[e] += th_minus
            for e in minus:
                F[e] -= th_minus
        else:
            for e in plus:
                F[e] -= th_plus
            for e in minus:
                F[e] += th_plus
        for e in cyc:
            if F[e] == 0 and e in tree:
                tree.discard(e)
                x, y = e[0], m + e[1]
                adj[x].discard(y)
                adj[y].discard(x)
        if F[i, k] > 0:
            x, y = i, m + k
            adj[x].add(y)
            adj[y].add(x)
            tree.add((i, k))
        # rebuild union-find from the current forest
        parent[:] = list(range(m + n))
        for (p, q) in tree:
            rp, rq = find(p), find(m + q)
            if rp != rq:
                parent[rp] = rq
    # join components
    comp = np.array([find(x) for x in range(m + n)])
    u = u.copy()
    v = v.copy()
    while len(tree) < m + n - 1:
        cs = comp[:m]
        ct = comp[m:]
        rc = C - u[:, None] - v[None, :]
        rc[cs[:, None] == ct[None, :]] = np.inf
        flat = int(np.argmin(rc))
        i, k = divmod(flat, n)
        delta = max(float(rc[i, k]), 0.0)
        A = cs[i]
        u[cs == A] += delta
        v[ct == A] -= delta
        B = ct[k]
        comp[comp == A] = B
        tree.add((i, k))
    return sorted(tree), u, v


def _solve_tree(edges, a: np.ndarray, b: np.ndarray):
    """Flows on a spanning tree with float marginals, by leaf elimination."""
    m, n = a.size, b.size
    adj: dict[int, list] = {x: [] for x in range(m + n)}
    for e, (i, k) in enumerate(edges):
        adj[i].append((m + k, e))
        adj[m + k].append((i, e))
    rem = np.concatenate([a, b]).astype(float)
    deg = np.array([len(adj[x]) for x in range(m + n)])
    used = np.zeros(len(edges), dtype=bool)
    flow = np.zeros(len(edges))
    leaves = [x for x in range(m + n) if deg[x] == 1]
    while leaves:
        x = leaves.pop()
        if deg[x] != 1:
            continue
        for y, e in adj[x]:
            if not used[e]:
                break
        else:
            continue
        used[e] = True
        f = rem[x]
        flow[e] = f
        rem[y] -= f
        rem[x] = 0.0
        deg[x] -= 1
        deg[y] -= 1
        if deg[y] == 1:
            leaves.append(y)
    return flow


def solve_transport(a, b, C, *, scale: int = WEIGHT_SCALE) -> tuple[float, TransportPlan]:
    """Optimal transport for weights ``a``, ``b`` and dense cost ``C``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    m, n = C.shape
    if m * n > MAX_ENTRIES:
        raise InstanceTooLarge(f"{m} x {n} plan exceeds the {MAX_ENTRIES}-entry cap")
    if a.size != m or b.size != n:
        raise InvalidArgument("marginal sizes do not match the cost matrix")
    qa = integerize(a, scale)
    qb = integerize(b, scale)
    F, ps, pt = kernels.min_cost_flow(C, qa, qb)
    F = np.asarray(F)
    u = -np.asarray(ps)
    v = np.asarray(pt)
    edges, u, v = _basis_from_flow(F, C, u, v)
    flow = _solve_tree(edges, a, b)
    if flow.min() < -1e-7:
        # basis infeasible for the float weights: report the integer optimum
        rows, cols = np.nonzero(F)
        mass = F[rows, cols] / scale
    else:
        rows = np.array([e[0] for e in edges], dtype=np.int64)
        cols = np.array([e[1] for e in edges], dtype=np.int64)
        mass = np.maximum(flow, 0.0)
    cost = float(np.dot(mass, C[rows, cols]))
    keep = mass > 0
    plan = TransportPlan(rows[keep], cols[keep], mass[keep], (m, n), u, v)
    return cost, plan


def exact_w2sq(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, TransportPlan]:
    """Squared 2-Wasserstein distance and an optimal vertex plan."""
    if mu.atoms.shape[1] != nu.atoms.shape[1]:
        raise InvalidArgument("measures live in different dimensions")
    if mu.size * nu.size > MAX_ENTRIES:
        raise InstanceTooLarge(f"{mu.size} x {nu.size} exceeds the desk-scale cap")
    # solve in a canonical operand order so that swapping the arguments is bit-exact
    if _order_key(nu) < _order_key(mu):
        cost, plan = exact_w2sq(nu, mu)
        return cost, TransportPlan(plan.cols, plan.rows, plan.mass, plan.shape[::-1],
                                   plan.target_potentials, plan.source_potentials)
    C = pairwise_costs(mu.atoms, nu.atoms, mu.space)
    return solve_transport(mu.weights, nu.weights, C)


def _order_key(m: DiscreteMeasure):
    return (m.size, m.atoms.tobytes(), m.weights.tobytes())


def semi_discrete_dual(mu: DiscreteMeasure, nu: DiscreteMeasure, v: np.ndarray) -> float:
    """<w, v> + sum_i a_i min_k (c(x_i, y_k) - v_k) for target potentials ``v``."""
    C = pairwise_costs(mu.atoms, nu.atoms, mu.space)
    return float(nu.weights @ v + mu.weights @ (C - v[None, :]).min(axis=1))


def gaussian_w2sq(m1, s1: float, m2, s2: float) -> float:
    """W2^2 between isotropic Gaussians N(m1, s1^2 I) and N(m2, s2^2 I)."""
    if not (s1 > 0 and s2 > 0):
        raise InvalidArgument("standard deviations must be positive")
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    if m1.shape != m2.shape:
        raise InvalidArgument("mean dimensions differ")
    diff = m1 - m2
    return float(diff @ diff + m1.size * (s1 - s2) ** 2)


def barycenter_cost(measures: Sequence[DiscreteMeasure], grid: SupportGrid, w) -> float:
    """F(w) = mean_j W2^2(mu_j, sum_i w_i delta_{y_i}), evaluated exactly."""
    nu = DiscreteMeasure(grid.atoms, np.asarray(w, dtype=float) / np.sum(w), grid.space)
    return float(np.mean([exact_w2sq(mu, nu)[0] for mu in measures]))


def _compositions(n: int, R: int):
    if n == 1:
        yield (R,)
        return
    for first in range(R + 1):
        for rest in _compositions(n - 1, R - first):
            yield (first,) + rest


def simplex_grid(n: int, R: int):
    """All w = k / R on the n-simplex, in lexicographic order."""
    for k in _compositions(n, R):
        yield np.array(k, dtype=float) / R


def brute_force_barycenter(measures: Sequence[DiscreteMeasure], grid: SupportGrid,
                           simplex_resolution: int = 20) -> tuple[np.ndarray, float]:
    """Exhaustive search for the best weights on ``{k / R}`` grid points of the simplex.

    Only for tiny problems (n <= 4, R <= 40). Ties keep the lexicographically
    smallest weight vector.
    """
    n, R = grid.n, simplex_resolution
    if n > 4 or R > 40 or R < 1:
        raise InstanceTooLarge("brute-force barycenter needs n <= 4 and 1 <= R <= 40")
    costs = [pairwise_costs(mu.atoms, grid.atoms, mu.space) for mu in measures]
    best_w, best_f = None, math.inf
    for w in simplex_grid(n, R):
        f = float(np.mean([solve_transport(mu.weights, w, C)[0] for mu, C in zip(measures, costs)]))
        if f < best_f - 1e-12:
            best_w, best_f = w, f
    return best_w, best_f


def w2_between_samples(a, b, space: Optional[GroundSpace] = None,
                       max_samples: int = MAX_SAMPLES) -> float:
    """W2 between the uniform empirical measures on two point sets."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] > max_samples or b.shape[0] > max_samples:
        raise InstanceTooLarge(f"sample sets are capped at {max_samples} points")
    cost, _ = exact_w2sq(DiscreteMeasure.uniform(a, space), DiscreteMeasure.uniform(b, space))
    return math.sqrt(max(cost, 0.0))


def save_measure(measure: DiscreteMeasure, path) -> None:
    """Header ``swb-measure <d> <m>`` then ``weight coord...`` per atom."""
    d = measure.atoms.shape[1]
    lines = [f"{MEASURE_MAGIC} {d} {measure.size}"]
    for wt, row in zip(measure.weights, measure.atoms):
        lines.append(" ".join([repr(float(wt))] + [repr(float(c)) for c in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_measure(path, space: Optional[GroundSpace] = None) -> DiscreteMeasure:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 3 or head[0] != MEASURE_MAGIC:
        raise InvalidArgument(f"{path}: not an {MEASURE_MAGIC} file")
    d, m = int(head[1]), int(head[2])
    rows = [line.split() for line in text[1:] if line.strip()]
    if len(rows) != m or any(len(r) != d + 1 for r in rows):
        raise InvalidArgument(f"{path}: expected {m} rows of 1 + {d} numbers")
    data = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(m, d + 1)
    return DiscreteMeasure(data[:, 1:], data[:, 0], space)
