"""Serial semi-discrete barycenter solver.

State is ``u = (s, v^1, ..., v^J)`` with the coupling ``s = sum_j v^j`` kept
exact by construction: every step moves one entry of ``v^j`` and the same
entry of ``s`` by the same amount. The barycenter estimate is the histogram of
the indices ``i_M = argmin s`` chosen at each step.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._backend import kernels as _default_kernels
from .errors import EmptyState, InvalidArgument
from .geometry import pairwise_costs
from .support import SupportGrid

CHECKPOINT_MAGIC = b"SWBCKPT\x00"
CHECKPOINT_VERSION = 1


def make_tracker(keys: np.ndarray, kernels=None):
    """Min-tracker wrapping ``keys`` in place (no copy)."""
    k = kernels or _default_kernels
    return k.MinTracker(keys)


def tracker_update(tracker, i: int, delta: float) -> None:
    tracker.update(i, delta)


class SlidingWindow:
    """Ring buffer of the last ``capacity`` indices plus their histogram."""

    def __init__(self, capacity: int, n: int):
        if capacity < 1:
            raise InvalidArgument("window capacity must be positive")
        self.capacity = int(capacity)
        self.ring = np.zeros(self.capacity, dtype=np.int64)
        self.hist = np.zeros(n, dtype=np.int64)
        self.head = 0  # next write position
        self.size = 0

    def push(self, i: int) -> None:
        if self.size == self.capacity:
            self.hist[self.ring[self.head]] -= 1
        else:
            self.size += 1
        self.ring[self.head] = i
        self.hist[i] += 1
        self.head = (self.head + 1) % self.capacity

    def extend(self, idx: np.ndarray) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size >= self.capacity:
            self.ring[:] = idx[-self.capacity:]
            self.head = 0
            self.size = self.capacity
            self.hist[:] = np.bincount(self.ring, minlength=self.hist.size)
            return
        k = idx.size
        pos = (self.head + np.arange(k)) % self.capacity
        n_evict = max(0, self.size + k - self.capacity)
        if n_evict:
            oldest = (self.head - self.size + np.arange(n_evict)) % self.capacity
            np.subtract.at(self.hist, self.ring[oldest], 1)
        self.ring[pos] = idx
        np.add.at(self.hist, idx, 1)
        self.head = (self.head + k) % self.capacity
        self.size = min(self.capacity, self.size + k)

    def contents(self) -> np.ndarray:
        """Window entries, oldest first."""
        pos = (self.head - self.size + np.arange(self.size)) % self.capacity
        return self.ring[pos]


@dataclass
class SolverState:
    s: np.ndarray
    V: np.ndarray
    counts: np.ndarray
    gamma: float
    t: int = 0
    window: Optional[SlidingWindow] = None
    l1: float = 0.0
    l1_max: float = 0.0

    @classmethod
    def zeros(cls, n: int, J: int, gamma: float, window: Optional[int] = None) -> "SolverState":
        if n < 1 or J < 1:
            raise InvalidArgument("need n >= 1 and J >= 1")
        if not gamma >= 0:
            raise InvalidArgument("gamma must be nonnegative")
        return cls(
            s=np.zeros(n),
            V=np.zeros((J, n)),
            counts=np.zeros(n, dtype=np.int64),
            gamma=float(gamma),
            window=SlidingWindow(window, n) if window else None,
        )

    @property
    def n(self) -> int:
        return self.s.size

    @property
    def J(self) -> int:
        return self.V.shape[0]

    def constraint_violation(self) -> float:
        """max_i |s_i - sum_j v^j_i|."""
        return float(np.max(np.abs(self.s - self.V.sum(axis=0))))

    def record(self, im: np.ndarray) -> None:
        im = np.asarray(im, dtype=np.int64)
        self.counts += np.bincount(im, minlength=self.n)
        if self.window is not None:
            self.window.extend(im)
        self.t += im.size


@dataclass(frozen=True)
class GradientEvent:
    j: int
    i_W: int
    i_M: int


def c_transform_argmin(x, v, grid: SupportGrid, kernels=None) -> tuple[int, float]:
    """``(argmin_i c(x, y_i) - v_i, min value)``; ties go to the lowest index."""
    k = kernels or _default_kernels
    v = np.ascontiguousarray(v, dtype=float)
    if v.size != grid.n:
        raise InvalidArgument("potential length does not match the grid")
    x = np.ascontiguousarray(x, dtype=float)
    return k.c_transform_argmin(x, grid.atoms, v, grid.space.is_sphere)


def _run(state, tracker, grid, js, X, kernels):
    T = len(js)
    iw = np.empty(T, dtype=np.int64)
    im = np.empty(T, dtype=np.int64)
    state.l1, state.l1_max = kernels.run_steps(
        state.s, state.V, tracker, grid.atoms, grid.space.is_sphere,
        np.ascontiguousarray(js, dtype=np.int64), np.ascontiguousarray(X, dtype=float),
        state.gamma, state.J, iw, im, state.l1, state.l1_max,
    )
    state.record(im)
    return iw, im


def step(state: SolverState, j: int, x, grid: SupportGrid, tracker, kernels=None) -> GradientEvent:
    """One projected stochastic subgradient step for measure ``j`` and sample ``x``.

    Net effect: ``v^j[i_M] += g/2J``, ``v^j[i_W] -= g/2`` and the same on ``s``.
    """
    if not 0 <= j < state.J:
        raise InvalidArgument("measure index out of range")
    iw, im = _run(state, tracker, grid, [j], np.atleast_2d(x), kernels or _default_kernels)
    return GradientEvent(int(j), int(iw[0]), int(im[0]))


def gradient_entries(event: GradientEvent, gamma, J: int) -> list:
    """The raw subgradient step as ``((row, col), value)``; column 0 is ``s``."""
    return [((event.i_M, 0), gamma / J), ((event.i_W, 1 + event.j), -gamma)]


def sparse_project(i_W: int, i_M: int, j: int, gamma, J: int) -> list:
    """l1-minimal correction restoring ``s = sum_j v^j`` after a gradient step.

    Returns four ``((row, col), value)`` entries with column 0 for ``s`` and
    column ``1 + j`` for ``v^j``: ``-g/2J`` and ``+g/2J`` on row ``i_M``,
    ``-g/2`` and ``+g/2`` on row ``i_W``. Their l1 norm is ``g * (1/J + 1)``,
    the least possible since each row must absorb its own violation.
    """
    two = 2 if isinstance(gamma, (int, Fraction)) else 2.0
    return [
        ((i_M, 0), -gamma / (two * J)),
        ((i_M, 1 + j), gamma / (two * J)),
        ((i_W, 0), -gamma / two),
        ((i_W, 1 + j), gamma / two),
    ]


def barycenter_estimate(state: SolverState, windowed: bool = False) -> np.ndarray:
    """Normalized visit histogram of ``i_M`` (full history or sliding window)."""
    if windowed:
        if state.window is None:
            raise InvalidArgument("state has no sliding window")
        h = state.window.hist
    else:
        h = state.counts
    total = h.sum()
    if total == 0:
        raise EmptyState("no iterations recorded yet")
    return h / total


def theorem1_stepsize(R: float, T: int) -> float:
    """Constant step ``R / (4 sqrt(T))`` for a horizon of ``T`` iterations."""
    if not R > 0 or T < 1:
        raise InvalidArgument("need R > 0 and T >= 1")
    return R / (4.0 * math.sqrt(T))


class SerialSolver:
    """Single-process driver around :class:`SolverState`."""

    def __init__(self, grid: SupportGrid, J: int, gamma: float, window: Optional[int] = None,
                 kernels=None):
        self.grid = grid
        self.kernels = kernels or _default_kernels
        self.state = SolverState.zeros(grid.n, J, gamma, window)
        self.tracker = make_tracker(self.state.s, self.kernels)

    @classmethod
    def from_state(cls, grid: SupportGrid, state: SolverState, kernels=None) -> "SerialSolver":
        if state.n != grid.n:
            raise InvalidArgument("state size does not match the grid")
        self = cls.__new__(cls)
        self.grid = grid
        self.kernels = kernels or _default_kernels
        self.state = state
        self.tracker = make_tracker(state.s, self.kernels)
        return self

    def step(self, j: int, x) -> GradientEvent:
        return step(self.state, j, x, self.grid, self.tracker, self.kernels)

    def run_batch(self, js, X, record: bool = False):
        iw, im = _run(self.state, self.tracker, self.grid, js, X, self.kernels)
        if record:
            return [GradientEvent(int(j), int(a), int(b)) for j, a, b in zip(js, iw, im)]
        return None

    def run(self, oracles: Sequence, iterations: int, rng=None, batch: int = 8192,
            j_sequence=None, record: bool = False, callback=None, callback_every: int = 0):
        """Run ``iterations`` steps, drawing ``j`` uniformly (or from ``j_sequence``)."""
        J = self.state.J
        if len(oracles) != J:
            raise InvalidArgument(f"expected {J} oracles, got {len(oracles)}")
        rng = np.random.default_rng(rng)
        events = [] if record else None
        chunk = batch if not callback_every else min(batch, callback_every)
        done = 0
        while done < iterations:
            k = min(chunk, iterations - done)
            if j_sequence is not None:
                js = np.asarray(j_sequence[done:done + k], dtype=np.int64)
            else:
                js = rng.integers(J, size=k)
            X = np.empty((k, self.grid.dim))
            for j in range(J):
                sel = np.flatnonzero(js == j)
                if sel.size:
                    X[sel] = oracles[j].draw(sel.size)
            ev = self.run_batch(js, X, record)
            if record:
                events.extend(ev)
            done += k
            if callback is not None and callback_every and self.state.t % callback_every == 0:
                callback(self)
        return events

    def weights(self, windowed: bool = False) -> np.ndarray:
        return barycenter_estimate(self.state, windowed)


def exact_shadow_run(events: Sequence[GradientEvent], n: int, J: int, gamma) -> tuple:
    """Replay recorded steps in rational arithmetic: raw gradient plus projection.

    Returns ``(s, V)`` as lists of :class:`fractions.Fraction`.
    """
    g = Fraction(gamma)
    s = [Fraction(0)] * n
    V = [[Fraction(0)] * n for _ in range(J)]
    for ev in events:
        for (row, col), val in gradient_entries(ev, g, J) + sparse_project(ev.i_W, ev.i_M, ev.j, g, J):
            if col == 0:
                s[row] += val
            else:
                V[col - 1][row] += val
    return s, V


# -- objective evaluation ------------------------------------------------------


def semi_discrete_w2sq(weights, oracle, grid: SupportGrid, samples: int, ascent_steps: Optional[int] = None,
                       eta0: Optional[float] = None, kernels=None) -> float:
    """Stochastic estimate of W2^2(mu, sum_i w_i delta_{y_i}) through the semi-discrete dual.

    Averaged stochastic ascent on ``v`` (step ``eta0 / sqrt(t)``, second half
    averaged), then the dual objective at the averaged ``v`` on ``samples``
    fresh draws. The result is a lower bound up to Monte Carlo noise.
    """
    k = kernels or _default_kernels
    w = np.ascontiguousarray(weights, dtype=float)
    sphere = grid.space.is_sphere
    steps = ascent_steps or 4 * samples
    if eta0 is None:
        # step scale: mean cost of an independent coupling, an upper bound on W2^2
        pilot = oracle.draw(min(256, samples))
        eta0 = float(np.mean(pairwise_costs(pilot, grid.atoms, grid.space) @ w))
        if not eta0 > 0:
            eta0 = 1.0
    v = np.zeros(grid.n)
    vsum = np.zeros(grid.n)
    half = steps // 2
    k.dual_ascent(v, vsum, w, grid.atoms, sphere, oracle.draw(half), eta0, 0, False)
    k.dual_ascent(v, vsum, w, grid.atoms, sphere, oracle.draw(steps - half), eta0, half, True)
    vbar = vsum / (steps - half)
    _, h = k.c_transform_batch(oracle.draw(samples), grid.atoms, vbar, sphere)
    return float(w @ vbar + h.mean())


def objective_estimate(weights, oracles: Sequence, grid: SupportGrid, samples_per_measure: int,
                       ascent_steps: Optional[int] = None, kernels=None) -> float:
    """Estimate F(w) = mean_j W2^2(mu_j, nu_w) from sample access to every ``mu_j``."""
    w = np.asarray(weights, dtype=float)
    if w.size != grid.n or np.any(w < -1e-15) or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidArgument("weights must lie on the grid's simplex")
    vals = [
        semi_discrete_w2sq(w, o, grid, samples_per_measure, ascent_steps, kernels=kernels)
        for o in oracles
    ]
    return float(np.mean(vals))


# -- checkpoints ---------------------------------------------------------------

_HEAD = struct.Struct("<8sIIII d Q d d")


def save_checkpoint(state: SolverState, path) -> None:
    """Binary little-endian dump; layout documented in docs/checkpoint.md."""
    flags = 1 if state.window is not None else 0
    parts = [
        _HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, state.n, state.J, flags,
                   state.gamma, state.t, state.l1, state.l1_max),
        state.s.astype("<f8").tobytes(),
        state.V.astype("<f8").tobytes(),
        state.counts.astype("<i8").tobytes(),
    ]
    if state.window is not None:
        w = state.window
        parts.append(struct.pack("<QQQ", w.capacity, w.size, w.head))
        parts.append(w.ring.astype("<i8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> SolverState:
    buf = Path(path).read_bytes()
    magic, version, n, J, flags, gamma, t, l1, l1_max = _HEAD.unpack_from(buf, 0)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise InvalidArgument(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    off = _HEAD.size

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).astype(dtype[1:])
        off += count * 8
        return arr

    s = take(n, "<f8").astype(float)
    V = take(J * n, "<f8").astype(float).reshape(J, n)
    counts = take(n, "<i8").astype(np.int64)
    window = None
    if flags & 1:
        cap, size, head = struct.unpack_from("<QQQ", buf, off)
        off += 24
        window = SlidingWindow(cap, n)
        window.ring[:] = take(cap, "<i8")
        window.size, window.head = size, head
        window.hist[:] = np.bincount(window.contents(), minlength=n)
    return SolverState(s=np.ascontiguousarray(s), V=np.ascontiguousarray(V), counts=counts,
                       gamma=gamma, t=t, window=window, l1=l1, l1_max=l1_max)
