"""Pull-based sample oracles for the input measures.

Every oracle owns its random generator. ``draw(k)`` returns the same rows as
``k`` consecutive ``draw(1)`` calls, so workers may prefetch in batches
without changing the sample stream.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument
from .geometry import UNIT_TOL, GroundSpace, rotate_about_axis

log = logging.getLogger(__name__)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class SampleOracle:
    """Base class: subclasses implement ``_draw(k) -> (k, d) array``."""

    space: GroundSpace
    stationary: bool = True

    def __init__(self, space: GroundSpace, seed=None):
        self.space = space
        self.rng = _rng(seed)
        self.n_drawn = 0

    def _draw(self, k: int) -> np.ndarray:
        raise NotImplementedError

    def draw(self, k: int) -> np.ndarray:
        if k < 0:
            raise InvalidArgument("k must be nonnegative")
        out = np.ascontiguousarray(self._draw(k), dtype=float).reshape(k, self.space.dim)
        self.n_drawn += k
        return out

    def next_sample(self) -> np.ndarray:
        return self.draw(1)[0]


class GaussianOracle(SampleOracle):
    """i.i.d. N(mean, sigma^2 I) in R^d."""

    def __init__(self, mean, sigma: float, seed=None):
        mean = np.asarray(mean, dtype=float).ravel()
        if not sigma > 0:
            raise InvalidArgument("sigma must be positive")
        super().__init__(GroundSpace.euclidean(mean.size), seed)
        self.mean = mean
        self.sigma = float(sigma)

    def _draw(self, k):
        return self.mean + self.sigma * self.rng.standard_normal((k, self.mean.size))


def gaussian_oracle(mean, sigma, seed=None) -> GaussianOracle:
    return GaussianOracle(mean, sigma, seed)


@dataclass(frozen=True)
class VmfParams:
    mean_direction: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.asarray(self.mean_direction, dtype=float).ravel()
        if mu.size != 3 or abs(np.linalg.norm(mu) - 1.0) > UNIT_TOL:
            raise InvalidArgument("mean_direction must be a unit 3-vector")
        if not self.kappa > 0:
            raise InvalidArgument("kappa must be positive")
        object.__setattr__(self, "mean_direction", mu)


@dataclass(frozen=True)
class DriftSpec:
    step_radians: float
    axis: np.ndarray

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float).ravel()
        if ax.size != 3 or abs(np.linalg.norm(ax) - 1.0) > UNIT_TOL:
            raise InvalidArgument("drift axis must be a unit 3-vector")
        if not 0.0 <= self.step_radians < np.pi:
            raise InvalidArgument("step_radians must lie in [0, pi)")
        object.__setattr__(self, "axis", ax)


def _frame(mu: np.ndarray) -> np.ndarray:
    """Rows (e1, e2, mu) of a right-handed orthonormal frame."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ mu) * mu
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(mu, e1)
    return np.vstack([e1, e2, mu])


def vmf_cos_angle(u, kappa: float) -> np.ndarray:
    """Inverse CDF of ``t = <x, mu>`` under vMF(kappa) on S^2.

    The density of ``t`` on [-1, 1] is proportional to ``exp(kappa t)``.
    """
    u = np.asarray(u, dtype=float)
    return 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa


def vmf_mean_resultant_length(kappa: float) -> float:
    """E<x, mu> for vMF on S^2: coth(kappa) - 1/kappa."""
    return 1.0 / np.tanh(kappa) - 1.0 / kappa


class VmfOracle(SampleOracle):
    """von Mises-Fisher samples on S^2 by exact inversion in the cosine coordinate."""

    def __init__(self, params: VmfParams, seed=None):
        super().__init__(GroundSpace.sphere(), seed)
        self.params = params
        self._basis = _frame(params.mean_direction)

    @property
    def mean_direction(self) -> np.ndarray:
        return self.params.mean_direction

    def _local(self, k):
        u = self.rng.random((k, 2))
        t = vmf_cos_angle(1.0 - u[:, 0], self.params.kappa)
        r = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
        phi = 2.0 * np.pi * u[:, 1]
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), t])

    def _draw(self, k):
        x = self._local(k) @ self._basis
        return x / np.linalg.norm(x, axis=1, keepdims=True)


def vmf_oracle(params: VmfParams, seed=None) -> VmfOracle:
    return VmfOracle(params, seed)


class DriftingOracle(SampleOracle):
    """Wraps a vMF oracle whose centre rotates by a fixed angle after each draw."""

    stationary = False

    def __init__(self, base: VmfOracle, drift: DriftSpec):
        if not isinstance(base, VmfOracle):
            raise InvalidArgument("drifting oracle needs a vMF base oracle")
        super().__init__(base.space, base.rng)
        self.base = base
        self.drift = drift

    @property
    def mean_direction(self) -> np.ndarray:
        return self.center_after(self.n_drawn)

    def center_after(self, draws: int) -> np.ndarray:
        ang = self.drift.step_radians * draws
        return rotate_about_axis(self.base.mean_direction, self.drift.axis, ang)[0]

    def _draw(self, k):
        x = self.base._draw(k)
        angles = self.drift.step_radians * (self.n_drawn + np.arange(k, dtype=float))
        return rotate_about_axis(x, self.drift.axis, angles)


def drifting_oracle(base: VmfOracle, drift: DriftSpec) -> DriftingOracle:
    return DriftingOracle(base, drift)


class EmpiricalOracle(SampleOracle):
    """Categorical draws from the atoms of a discrete measure."""

    def __init__(self, atoms, weights, space: Optional[GroundSpace] = None, seed=None):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        weights = np.asarray(weights, dtype=float).ravel()
        if np.any(weights < 0):
            raise InvalidArgument("weights must be nonnegative")
        if weights.size != atoms.shape[0]:
            raise InvalidArgument("one weight per atom required")
        total = weights.sum()
        if abs(total - 1.0) > 1e-9:
            raise InvalidArgument("weights must sum to 1")
        super().__init__(space or GroundSpace.euclidean(atoms.shape[1]), seed)
        self.atoms = atoms
        self.weights = weights
        cdf = np.cumsum(weights)
        self._cdf = cdf / cdf[-1]

    def _draw(self, k):
        idx = np.searchsorted(self._cdf, self.rng.random(k), side="right")
        return self.atoms[np.minimum(idx, len(self._cdf) - 1)]


def empirical_oracle(measure, seed=None) -> EmpiricalOracle:
    """Oracle over a :class:`swb.discrete_ot.DiscreteMeasure`."""
    return EmpiricalOracle(measure.atoms, measure.weights, measure.space, seed)


class ScriptedOracle(SampleOracle):
    """Replays a fixed list of points cyclically (deterministic tests)."""

    def __init__(self, points, space: Optional[GroundSpace] = None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        super().__init__(space or GroundSpace.euclidean(pts.shape[1]), None)
        self.points = pts

    def _draw(self, k):
        idx = (self.n_drawn + np.arange(k)) % self.points.shape[0]
        return self.points[idx]


# -- logistic regression posterior ------------------------------------------


def _design(X, intercept: bool):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
    return X


def logistic_log_posterior(theta, X, y, prior_sigma: float = 10.0, intercept: bool = False) -> float:
    """Bernoulli-logit log likelihood plus an isotropic Gaussian log prior.

    Constant terms of the prior are dropped. With ``intercept`` the first
    entry of ``theta`` multiplies a column of ones.
    """
    theta = np.asarray(theta, dtype=float)
    prior = -0.5 * float(theta @ theta) / prior_sigma**2
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        return prior
    z = _design(X, intercept) @ theta
    # y log s(z) + (1-y) log(1-s(z)) = -(y logaddexp(0,-z) + (1-y) logaddexp(0,z))
    ll = -(y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)).sum()
    return float(ll + prior)


def logistic_log_posterior_grad(theta, X, y, prior_sigma: float = 10.0, intercept: bool = False) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = -theta / prior_sigma**2
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        return g
    A = _design(X, intercept)
    z = A @ theta
    p = np.exp(-np.logaddexp(0.0, -z))
    return g + A.T @ (y - p)


@dataclass(frozen=True)
class MhConfig:
    proposal_sigma: float = 0.05
    burn_in: int = 100_000
    thinning: int = 5

    def __post_init__(self):
        if not self.proposal_sigma > 0:
            raise InvalidArgument("proposal_sigma must be positive")
        if self.burn_in < 0:
            raise InvalidArgument("burn_in must be nonnegative")
        if self.thinning < 1:
            raise InvalidArgument("thinning must be >= 1")


def mh_accept_probability(logp_new: float, logp_old: float) -> float:
    """min(1, p_new / p_old) for a symmetric proposal."""
    diff = logp_new - logp_old
    return 1.0 if diff >= 0 else float(np.exp(diff))


class MhOracle(SampleOracle):
    """Random-walk Metropolis-Hastings chain with Gaussian proposals.

    The first draw runs ``burn_in`` iterations; afterwards every
    ``thinning``-th state is emitted.
    """

    def __init__(self, log_density: Callable[[np.ndarray], float], init, cfg: MhConfig, seed=None):
        init = np.asarray(init, dtype=float).ravel()
        super().__init__(GroundSpace.euclidean(init.size), seed)
        self.log_density = log_density
        self.cfg = cfg
        self.state = init.copy()
        self.logp = float(log_density(self.state))
        self.iterations = 0
        self.accepted = 0
        self.burned_in = cfg.burn_in == 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.iterations if self.iterations else 0.0

    def _advance(self, record: Optional[list] = None):
        prop = self.state + self.cfg.proposal_sigma * self.rng.standard_normal(self.state.size)
        lp = float(self.log_density(prop))
        self.iterations += 1
        # log(u) < diff accepts every uphill move since u < 1
        if np.log(self.rng.random()) < lp - self.logp:
            self.state = prop
            self.logp = lp
            self.accepted += 1
        if record is not None:
            record.append(self.state.copy())

    def burn_in(self, record: bool = False) -> Optional[np.ndarray]:
        """Run the burn-in phase now; optionally return its states."""
        if self.burned_in:
            return np.empty((0, self.state.size)) if record else None
        rec = [] if record else None
        for _ in range(self.cfg.burn_in):
            self._advance(rec)
        self.burned_in = True
        log.debug("burn-in done, acceptance %.3f", self.acceptance_rate)
        return np.array(rec).reshape(-1, self.state.size) if record else None

    def _draw(self, k):
        if not self.burned_in:
            self.burn_in()
        out = np.empty((k, self.state.size))
        for r in range(k):
            for _ in range(self.cfg.thinning):
                self._advance()
            out[r] = self.state
        return out


def mh_oracle(log_density, init, cfg: MhConfig, seed=None) -> MhOracle:
    return MhOracle(log_density, init, cfg, seed)


# -- labeled data --------------------------------------------------------------


def load_labeled_csv(path):
    """Read ``d`` feature columns followed by a {0,1} label column.

    A non-numeric first row is treated as a header.
    """
    import csv

    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    if not rows:
        raise InvalidArgument(f"{path}: empty dataset")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    X, y = data[:, :-1], data[:, -1]
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgument(f"{path}: labels must be 0 or 1")
    return X, y.astype(np.int64)


def split_contiguous(X, y, J: int, j: Optional[int] = None):
    """Subset ``j`` of ``J``: one contiguous block of positives plus one of negatives.

    Rows keep their file order within each class, so locality in the file
    carries over into non-identically distributed subsets.
    """
    if J < 1:
        raise InvalidArgument("J must be positive")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    pos_blocks = np.array_split(pos, J)
    neg_blocks = np.array_split(neg, J)
    subsets = [np.concatenate([pb, nb]) for pb, nb in zip(pos_blocks, neg_blocks)]
    if j is None:
        return [(X[idx], y[idx]) for idx in subsets]
    if not 0 <= j < J:
        raise InvalidArgument("subset index out of range")
    idx = subsets[j]
    return X[idx], y[idx]
