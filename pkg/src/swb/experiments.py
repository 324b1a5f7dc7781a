"""Desk-scale experiment drivers shared by the CLI and the acceptance tests.

Each driver takes an :class:`ExperimentConfig` and returns a
:class:`RunReport`: a table of diagnostics by iteration plus final weights,
the grid and run metadata.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .discrete_ot import DiscreteMeasure, save_measure, w2_between_samples
from .errors import InvalidArgument
from .geometry import GroundSpace, pairwise_costs, rotate_about_axis
from .oracles import (
    DriftSpec,
    MhConfig,
    VmfParams,
    drifting_oracle,
    gaussian_oracle,
    load_labeled_csv,
    logistic_log_posterior,
    mh_oracle,
    split_contiguous,
    vmf_oracle,
)
from .parallel import run_parallel
from .solver import SerialSolver, objective_estimate
from .support import (
    BoundingBox,
    SupportGrid,
    cover_radius,
    fit_bounding_box,
    mesh_grid,
    save_grid,
    sphere_lattice,
)

KINDS = ("vmf-drift", "wasp", "custom")


def _floats(text) -> list:
    if isinstance(text, str):
        return [float(t) for t in text.replace(",", " ").split()]
    return [float(t) for t in text]


def _ints(text) -> list:
    return [int(t) for t in _floats(text)]


@dataclass
class ExperimentConfig:
    """Every knob of the desk experiments; ``0`` disables optional counts."""

    kind: str = "custom"
    J: int = 2
    n: int = 100
    gamma: float = 1.0
    iterations: int = 100_000
    window: int = 0
    seed: int = 0
    transport: str = "inproc"
    schedule: str = "round_robin"
    snapshot_every: int = 5000
    # vmf-drift
    kappa: float = 30.0
    drift: float = 3e-5
    center_spread: float = 0.5
    drift_axis: str = "1 0 0"
    # custom / refine: isotropic Gaussians with these means (rows split by ';')
    means: str = "0 0; 3 4"
    sigma: float = 1.0
    refine_ns: str = "8 27 64 125"
    eval_samples: int = 4000
    # wasp
    data: str = ""
    n_points: int = 10_000
    dim: int = 3
    proposal_sigma: float = 0.02
    burn_in: int = 20_000
    thinning: int = 5
    prior_sigma: float = 10.0
    intercept: bool = False
    likelihood_power: float = 0.0  # 0 -> J (stochastic approximation)
    order_noise: float = 0.5
    w2_samples: int = 500
    full_thinning: int = 20
    gammas: str = ""  # step-size sweep, e.g. "0.01 0.1 1 10 100"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidArgument(f"kind must be one of {KINDS}")
        for name in ("J", "n", "iterations", "eval_samples", "n_points", "dim", "thinning",
                     "w2_samples", "full_thinning"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be positive")
        for name in ("window", "snapshot_every", "burn_in"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be nonnegative")
        for name in ("gamma", "kappa", "sigma", "proposal_sigma", "prior_sigma"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.drift < 0 or self.drift >= math.pi:
            raise InvalidArgument("drift must lie in [0, pi)")
        if self.transport not in ("inproc", "tcp"):
            raise InvalidArgument("transport must be inproc or tcp")
        if self.schedule not in ("round_robin", "arrival"):
            raise InvalidArgument("schedule must be round_robin or arrival")

    @classmethod
    def from_ini(cls, path, section: str = "experiment") -> "ExperimentConfig":
        """Kind defaults overlaid with the INI file's values."""
        values = read_ini(path, section)
        return cls.for_kind(values.get("kind", "custom")).updated(**values)

    def updated(self, **changes) -> "ExperimentConfig":
        """Copy with ``changes`` applied; string values are coerced to field types."""
        types = {f.name: f.type for f in dataclasses.fields(self)}
        clean = {}
        for key, val in changes.items():
            if val is None:
                continue
            if key not in types:
                raise InvalidArgument(f"unknown config key {key!r}")
            t = types[key]
            if isinstance(val, str):
                if t in ("int", int):
                    val = int(float(val))
                elif t in ("float", float):
                    val = float(val)
                elif t in ("bool", bool):
                    val = val.strip().lower() in ("1", "true", "yes", "on")
            clean[key] = val
        return dataclasses.replace(self, **clean)

    @classmethod
    def for_kind(cls, kind: str) -> "ExperimentConfig":
        """Defaults tuned for each desk experiment."""
        if kind not in KIND_DEFAULTS:
            raise InvalidArgument(f"kind must be one of {KINDS}")
        return cls(kind=kind, **KIND_DEFAULTS[kind])

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def read_ini(path, section: str = "experiment") -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidArgument(f"cannot read config {path}")
    if section not in cp:
        raise InvalidArgument(f"{path}: missing [{section}] section")
    return dict(cp[section])


KIND_DEFAULTS = {
    "vmf-drift": dict(J=4, n=1000, gamma=1.0, iterations=200_000, window=10_000),
    "wasp": dict(J=8, n=1000, gamma=0.003, iterations=50_000),
    "custom": dict(),
}


@dataclass
class RunReport:
    columns: list
    rows: list = field(default_factory=list)
    weights: Optional[np.ndarray] = None
    grid: Optional[SupportGrid] = None
    meta: dict = field(default_factory=dict)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise InvalidArgument("row length does not match the columns")
        if self.rows and "iteration" in self.columns:
            k = self.columns.index("iteration")
            if row[k] < self.rows[-1][k]:
                raise InvalidArgument("report rows must be monotone in iteration")
        self.rows.append(tuple(row))

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "report.csv", self.columns, self.rows)
        if self.grid is not None:
            save_grid(self.grid, out / "grid.txt")
            if self.weights is not None:
                save_measure(DiscreteMeasure.on_grid(self.grid, self.weights), out / "weights.txt")
        (out / "meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return out


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def write_csv(path, columns: Sequence[str], rows) -> None:
    """Header row, then numbers with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for r in rows:
            wr.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        cols = next(rd)
        rows = [tuple(float(c) for c in r) for r in rd if r]
    return cols, rows


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    m = {"config": cfg.as_dict(), "config_hash": cfg.digest(), "seed": cfg.seed}
    m.update(extra)
    return m


# -- shared geometry helpers -----------------------------------------------------


def weighted_mean_direction(grid: SupportGrid, w) -> np.ndarray:
    """Normalized extrinsic mean of a measure on the sphere."""
    m = np.asarray(w, dtype=float) @ grid.atoms
    nrm = np.linalg.norm(m)
    if nrm == 0:
        raise InvalidArgument("mean direction undefined (zero extrinsic mean)")
    return m / nrm


def geodesic_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ip = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(ip, -1.0, 1.0)))


def frechet_mean(points, lattice: Optional[SupportGrid] = None, iters: int = 100) -> np.ndarray:
    """Minimizer of the mean squared geodesic distance to ``points`` on S^2.

    Coarse argmin over a lattice, then Karcher fixed-point refinement.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    lat = lattice or sphere_lattice(2000)
    f = pairwise_costs(lat.atoms, P, GroundSpace.sphere()).mean(axis=1)
    x = lat.atoms[int(np.argmin(f))].copy()
    for _ in range(iters):
        ip = np.clip(P @ x, -1.0, 1.0)
        th = np.arccos(ip)
        tang = P - ip[:, None] * x
        nt = np.linalg.norm(tang, axis=1)
        scale = np.where(nt > 1e-15, th / np.where(nt > 1e-15, nt, 1.0), 0.0)
        g = (tang * scale[:, None]).mean(axis=0)
        ng = np.linalg.norm(g)
        if ng < 1e-14:
            break
        x = np.cos(ng) * x + np.sin(ng) * g / ng
        x /= np.linalg.norm(x)
    return x


def vmf_centers(J: int, spread: float, rng) -> np.ndarray:
    """``J`` centres at polar angle ``spread`` around e_z, evenly spaced in azimuth."""
    pole = np.array([0.0, 0.0, 1.0])
    tilt = rotate_about_axis(pole, [1.0, 0.0, 0.0], spread)[0]
    az = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(J) / J
    return rotate_about_axis(np.repeat(tilt[None, :], J, axis=0), pole, az)


# -- vmf drift ---------------------------------------------------------------------


def cmd_vmf_drift(cfg: ExperimentConfig, centers=None) -> RunReport:
    """Drifting vMF barycenter tracking with the sliding-window estimate.

    The reference is the Frechet mean of the initial centres rotated by the
    drift accumulated per measure (``t / J`` draws each under round-robin).
    """
    rng = np.random.default_rng(cfg.seed)
    axis = np.array(_floats(cfg.drift_axis))
    if axis.size != 3:
        raise InvalidArgument("drift_axis needs three components")
    C = vmf_centers(cfg.J, cfg.center_spread, rng) if centers is None else np.atleast_2d(centers)
    grid = sphere_lattice(cfg.n)
    seeds = rng.integers(2**63, size=cfg.J)
    oracles = [
        drifting_oracle(vmf_oracle(VmfParams(c, cfg.kappa), seed=int(s)), DriftSpec(cfg.drift, axis))
        for c, s in zip(C, seeds)
    ]
    ref0 = frechet_mean(C)
    window = cfg.window or None
    report = RunReport(["iteration", "wall_clock", "tracking_error", "mx", "my", "mz"])
    t0 = time.perf_counter()

    def snapshot(master):
        if window is not None and master.window.size < master.window.capacity:
            return
        w = master.weights(windowed=window is not None)
        md = weighted_mean_direction(grid, w)
        ref = rotate_about_axis(ref0, axis, cfg.drift * master.t / cfg.J)[0]
        report.add(master.t, time.perf_counter() - t0, geodesic_distance(md, ref), *md)

    res = run_parallel(oracles, grid, cfg.gamma, iterations=cfg.iterations, transport=cfg.transport,
                       schedule=cfg.schedule, window=window, snapshot=snapshot,
                       snapshot_every=cfg.snapshot_every)
    report.weights = res.window_weights if window is not None else res.weights
    report.grid = grid
    report.meta = _meta(cfg, centers=C, reference_start=ref0, elapsed=res.elapsed,
                        per_worker=res.per_worker)
    return report


# -- wasp --------------------------------------------------------------------------


def synthetic_logistic(n_points: int, dim: int, rng, theta=None, order_noise: float = 0.0):
    """Logistic data sorted along the feature with the smallest true coefficient.

    Contiguous blocks then differ in their covariate distribution while the
    label model stays the same in every block, so each subset posterior is
    centred on the truth but carries different information. ``order_noise``
    blurs the sort key. Returns ``(X, y, theta_true)``.
    """
    theta = np.linspace(1.0, -1.0, dim) if theta is None else np.asarray(theta, dtype=float)
    X = rng.standard_normal((n_points, dim))
    p = 1.0 / (1.0 + np.exp(-X @ theta))
    y = (rng.random(n_points) < p).astype(np.int64)
    key = X[:, int(np.argmin(np.abs(theta)))] + order_noise * rng.standard_normal(n_points)
    order = np.argsort(key, kind="stable")
    return X[order], y[order], theta


def _log_density(X, y, power, prior_sigma, intercept):
    def f(theta):
        ll = logistic_log_posterior(theta, X, y, prior_sigma=math.inf, intercept=intercept)
        return power * ll - 0.5 * float(theta @ theta) / prior_sigma**2
    return f


def cmd_wasp(cfg: ExperimentConfig) -> RunReport:
    """Subset-posterior barycenter versus a full-data reference chain.

    Reports W2 of the barycenter and of every subset posterior to the full
    posterior, each estimated from ``w2_samples`` points per side.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.data:
        X, y = load_labeled_csv(cfg.data)
    else:
        X, y, _ = synthetic_logistic(cfg.n_points, cfg.dim, rng, order_noise=cfg.order_noise)
    d = X.shape[1] + (1 if cfg.intercept else 0)
    J = cfg.J
    power = cfg.likelihood_power or float(J)
    mh = MhConfig(cfg.proposal_sigma, cfg.burn_in, cfg.thinning)
    init = np.zeros(d)
    seeds = rng.integers(2**63, size=J + 3)
    oracles = []
    burn = []
    for j, (Xj, yj) in enumerate(split_contiguous(X, y, J)):
        o = mh_oracle(_log_density(Xj, yj, power, cfg.prior_sigma, cfg.intercept), init, mh, int(seeds[j]))
        states = o.burn_in(record=True)
        burn.append(states[states.shape[0] // 2:])  # drop the transient from init
        oracles.append(o)
    box = fit_bounding_box(np.vstack(burn))
    grid = mesh_grid(box, cfg.n)
    report = RunReport(["iteration", "wall_clock", "gamma", "w2_barycenter", "w2_subset_min",
                        "w2_subset_max"])

    full = mh_oracle(_log_density(X, y, 1.0, cfg.prior_sigma, cfg.intercept), init,
                     MhConfig(cfg.proposal_sigma, cfg.burn_in, cfg.full_thinning), int(seeds[J]))
    full_samples = full.draw(cfg.w2_samples)
    sub_w2 = [w2_between_samples(o.draw(cfg.w2_samples), full_samples) for o in oracles]
    draw_rng = np.random.default_rng(int(seeds[J + 1]))

    gammas = _floats(cfg.gammas) if cfg.gammas else [cfg.gamma]
    t0 = time.perf_counter()
    best = None
    for g in gammas:
        res = run_parallel(oracles, grid, g, iterations=cfg.iterations, transport=cfg.transport,
                           schedule=cfg.schedule)
        pick = draw_rng.choice(grid.n, size=cfg.w2_samples, p=res.weights)
        w2b = w2_between_samples(grid.atoms[pick], full_samples)
        report.add(cfg.iterations, time.perf_counter() - t0, g, w2b, min(sub_w2), max(sub_w2))
        if best is None or w2b < best[0]:
            best = (w2b, res.weights)
    report.weights = best[1]
    report.grid = grid
    report.meta = _meta(cfg, box_lo=box.lo, box_hi=box.hi, grid_n=grid.n, w2_subsets=sub_w2,
                        acceptance=[o.acceptance_rate for o in oracles],
                        full_acceptance=full.acceptance_rate, likelihood_power=power)
    return report


# -- custom run / refinement -------------------------------------------------------


def _gaussians(cfg: ExperimentConfig, seeds):
    means = [_floats(row) for row in cfg.means.split(";") if row.strip()]
    dims = {len(m) for m in means}
    if len(dims) != 1:
        raise InvalidArgument("all means need the same dimension")
    return means, [gaussian_oracle(m, cfg.sigma, seed=int(s)) for m, s in zip(means, seeds)]


def gaussian_box(means, sigma: float, width: float = 3.0) -> BoundingBox:
    M = np.asarray(means, dtype=float)
    return BoundingBox(M.min(axis=0) - width * sigma, M.max(axis=0) + width * sigma)


def cmd_run(cfg: ExperimentConfig) -> RunReport:
    """Generic barycenter of isotropic Gaussians on a box mesh."""
    rng = np.random.default_rng(cfg.seed)
    means, oracles = _gaussians(cfg, rng.integers(2**63, size=cfg.J if cfg.means else 0))
    if len(oracles) != cfg.J:
        raise InvalidArgument(f"config lists {len(oracles)} means but J={cfg.J}")
    grid = mesh_grid(gaussian_box(means, cfg.sigma), cfg.n)
    report = RunReport(["iteration", "wall_clock", "min_s"])
    t0 = time.perf_counter()

    def snapshot(master):
        report.add(master.t, time.perf_counter() - t0, master.tracker.min_key())

    res = run_parallel(oracles, grid, cfg.gamma, iterations=cfg.iterations, transport=cfg.transport,
                       schedule=cfg.schedule, window=cfg.window or None, snapshot=snapshot,
                       snapshot_every=cfg.snapshot_every)
    report.weights = res.weights
    report.grid = grid
    report.meta = _meta(cfg, elapsed=res.elapsed, per_worker=res.per_worker)
    return report


def cmd_refinement_sweep(cfg: ExperimentConfig, ns: Optional[Sequence[int]] = None,
                         probes: int = 20_000) -> RunReport:
    """Solve the same Gaussian problem on increasingly fine meshes.

    Each row holds ``n``, the empirical cover radius of the mesh over the
    box and the estimated objective at the solver's averaged weights.
    """
    ns = list(ns) if ns is not None else _ints(cfg.refine_ns)
    rng = np.random.default_rng(cfg.seed)
    means, _ = _gaussians(cfg, [0] * cfg.J)
    box = gaussian_box(means, cfg.sigma)
    P = box.lo + rng.random((probes, box.lo.size)) * box.lengths
    report = RunReport(["n", "grid_n", "cover_radius", "objective", "wall_clock"])
    t0 = time.perf_counter()
    last = None
    for n in ns:
        seeds = np.random.default_rng(cfg.seed).integers(2**63, size=2 * cfg.J)
        _, oracles = _gaussians(cfg, seeds[: cfg.J])
        grid = mesh_grid(box, n)
        solver = SerialSolver(grid, cfg.J, cfg.gamma)
        solver.run(oracles, cfg.iterations, rng=int(seeds[0]))
        w = solver.weights()
        _, eval_oracles = _gaussians(cfg, seeds[cfg.J:])
        f = objective_estimate(w, eval_oracles, grid, cfg.eval_samples)
        report.add(n, grid.n, cover_radius(grid, P), f, time.perf_counter() - t0)
        last = (w, grid)
    report.weights, report.grid = last
    report.meta = _meta(cfg, ns=ns, probes=probes)
    return report


def _read_points(path) -> np.ndarray:
    try:
        return np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise InvalidArgument(f"{path}: not a numeric point file ({exc})") from exc


def cmd_eval_w2(path_a, path_b, subsample: Optional[int] = None, seed: int = 0) -> float:
    """W2 between two whitespace-separated point files (one point per row)."""
    a, b = _read_points(path_a), _read_points(path_b)
    if subsample:
        rng = np.random.default_rng(seed)
        if a.shape[0] > subsample:
            a = a[rng.choice(a.shape[0], subsample, replace=False)]
        if b.shape[0] > subsample:
            b = b[rng.choice(b.shape[0], subsample, replace=False)]
    return w2_between_samples(a, b)
