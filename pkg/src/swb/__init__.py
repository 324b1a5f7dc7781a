"""Stochastic Wasserstein barycenters on a fixed support.

The solver runs projected stochastic subgradient steps on the semi-discrete
dual, either serially or as a master with one worker per input measure.
"""
from ._backend import NAME as BACKEND
from .discrete_ot import (
    DiscreteMeasure,
    TransportPlan,
    barycenter_cost,
    brute_force_barycenter,
    exact_w2sq,
    gaussian_w2sq,
    w2_between_samples,
)
from .errors import (
    ChannelClosed,
    DegenerateGeodesic,
    EmptyState,
    HandshakeError,
    InstanceTooLarge,
    InvalidArgument,
    ProtocolError,
    SwbError,
)
from .geometry import GroundSpace, geodesic_interpolate, sphere_geodesic_cost, squared_euclidean_cost
from .oracles import (
    DriftSpec,
    MhConfig,
    VmfParams,
    drifting_oracle,
    empirical_oracle,
    gaussian_oracle,
    logistic_log_posterior,
    mh_oracle,
    vmf_oracle,
)
from .parallel import decode_frame, encode_frame, run_parallel
from .solver import (
    GradientEvent,
    SerialSolver,
    SolverState,
    barycenter_estimate,
    c_transform_argmin,
    objective_estimate,
    sparse_project,
    step,
    theorem1_stepsize,
    tracker_update,
)
from .support import BoundingBox, SupportGrid, cover_radius, fit_bounding_box, mesh_grid, sphere_lattice

__all__ = [
    "BACKEND",
    "DiscreteMeasure",
    "TransportPlan",
    "barycenter_cost",
    "brute_force_barycenter",
    "exact_w2sq",
    "gaussian_w2sq",
    "w2_between_samples",
    "ChannelClosed",
    "DegenerateGeodesic",
    "EmptyState",
    "HandshakeError",
    "InstanceTooLarge",
    "InvalidArgument",
    "ProtocolError",
    "SwbError",
    "GroundSpace",
    "geodesic_interpolate",
    "sphere_geodesic_cost",
    "squared_euclidean_cost",
    "DriftSpec",
    "MhConfig",
    "VmfParams",
    "drifting_oracle",
    "empirical_oracle",
    "gaussian_oracle",
    "logistic_log_posterior",
    "mh_oracle",
    "vmf_oracle",
    "decode_frame",
    "encode_frame",
    "run_parallel",
    "GradientEvent",
    "SerialSolver",
    "SolverState",
    "barycenter_estimate",
    "c_transform_argmin",
    "objective_estimate",
    "sparse_project",
    "step",
    "theorem1_stepsize",
    "tracker_update",
    "BoundingBox",
    "SupportGrid",
    "cover_radius",
    "fit_bounding_box",
    "mesh_grid",
    "sphere_lattice",
]

__version__ = "0.1.0"
