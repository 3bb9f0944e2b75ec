"""Factor-graph composition of diffusion scores (Python bindings)."""

from ._core import (
    DomainError,
    Error,
    FactorGraph,
    GaussianCollage,
    InvalidArgument,
    LinearOperator,
    NoiseSchedule,
    NumericError,
    build_chain,
    build_cubemap,
    build_cycle,
    build_grid,
    fd_plus,
    fit_gaussian,
    frechet_gaussian,
    karras_grid,
    kendall_tau,
    ou_covariance,
    ring_covariance,
    sample_gaussian,
    seam_statistic,
    slerp,
)

__all__ = [
    "DomainError",
    "Error",
    "FactorGraph",
    "GaussianCollage",
    "InvalidArgument",
    "LinearOperator",
    "NoiseSchedule",
    "NumericError",
    "build_chain",
    "build_cubemap",
    "build_cycle",
    "build_grid",
    "fd_plus",
    "fit_gaussian",
    "frechet_gaussian",
    "karras_grid",
    "kendall_tau",
    "ou_covariance",
    "ring_covariance",
    "sample_gaussian",
    "seam_statistic",
    "slerp",
]
