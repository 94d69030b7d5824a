"""Latent-space distributions parameterized by weight vectors.

A weight vector becomes the mean of either a multivariate Gaussian or a
multivariate Student t. The t ``scale`` is the shape matrix of the density;
its covariance is ``dof / (dof - 2) * scale``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, InvalidParameter
from .numkernel import RngStream, cholesky, sym_eigen

GAUSSIAN_DIAG = "gaussian-diag"
GAUSSIAN_NONDIAG = "gaussian-nondiag"
STUDENT = "student"
FAMILIES = (GAUSSIAN_DIAG, GAUSSIAN_NONDIAG, STUDENT)

LOG_2PI = math.log(2.0 * math.pi)


def _as_mean(mean) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    if mean.size < 1:
        raise InvalidParameter("mean must have at least one entry")
    return mean


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray
    family: str = GAUSSIAN_NONDIAG

    def __post_init__(self):
        mean = _as_mean(self.mean)
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"mean has dim {mean.size} but cov is {cov.shape}")
        if self.family not in (GAUSSIAN_DIAG, GAUSSIAN_NONDIAG):
            raise InvalidParameter(f"unknown Gaussian family {self.family!r}")
        if self.family == GAUSSIAN_DIAG and np.any(cov[~np.eye(mean.size, dtype=bool)] != 0.0):
            raise InvalidParameter("gaussian-diag spec has nonzero off-diagonal covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        self.chol  # fail early on non-PD input

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        return cholesky(self.cov)

    @cached_property
    def log_det(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))


@dataclass(frozen=True, eq=False)
class StudentSpec:
    mean: np.ndarray
    scale: np.ndarray
    dof: float = 4.0
    family: str = STUDENT

    def __post_init__(self):
        mean = _as_mean(self.mean)
        scale = np.asarray(self.scale, dtype=np.float64)
        if scale.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"mean has dim {mean.size} but scale is {scale.shape}")
        if not self.dof > 2:
            raise InvalidParameter(f"dof must exceed 2, got {self.dof}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "dof", float(self.dof))
        self.chol

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def cov(self) -> np.ndarray:
        return self.dof / (self.dof - 2.0) * self.scale

    @cached_property
    def chol(self) -> np.ndarray:
        return cholesky(self.scale)

    @cached_property
    def log_det(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))


LatentSpec = Union[GaussianSpec, StudentSpec]


def diag_cov(d: int, sigma: float = 1.0) -> np.ndarray:
    if d < 1:
        raise InvalidParameter("d must be at least 1")
    if not sigma > 0:
        raise InvalidParameter(f"sigma must be positive, got {sigma}")
    return np.eye(d) * (sigma * sigma)


def random_nondiag_cov(
    d: int,
    beta: float = 1.0,
    eigen_low: float = 0.5,
    eigen_high: float = 2.0,
    rng: RngStream | None = None,
) -> np.ndarray:
    """``beta * V diag(lam) V^T`` with ``V`` the eigenvectors of ``R + R^T``.

    ``R`` has i.i.d. uniform(-1, 1) entries and ``lam`` is drawn uniformly
    from ``[eigen_low, eigen_high]``.
    """
    if d < 1:
        raise InvalidParameter("d must be at least 1")
    if not beta > 0:
        raise InvalidParameter(f"beta must be positive, got {beta}")
    if not 0 < eigen_low <= eigen_high:
        raise InvalidParameter(f"need 0 < eigen_low <= eigen_high, got [{eigen_low}, {eigen_high}]")
    rng = rng if rng is not None else RngStream(0)
    r = rng.uniform(-1.0, 1.0, size=(d, d))
    _, vecs = sym_eigen(r + r.T)
    lam = rng.uniform(eigen_low, eigen_high, size=d)
    cov = beta * (vecs * lam) @ vecs.T
    return 0.5 * (cov + cov.T)


def _mahalanobis_sq(spec: LatentSpec, x: np.ndarray) -> np.ndarray:
    delta = np.atleast_2d(x) - spec.mean
    white = solve_triangular(spec.chol, delta.T, lower=True)
    return np.sum(white * white, axis=0)


def log_density(spec: LatentSpec, x) -> np.ndarray | float:
    """Log-density at ``x`` (a single point or an ``n x d`` batch)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.shape[-1] != spec.dim:
        raise DimensionMismatch(f"point has dim {x.shape[-1]}, spec has dim {spec.dim}")
    maha = _mahalanobis_sq(spec, x)
    d = spec.dim
    if isinstance(spec, GaussianSpec):
        out = -0.5 * (d * LOG_2PI + spec.log_det + maha)
    else:
        nu = spec.dof
        out = (
            math.lgamma(0.5 * (nu + d))
            - math.lgamma(0.5 * nu)
            - 0.5 * d * math.log(nu * math.pi)
            - 0.5 * spec.log_det
            - 0.5 * (nu + d) * np.log1p(maha / nu)
        )
    return float(out[0]) if single else out


def whitened_draws(spec: LatentSpec, n: int, rng: RngStream) -> np.ndarray:
    """Zero-mean draws in the whitened frame: ``x = mean + u @ chol.T``.

    Gaussian: ``u = z``. Student: ``u = z * sqrt(dof / g)``, ``g ~ chi2(dof)``.
    """
    if n < 1:
        raise InvalidParameter("n must be at least 1")
    z = rng.normal((n, spec.dim))
    if isinstance(spec, StudentSpec):
        g = rng.chisquare(spec.dof, size=n)
        z *= np.sqrt(spec.dof / g)[:, None]
    return z


def sample(spec: LatentSpec, n: int, rng: RngStream) -> np.ndarray:
    return spec.mean + whitened_draws(spec, n, rng) @ spec.chol.T


def make_spec(family: str, mean, cov, dof: float = 4.0) -> LatentSpec:
    if family == STUDENT:
        return StudentSpec(mean, cov, dof)
    return GaussianSpec(mean, cov, family)
