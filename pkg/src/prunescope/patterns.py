"""Pattern metrics for a layer and its pruned version.

``ap2`` is the squared Euclidean distance between weight vectors. ``ap3`` is
the KL divergence between latent distributions whose means are the two
weight vectors and whose covariance (or t scale) is shared. Also here: the
performance difference, the closed-form bound functions, and the
per-iteration AP3 gap trajectory used while fine-tuning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .divergence import (
    DEFAULT_GROUPS,
    DEFAULT_MC_SAMPLES,
    DivergenceEstimate,
    SharedScaleKL,
    gaussian_kl,
    group_average,
)
from .errors import DimensionMismatch, InvalidParameter, SplitMismatch
from .latent import (
    FAMILIES,
    GAUSSIAN_DIAG,
    GAUSSIAN_NONDIAG,
    STUDENT,
    GaussianSpec,
    StudentSpec,
    diag_cov,
    random_nondiag_cov,
)
from .micronet import EvalResult
from .numkernel import RngStream, check_symmetric, sym_eigen
from .pruning import WeightVector


@dataclass(frozen=True, eq=False)
class LatentConfig:
    """How to project weight vectors into a latent space.

    ``cov`` is an explicit shared covariance (Gaussian) or scale (Student);
    when omitted it is ``sigma**2 * I`` for ``gaussian-diag`` and ``student``
    and a seeded ``random_nondiag_cov`` for ``gaussian-nondiag``. ``groups``
    applies to Student always and to Gaussians only with ``group_gaussian``;
    it is clamped to the vector length.
    """

    family: str = GAUSSIAN_DIAG
    sigma: float = 1.0
    cov: np.ndarray | None = None
    dof: float = 4.0
    groups: int = DEFAULT_GROUPS
    mc_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    beta: float = 1.0
    eigen_low: float = 0.5
    eigen_high: float = 2.0
    group_gaussian: bool = False
    name: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameter(f"unknown latent family {self.family!r}; expected one of {FAMILIES}")
        if not self.sigma > 0:
            raise InvalidParameter("sigma must be positive")
        if self.family == STUDENT and not self.dof > 2:
            raise InvalidParameter("Student dof must exceed 2")
        if self.groups < 1 or self.mc_samples < 1:
            raise InvalidParameter("groups and mc_samples must be positive")
        if self.cov is not None:
            cov = check_symmetric(self.cov)
            if self.family == GAUSSIAN_DIAG and np.any(cov[~np.eye(cov.shape[0], dtype=bool)] != 0.0):
                raise InvalidParameter("gaussian-diag config given a non-diagonal covariance")
            object.__setattr__(self, "cov", cov)

    @property
    def label(self) -> str:
        return self.name or self.family

    @classmethod
    def from_dict(cls, raw: dict) -> "LatentConfig":
        raw = dict(raw)
        if raw.get("cov") is not None:
            raw["cov"] = np.asarray(raw["cov"], dtype=np.float64)
        return cls(**raw)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if self.cov is not None:
            out["cov"] = self.cov.tolist()
        return out


class LatentProjection:
    """Shared latent geometry for one weight dimension under one config.

    Built once and reused for every pair compared under the config, so all
    pairs see the same covariance and (for Student) the same Monte Carlo
    draws.
    """

    def __init__(self, cfg: LatentConfig, d: int):
        if d < 1:
            raise InvalidParameter("weight dimension must be positive")
        self.cfg = cfg
        self.d = d
        grouped = cfg.family == STUDENT or cfg.group_gaussian
        self.groups = min(cfg.groups, d) if grouped else None
        dim = self.groups or d
        self.dim = dim
        rng = RngStream(cfg.seed)
        if cfg.cov is not None:
            if cfg.cov.shape != (dim, dim):
                raise DimensionMismatch(f"configured covariance is {cfg.cov.shape}, latent dim is {dim}")
            self.cov = cfg.cov
        elif cfg.family == GAUSSIAN_NONDIAG:
            self.cov = random_nondiag_cov(dim, cfg.beta, cfg.eigen_low, cfg.eigen_high, rng.child("cov"))
        else:
            self.cov = diag_cov(dim, cfg.sigma)
        self._mc = None
        if cfg.family == STUDENT:
            self._mc = SharedScaleKL(StudentSpec(np.zeros(dim), self.cov, cfg.dof), cfg.mc_samples, rng.child("mc"))

    @property
    def mc_rng(self) -> RngStream:
        return RngStream(self.cfg.seed).child("mc")

    def project(self, w) -> np.ndarray:
        values = w.values if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64).reshape(-1)
        if values.size != self.d:
            raise DimensionMismatch(f"weight vector has {values.size} entries, projection expects {self.d}")
        return group_average(values, self.groups) if self.groups else values

    def spec(self, w) -> GaussianSpec | StudentSpec:
        mean = self.project(w)
        if self.cfg.family == STUDENT:
            return StudentSpec(mean, self.cov, self.cfg.dof)
        return GaussianSpec(mean, self.cov, self.cfg.family)

    @property
    def distribution_cov(self) -> np.ndarray:
        if self.cfg.family == STUDENT:
            return self.cfg.dof / (self.cfg.dof - 2.0) * self.cov
        return self.cov

    def kl(self, w, w_tilde) -> DivergenceEstimate:
        if self._mc is not None:
            return self._mc.kl(self.project(w), self.project(w_tilde))
        return gaussian_kl(self.spec(w), self.spec(w_tilde))


def _values(w) -> np.ndarray:
    return w.values if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64).reshape(-1)


def ap2(w, w_tilde) -> float:
    a, b = _values(w), _values(w_tilde)
    if a.shape != b.shape:
        raise DimensionMismatch(f"weight vectors differ in length: {a.size} vs {b.size}")
    diff = a - b
    # correctly rounded, so equal multisets of differences give equal AP2
    return math.fsum(diff * diff)


def ap3(w, w_tilde, cfg: LatentConfig) -> DivergenceEstimate:
    a, b = _values(w), _values(w_tilde)
    if a.shape != b.shape:
        raise DimensionMismatch(f"weight vectors differ in length: {a.size} vs {b.size}")
    return LatentProjection(cfg, a.size).kl(a, b)


def pd_metric(eval_orig: EvalResult, eval_pruned: EvalResult, mode: str = "accuracy") -> float:
    """Absolute gap in loss or accuracy between two evaluations of one split."""
    if eval_orig.dataset_id != eval_pruned.dataset_id or eval_orig.split != eval_pruned.split:
        raise SplitMismatch(
            f"evaluations cover different data: {eval_orig.dataset_id}/{eval_orig.split} "
            f"vs {eval_pruned.dataset_id}/{eval_pruned.split}"
        )
    if mode == "accuracy":
        return abs(eval_orig.accuracy - eval_pruned.accuracy)
    if mode == "loss":
        return abs(eval_orig.loss - eval_pruned.loss)
    raise InvalidParameter(f"unknown PD mode {mode!r}")


@dataclass(frozen=True)
class BoundInputs:
    """Constants feeding the performance-difference bounds.

    ``expectation_Y`` stands for the label expectation multiplying each
    bound; no label model is assumed.
    """

    epsilon: float
    lambda_max: float = 1.0
    lambda_min: float = 1.0
    trace_P: float = 0.0
    trace_Q: float = 0.0
    expectation_Y: float = 1.0
    c1: float = 0.0
    k_const: float = 0.0
    c_sigma: float = 1.0

    def __post_init__(self):
        if not (self.lambda_max > 0 and self.lambda_min > 0):
            raise InvalidParameter("eigenvalue bounds must be positive")
        if self.lambda_min > self.lambda_max:
            raise InvalidParameter("lambda_min exceeds lambda_max")
        if self.trace_P < 0 or self.trace_Q < 0:
            raise InvalidParameter("traces must be non-negative")


def inverse_cov_extremes(cov) -> tuple[float, float]:
    """(lambda_min, lambda_max) of the inverse of a PD covariance."""
    values, _ = sym_eigen(cov)
    if values[0] <= 0:
        raise InvalidParameter("covariance is not positive definite")
    return 1.0 / values[-1], 1.0 / values[0]


def pd_bound_general(b: BoundInputs) -> float:
    """``E_Y * lam_max * sqrt(eps/2) * C / (2 (1 - sqrt(eps/2)))`` with ``C = tr P + tr Q``."""
    if not 0 < b.epsilon < 2:
        raise InvalidParameter(f"epsilon must lie in (0, 2), got {b.epsilon}")
    root = math.sqrt(b.epsilon / 2.0)
    c = b.trace_P + b.trace_Q
    return b.expectation_Y * b.lambda_max * root * c / (2.0 * (1.0 - root))


def pd_bound_gaussian(b: BoundInputs) -> float:
    """Gaussian-projection bound ``E_Y * (lam_max / 2) * sqrt(2 eps / lam_min)``."""
    if b.epsilon < 0:
        raise InvalidParameter(f"epsilon must be non-negative, got {b.epsilon}")
    return b.expectation_Y * 0.5 * b.lambda_max * math.sqrt(2.0 * b.epsilon / b.lambda_min)


def epsilon_propagate_general(eps_l: float, c_l: float, c_l1: float, c_sig: float, vol_z: float) -> float:
    """Next-layer KL bound ``c_l1 * (sqrt(2 eps_l) / (c_l * vol_z) + c_sig)``."""
    if eps_l < 0:
        raise InvalidParameter("eps_l must be non-negative")
    if not (c_l > 0 and c_l1 > 0 and vol_z > 0) or c_sig < 0:
        raise InvalidParameter("c_l, c_l1, vol_z must be positive and c_sig non-negative")
    return c_l1 * (math.sqrt(2.0 * eps_l) / (c_l * vol_z) + c_sig)


def epsilon_propagate_gaussian(eps_l: float, b: BoundInputs) -> float:
    """Gaussian next-layer bound ``(c1 + lam_max c_sigma^2 (2 eps_l - K) / lam_min) / 2``."""
    if 2.0 * eps_l < b.k_const:
        raise InvalidParameter(f"2 * eps_l = {2.0 * eps_l} is below K = {b.k_const}")
    return 0.5 * (b.c1 + b.lambda_max * b.c_sigma ** 2 * (2.0 * eps_l - b.k_const) / b.lambda_min)


@dataclass(frozen=True)
class TrajectoryPoint:
    """One fine-tuning iterate compared against the reference pair.

    ``gap_def`` uses KL(P_w* || P_wt); ``gap_thm`` uses KL(P_w~* || P_wt).
    Both are measured against ``kl_ref = KL(P_w* || P_w~*)``.
    """

    iteration: int
    kl_ref: DivergenceEstimate
    kl_opt_to_iter: DivergenceEstimate
    kl_sparse_to_iter: DivergenceEstimate

    @property
    def gap_def(self) -> float:
        return abs(self.kl_ref.value - self.kl_opt_to_iter.value)

    @property
    def gap_thm(self) -> float:
        return abs(self.kl_ref.value - self.kl_sparse_to_iter.value)


def ap3_trajectory(
    w_star,
    w_tilde_star,
    snapshots: Sequence,
    cfg: LatentConfig | LatentProjection,
) -> list[TrajectoryPoint]:
    a = _values(w_star)
    b = _values(w_tilde_star)
    if a.shape != b.shape:
        raise DimensionMismatch("reference vectors differ in length")
    proj = cfg if isinstance(cfg, LatentProjection) else LatentProjection(cfg, a.size)
    ref = proj.kl(a, b)
    points = []
    for t, snap in enumerate(snapshots):
        s = _values(snap)
        if s.shape != a.shape:
            raise DimensionMismatch(f"snapshot {t} has {s.size} entries, expected {a.size}")
        points.append(TrajectoryPoint(t, ref, proj.kl(a, s), proj.kl(b, s)))
    return points
