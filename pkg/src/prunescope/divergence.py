"""KL and chi-square divergences between latent distributions, plus the
total-variation / Pinsker lower-bound chain.

Note on orientation: ``gaussian_kl(P, Q)`` is the usual KL(P || Q) with Q's
covariance inverted. Some texts write the trace and quadratic terms with the
first argument's covariance inverted instead; the two coincide whenever the
covariances are equal, which is how the pattern metrics use it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, InvalidParameter, NonFiniteSample, OverflowGuard
from .latent import GaussianSpec, LatentSpec, StudentSpec, log_density, whitened_draws
from .numkernel import RngStream, cholesky

DEFAULT_MC_SAMPLES = 600_000
DEFAULT_GROUPS = 100
MIN_MC_SAMPLES = 1000
CHI2_LOG_RATIO_CAP = 700.0

CLOSED_FORM = "closed-form"
MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    std_error: float = 0.0
    method: str = CLOSED_FORM
    n_samples: int = 0

    def __float__(self) -> float:
        return self.value


def _check_pair(p: LatentSpec, q: LatentSpec):
    if p.dim != q.dim:
        raise DimensionMismatch(f"dimensions differ: {p.dim} vs {q.dim}")


def gaussian_kl(p: GaussianSpec, q: GaussianSpec) -> DivergenceEstimate:
    _check_pair(p, q)
    d = p.dim
    diff = p.mean - q.mean
    white = solve_triangular(q.chol, diff, lower=True)
    quad = float(white @ white)
    if p.cov is q.cov or np.array_equal(p.cov, q.cov):
        # identical covariances: log-det ratio is 0 and the trace term is exactly d
        return DivergenceEstimate(0.5 * quad)
    m = solve_triangular(q.chol, p.chol, lower=True)
    trace = float(np.sum(m * m))
    value = 0.5 * (q.log_det - p.log_det + trace + quad - d)
    return DivergenceEstimate(value)


def _estimate(terms: np.ndarray) -> DivergenceEstimate:
    n = terms.size
    return DivergenceEstimate(
        value=float(np.mean(terms)),
        std_error=float(np.std(terms, ddof=1) / math.sqrt(n)),
        method=MONTE_CARLO,
        n_samples=n,
    )


def _log_ratios(p: LatentSpec, q: LatentSpec, n: int, rng: RngStream) -> np.ndarray:
    _check_pair(p, q)
    if n < MIN_MC_SAMPLES:
        raise InvalidParameter(f"need at least {MIN_MC_SAMPLES} samples, got {n}")
    x = p.mean + whitened_draws(p, n, rng) @ p.chol.T
    ratio = log_density(p, x) - log_density(q, x)
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteSample("non-finite log-density encountered during Monte Carlo")
    return ratio


def mc_kl(p: LatentSpec, q: LatentSpec, n: int = DEFAULT_MC_SAMPLES, rng: RngStream | None = None) -> DivergenceEstimate:
    """Monte Carlo KL(P || Q) from ``n`` draws of P."""
    rng = rng if rng is not None else RngStream(0)
    return _estimate(_log_ratios(p, q, n, rng))


def mc_chi2(p: LatentSpec, q: LatentSpec, n: int = DEFAULT_MC_SAMPLES, rng: RngStream | None = None) -> DivergenceEstimate:
    """Monte Carlo chi-square divergence, the mean of ``p/q - 1`` under P."""
    rng = rng if rng is not None else RngStream(0)
    ratio = _log_ratios(p, q, n, rng)
    top = float(np.max(ratio))
    if top > CHI2_LOG_RATIO_CAP:
        raise OverflowGuard(f"log density ratio reached {top:.1f}; tails of Q too light for P")
    return _estimate(np.expm1(ratio))


class SharedScaleKL:
    """Monte Carlo KL between many mean pairs that share one scale matrix.

    Draws the whitened samples once and reuses them for every pair, which
    gives the same estimator as :func:`mc_kl` with the same seed, but costs
    only one matrix-vector product per pair. Reusing draws across pairs
    (common random numbers) also makes differences between pairs far less
    noisy than independent estimates would be.
    """

    def __init__(self, template: LatentSpec, n: int = DEFAULT_MC_SAMPLES, rng: RngStream | None = None):
        if n < MIN_MC_SAMPLES:
            raise InvalidParameter(f"need at least {MIN_MC_SAMPLES} samples, got {n}")
        self.template = template
        self.n = n
        rng = rng if rng is not None else RngStream(0)
        self._u = whitened_draws(template, n, rng)
        self._u_sq = np.sum(self._u * self._u, axis=1)

    @property
    def dim(self) -> int:
        return self.template.dim

    def kl(self, mean_p, mean_q) -> DivergenceEstimate:
        mean_p = np.asarray(mean_p, dtype=np.float64)
        mean_q = np.asarray(mean_q, dtype=np.float64)
        if mean_p.shape != (self.dim,) or mean_q.shape != (self.dim,):
            raise DimensionMismatch(f"means must have dim {self.dim}")
        c = solve_triangular(self.template.chol, mean_p - mean_q, lower=True)
        shifted_sq = self._u_sq + 2.0 * (self._u @ c) + c @ c
        if isinstance(self.template, StudentSpec):
            nu = self.template.dof
            k = 0.5 * (nu + self.dim)
            terms = k * (np.log1p(shifted_sq / nu) - np.log1p(self._u_sq / nu))
        else:
            terms = 0.5 * (shifted_sq - self._u_sq)
        if not np.all(np.isfinite(terms)):
            raise NonFiniteSample("non-finite log-density encountered during Monte Carlo")
        return _estimate(terms)


def group_average(w, g: int = DEFAULT_GROUPS) -> np.ndarray:
    """Average contiguous index groups; the first ``d % g`` groups get one extra entry."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    d = w.size
    if not 1 <= g <= d:
        raise InvalidParameter(f"group count must be in [1, {d}], got {g}")
    base, extra = divmod(d, g)
    sizes = np.full(g, base)
    sizes[:extra] += 1
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return np.add.reduceat(w, starts) / sizes


def _mean_gap(mean_p, mean_q, cov_p, cov_q) -> tuple[float, float]:
    mean_p = np.asarray(mean_p, dtype=np.float64).reshape(-1)
    mean_q = np.asarray(mean_q, dtype=np.float64).reshape(-1)
    cov_p = np.asarray(cov_p, dtype=np.float64)
    cov_q = np.asarray(cov_q, dtype=np.float64)
    d = mean_p.size
    if mean_q.size != d or cov_p.shape != (d, d) or cov_q.shape != (d, d):
        raise DimensionMismatch("means and covariances must share one dimension")
    a = mean_p - mean_q
    return float(a @ a), float(np.trace(cov_p) + np.trace(cov_q))


def tv_lower_bound(mean_p, mean_q, cov_p, cov_q) -> float:
    """Moment-based lower bound ``a'a / (2 (tr P + tr Q) + a'a)`` on total variation."""
    aa, traces = _mean_gap(mean_p, mean_q, cov_p, cov_q)
    if aa == 0.0:
        return 0.0
    return aa / (2.0 * traces + aa)


def pinsker_kl_lower_bound(mean_p, mean_q, cov_p, cov_q) -> float:
    return 2.0 * tv_lower_bound(mean_p, mean_q, cov_p, cov_q) ** 2


def mahalanobis_sq(delta, cov) -> float:
    """``delta' cov^{-1} delta`` through the Cholesky factor."""
    white = solve_triangular(cholesky(cov), np.asarray(delta, dtype=np.float64), lower=True)
    return float(white @ white)
