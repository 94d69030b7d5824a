"""Dense linear algebra and seeded randomness.

Matrices are plain 2-D ``float64`` numpy arrays. The symmetric routines
(Cholesky, Jacobi eigen-solve) are written out here rather than delegated
to LAPACK so that their failure modes (pivot threshold, sweep cap) are the
ones documented below.
"""
from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

from .errors import ConvergenceFailure, DimensionMismatch, InvalidParameter, NotPositiveDefinite

PIVOT_FLOOR = 1e-12
SYMMETRY_RTOL = 1e-9
JACOBI_MAX_SWEEPS = 100


def derive_seed(*parts) -> int:
    """Hash an arbitrary tuple of labels into a 64-bit unsigned seed.

    Uses BLAKE2b over the ``repr`` of each part joined by ``|``, so the
    mapping is stable across processes and platforms.
    """
    text = "|".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


class RngStream:
    """Single-owner random stream.

    The generator is numpy's PCG64 seeded through ``SeedSequence(seed,
    spawn_key=path)``. Child streams are addressed by a key path rather than
    by draw order, so parallel callers get the same numbers regardless of
    scheduling.
    """

    algorithm = "numpy.random.PCG64 via SeedSequence(entropy=seed, spawn_key=path)"

    def __init__(self, seed: int, path: Sequence[int] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidParameter(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.path = tuple(int(k) for k in path)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed, spawn_key=self.path))
        )

    def child(self, *keys) -> "RngStream":
        ints = [k if isinstance(k, int) and k >= 0 else derive_seed(k) for k in keys]
        return RngStream(self.seed, self.path + tuple(ints))

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def chisquare(self, df: float, size=None) -> np.ndarray:
        return self.generator.chisquare(df, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"


def check_symmetric(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] < 1:
        raise InvalidParameter("matrix dimension must be at least 1")
    gap = np.abs(m - m.T)
    if np.any(gap > SYMMETRY_RTOL * np.maximum(1.0, np.abs(m))):
        raise InvalidParameter("matrix is not symmetric")
    return m


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises
    ------
    NotPositiveDefinite
        If any pivot falls at or below ``PIVOT_FLOOR``.
    """
    m = check_symmetric(m)
    n = m.shape[0]
    low = np.zeros_like(m)
    for j in range(n):
        row = low[j, :j]
        pivot = m[j, j] - row @ row
        if not pivot > PIVOT_FLOOR:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at index {j} is not positive")
        low[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            low[j + 1:, j] = (m[j + 1:, j] - low[j + 1:, :j] @ row) / low[j, j]
    return low


def log_det_pd(m) -> float:
    low = cholesky(m)
    return float(2.0 * np.sum(np.log(np.diag(low))))


def sym_eigen(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = check_symmetric(m).copy()
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        return np.diag(a).copy(), v
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= 1e-14 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ConvergenceFailure(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")
    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return values[order], v[:, order]


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    d: int,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    rng: RngStream | None = None,
) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of a symmetric linear operator.

    Stops once ``|apply(v) - lam * v| <= tol * |lam|``.
    """
    if tol <= 0:
        raise InvalidParameter("tol must be positive")
    rng = rng if rng is not None else RngStream(0)
    v = rng.normal(d)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = np.asarray(apply(v), dtype=np.float64)
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * abs(lam):
            return lam, v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        v = w / norm
    raise ConvergenceFailure(f"power iteration did not reach tol={tol} in {max_iter} steps")
