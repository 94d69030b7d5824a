import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prunescope.errors import InvalidParameter, NotPositiveDefinite, ConvergenceFailure
from prunescope.numkernel import (
    RngStream,
    cholesky,
    derive_seed,
    log_det_pd,
    power_iteration,
    sym_eigen,
)


def random_pd(d, seed):
    a = RngStream(seed).normal((d, d))
    return a @ a.T + np.eye(d)


def random_sym(d, seed):
    a = RngStream(seed).normal((d, d))
    return a + a.T


def charpoly_roots_by_bisection(m, grid=4000, iters=200):
    """Eigenvalues of a small symmetric matrix without any eigen-solver:
    Faddeev-LeVerrier for the characteristic polynomial, then bisection on
    every sign change over the Gershgorin interval."""
    n = m.shape[0]
    coeffs = [1.0]
    mk = np.zeros_like(m)
    for k in range(1, n + 1):
        mk = m @ mk + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(m @ mk) / k)

    def poly(x):
        return sum(c * x ** (n - i) for i, c in enumerate(coeffs))

    radius = np.max(np.sum(np.abs(m), axis=1))
    xs = np.linspace(-radius - 1, radius + 1, grid)
    vals = [poly(x) for x in xs]
    roots = []
    for lo, hi, flo, fhi in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if flo == 0:
            roots.append(lo)
        elif flo * fhi < 0:
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                if poly(mid) * flo <= 0:
                    hi = mid
                else:
                    lo, flo = mid, poly(mid)
            roots.append(0.5 * (lo + hi))
    return np.array(sorted(roots))


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_array_equal(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_seeded_reconstruction(self):
        m = random_pd(5, 1)
        low = cholesky(m)
        assert np.all(np.triu(low, 1) == 0)
        assert np.linalg.norm(low @ low.T - m) / np.linalg.norm(m) <= 1e-10

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, 1e-13]))

    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidParameter):
            cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 32), st.integers(0, 2**32))
    def test_reconstruction_property(self, d, seed):
        m = random_pd(d, seed)
        low = cholesky(m)
        assert np.linalg.norm(low @ low.T - m) / np.linalg.norm(m) <= 1e-8


class TestLogDet:
    def test_identity(self):
        assert log_det_pd(np.eye(7)) == 0.0

    def test_diagonal(self):
        assert log_det_pd(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0), abs=1e-15)

    def test_matches_eigenvalues(self):
        m = random_pd(6, 2)
        values, _ = sym_eigen(m)
        assert abs(log_det_pd(m) - np.sum(np.log(values))) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**32))
    def test_eigen_property(self, d, seed):
        m = random_pd(d, seed)
        values, _ = sym_eigen(m)
        assert abs(log_det_pd(m) - np.sum(np.log(values))) <= 1e-8


class TestSymEigen:
    def test_diagonal(self):
        values, vecs = sym_eigen(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_array_equal(values, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])

    def test_identity(self):
        values, _ = sym_eigen(np.eye(4))
        np.testing.assert_array_equal(values, np.ones(4))

    def test_characteristic_polynomial_oracle(self):
        m = random_sym(4, 3)
        values, _ = sym_eigen(m)
        np.testing.assert_allclose(values, charpoly_roots_by_bisection(m), atol=1e-9)

    @pytest.mark.parametrize("d", [2, 5, 17, 60])
    def test_eigen_equation(self, d):
        m = random_sym(d, d)
        values, vecs = sym_eigen(m)
        assert np.all(np.diff(values) >= 0)
        assert np.max(np.abs(m @ vecs - vecs * values)) <= 1e-8 * max(1.0, np.abs(values).max())
        assert np.max(np.abs(vecs.T @ vecs - np.eye(d))) <= 1e-8


class TestPowerIteration:
    def test_diagonal(self):
        lam, v = power_iteration(lambda x: np.array([5.0, 1.0]) * x, 2, 1e-10, 10_000, RngStream(0))
        assert lam == pytest.approx(5.0, rel=1e-9)
        assert abs(abs(v[0]) - 1.0) < 1e-6

    def test_identity(self):
        lam, v = power_iteration(lambda x: x, 6, 1e-10, 10, RngStream(1))
        assert lam == pytest.approx(1.0)
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_dense_oracle(self):
        m = random_sym(8, 4)
        values, _ = sym_eigen(m)
        dominant = values[np.argmax(np.abs(values))]
        lam, v = power_iteration(lambda x: m @ x, 8, 1e-9, 100_000, RngStream(2))
        assert abs(lam - dominant) <= 1e-6 * abs(dominant)
        assert np.linalg.norm(m @ v - lam * v) <= 1e-9 * abs(lam)

    def test_gives_up(self):
        # +1 and -1 have equal magnitude: power iteration oscillates
        with pytest.raises(ConvergenceFailure):
            power_iteration(lambda x: np.array([1.0, -1.0]) * x, 2, 1e-12, 50, RngStream(0))


class TestRng:
    def test_same_seed_same_draws(self):
        a = RngStream(42).normal(100)
        b = RngStream(42).normal(100)
        assert a.tobytes() == b.tobytes()

    def test_children_independent_of_order(self):
        parent = RngStream(7)
        first = parent.child(3).normal(5)
        parent.child(1).normal(1000)
        again = RngStream(7).child(3).normal(5)
        assert first.tobytes() == again.tobytes()

    def test_string_keys(self):
        assert RngStream(1).child("mc").normal(3).tobytes() == RngStream(1).child("mc").normal(3).tobytes()
        assert RngStream(1).child("mc").normal(3).tobytes() != RngStream(1).child("cov").normal(3).tobytes()

    def test_derive_seed_stable(self):
        assert derive_seed(1, 0, "lowest", 0.5) == derive_seed(1, 0, "lowest", 0.5)
        assert derive_seed(1, 0, "lowest", 0.5) != derive_seed(1, 0, "lowest", 0.3)
        assert 0 <= derive_seed("x") < 2**64

    def test_rejects_bad_seed(self):
        with pytest.raises(InvalidParameter):
            RngStream(-1)
