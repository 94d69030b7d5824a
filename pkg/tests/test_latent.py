import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from prunescope.errors import DimensionMismatch, InvalidParameter, NotPositiveDefinite
from prunescope.latent import (
    GAUSSIAN_DIAG,
    GAUSSIAN_NONDIAG,
    GaussianSpec,
    StudentSpec,
    diag_cov,
    log_density,
    random_nondiag_cov,
    sample,
)
from prunescope.numkernel import RngStream, cholesky, sym_eigen

GOLDEN_NONDIAG = np.array([
    [2.9294089401801746, -0.45969040934830635, -0.6518124590628662, -0.13268988306124951, -0.6324209686270084],
    [-0.45969040934830635, 3.563209394655475, 0.08129743022936303, -0.7082257664383971, -0.646437789542695],
    [-0.6518124590628662, 0.08129743022936303, 4.165755792590025, 1.4558476482349567, -0.3092674024673061],
    [-0.13268988306124951, -0.7082257664383971, 1.4558476482349567, 2.8087015321425746, -0.19969813153225105],
    [-0.6324209686270084, -0.646437789542695, -0.3092674024673061, -0.19969813153225105, 4.658886552758613],
])

GOLDEN_SAMPLE = np.array([
    [0.9903454753268416, -0.9791140466418966, 1.2160396286138417],
    [2.0238291597701394, -0.2644911076436871, 0.01532272230950038],
    [0.11335106979978016, -3.423603595967387, 0.15678453706728662],
    [2.4124651069546603, -1.8095786085970704, 0.8311406828104209],
    [-1.7022349594361361, -2.2616181092875642, -0.0837595153147257],
])

SAMPLE_MEAN = [1.0, -2.0, 0.5]
SAMPLE_COV = [[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]]


class TestDiagCov:
    def test_identity(self):
        np.testing.assert_array_equal(diag_cov(3, 1.0), np.eye(3))

    def test_scaled(self):
        np.testing.assert_array_equal(diag_cov(2, 2.0), np.diag([4.0, 4.0]))

    def test_trace(self):
        assert np.trace(diag_cov(100, 0.5)) == 25.0

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_rejects_nonpositive(self, sigma):
        with pytest.raises(InvalidParameter):
            diag_cov(3, sigma)


class TestNondiagCov:
    def test_unit_spectrum_is_identity(self):
        cov = random_nondiag_cov(4, 1.0, 1.0, 1.0, RngStream(3))
        np.testing.assert_allclose(cov, np.eye(4), atol=1e-12)

    def test_golden(self):
        cov = random_nondiag_cov(5, 2.0, 0.5, 3.0, RngStream(11))
        assert cov.tobytes() == GOLDEN_NONDIAG.tobytes()

    @pytest.mark.parametrize("bad", [(1.0, 0.0, 1.0), (1.0, 2.0, 1.0), (0.0, 0.5, 1.0)])
    def test_rejects_bad_parameters(self, bad):
        beta, low, high = bad
        with pytest.raises(InvalidParameter):
            random_nondiag_cov(3, beta, low, high, RngStream(0))

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(1, 12),
        st.floats(0.1, 5.0),
        st.floats(0.05, 2.0),
        st.floats(0.0, 3.0),
        st.integers(0, 2**32),
    )
    def test_spectrum_property(self, d, beta, low, width, seed):
        high = low + width
        cov = random_nondiag_cov(d, beta, low, high, RngStream(seed))
        cholesky(cov)
        values, _ = sym_eigen(cov)
        assert np.all(values / beta >= low - 1e-8)
        assert np.all(values / beta <= high + 1e-8)

    def test_off_diagonal_nonzero(self):
        cov = random_nondiag_cov(6, 1.0, 0.5, 2.0, RngStream(4))
        assert np.all(np.abs(cov[np.triu_indices(6, 1)]) > 0)


class TestSpecs:
    def test_diag_family_rejects_dense(self):
        with pytest.raises(InvalidParameter):
            GaussianSpec(np.zeros(2), [[1.0, 0.5], [0.5, 1.0]], GAUSSIAN_DIAG)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            GaussianSpec(np.zeros(3), np.eye(2), GAUSSIAN_NONDIAG)

    def test_not_pd(self):
        with pytest.raises(NotPositiveDefinite):
            GaussianSpec(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]], GAUSSIAN_NONDIAG).chol

    def test_student_dof(self):
        with pytest.raises(InvalidParameter):
            StudentSpec(np.zeros(2), np.eye(2), 2.0)

    def test_student_cov(self):
        np.testing.assert_allclose(StudentSpec(np.zeros(2), np.eye(2), 4.0).cov, 2.0 * np.eye(2))


class TestLogDensity:
    def test_standard_normal_mode(self):
        spec = GaussianSpec([0.0], [[1.0]], GAUSSIAN_DIAG)
        assert log_density(spec, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
        assert log_density(spec, [0.0]) == pytest.approx(-0.9189385, abs=1e-7)

    def test_gaussian_at_mean(self):
        mu = np.array([0.3, -1.0, 2.0, 4.0])
        spec = GaussianSpec(mu, np.eye(4), GAUSSIAN_DIAG)
        assert log_density(spec, mu) == pytest.approx(-2.0 * math.log(2 * math.pi), abs=1e-14)

    def test_student_mode_high_precision(self):
        mpmath.mp.dps = 40
        oracle = mpmath.log(mpmath.gamma(2.5) / (mpmath.gamma(2) * mpmath.sqrt(4 * mpmath.pi)))
        spec = StudentSpec([0.0], [[1.0]], 4.0)
        assert abs(log_density(spec, [0.0]) - float(oracle)) <= 1e-14

    def test_student_off_mode_high_precision(self):
        mpmath.mp.dps = 40
        x, nu, s2 = mpmath.mpf("1.7"), 4, mpmath.mpf("2.25")
        oracle = (
            mpmath.loggamma((nu + 1) / mpmath.mpf(2)) - mpmath.loggamma(nu / mpmath.mpf(2))
            - 0.5 * mpmath.log(nu * mpmath.pi * s2)
            - (nu + 1) / mpmath.mpf(2) * mpmath.log(1 + x * x / (nu * s2))
        )
        spec = StudentSpec([0.0], [[2.25]], 4.0)
        assert abs(log_density(spec, [1.7]) - float(oracle)) <= 1e-14

    def test_batch_matches_points(self):
        spec = GaussianSpec(SAMPLE_MEAN, SAMPLE_COV, GAUSSIAN_NONDIAG)
        x = RngStream(0).normal((4, 3))
        batch = log_density(spec, x)
        assert batch.shape == (4,)
        for row, value in zip(x, batch):
            assert log_density(spec, row) == value

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            log_density(GaussianSpec(np.zeros(3), np.eye(3), GAUSSIAN_DIAG), np.zeros(2))

    @pytest.mark.parametrize("spec", [
        GaussianSpec([0.7], [[1.3]], GAUSSIAN_DIAG),
        StudentSpec([0.7], [[1.3]], 4.0),
        StudentSpec([-2.0], [[0.4]], 7.5),
    ])
    def test_integrates_to_one(self, spec):
        mean, sd = float(spec.mean[0]), math.sqrt(float(spec.cov[0, 0]))
        total, _ = integrate.quad(
            lambda t: math.exp(log_density(spec, [t])), mean - 12 * sd, mean + 12 * sd, limit=200
        )
        assert abs(total - 1.0) <= 0.01

    @pytest.mark.parametrize("student", [False, True])
    def test_maximized_at_mean(self, student):
        rng = RngStream(8)
        mean = rng.normal(4)
        cov = random_nondiag_cov(4, 1.0, 0.5, 2.0, rng.child(1))
        spec = StudentSpec(mean, cov, 5.0) if student else GaussianSpec(mean, cov, GAUSSIAN_NONDIAG)
        peak = log_density(spec, mean)
        directions = rng.child(2).normal((200, 4))
        for step in (1e-3, 0.1, 3.0):
            assert np.all(log_density(spec, mean + step * directions) < peak)


class TestSample:
    def test_golden(self):
        spec = GaussianSpec(SAMPLE_MEAN, SAMPLE_COV, GAUSSIAN_NONDIAG)
        assert sample(spec, 5, RngStream(12)).tobytes() == GOLDEN_SAMPLE.tobytes()

    def test_gaussian_mean(self):
        spec = GaussianSpec(SAMPLE_MEAN, SAMPLE_COV, GAUSSIAN_NONDIAG)
        n = 200_000
        x = sample(spec, n, RngStream(21))
        bound = 5 * math.sqrt(max(np.diag(spec.cov)) / n)
        assert np.all(np.abs(x.mean(axis=0) - spec.mean) <= bound)

    def test_student_covariance(self):
        spec = StudentSpec(SAMPLE_MEAN, SAMPLE_COV, 4.0)
        x = sample(spec, 600_000, RngStream(22))
        emp = np.cov(x, rowvar=False)
        target = 2.0 * np.asarray(SAMPLE_COV)
        big = np.abs(target) > 0.1
        assert np.all(np.abs(emp[big] - target[big]) <= 0.10 * np.abs(target[big]))

    def test_deterministic(self):
        spec = StudentSpec(SAMPLE_MEAN, SAMPLE_COV, 4.0)
        assert sample(spec, 50, RngStream(5)).tobytes() == sample(spec, 50, RngStream(5)).tobytes()

    def test_rejects_empty(self):
        with pytest.raises(InvalidParameter):
            sample(GaussianSpec([0.0], [[1.0]], GAUSSIAN_DIAG), 0, RngStream(0))
