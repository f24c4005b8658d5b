import math

import mpmath
import numpy as np
import pytest

from svtp.special import digamma, log_beta, log_gamma, trigamma, wallis


def simpson_sin_power(p, panels=10_000):
    """Composite-Simpson quadrature of sin^p on [0, pi/2]."""
    x = np.linspace(0.0, math.pi / 2, 2 * panels + 1)
    y = np.sin(x) ** p
    h = x[1] - x[0]
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


class TestLogGamma:
    def test_integer_values(self):
        assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-14)
        assert log_gamma(2.0) == pytest.approx(0.0, abs=1e-14)

    def test_half_integer_by_recurrence(self):
        # Gamma(2.5) = 1.5 * 0.5 * Gamma(0.5), Gamma(0.5) = sqrt(pi)
        expected = math.log(1.5 * 0.5 * math.sqrt(math.pi))
        assert log_gamma(2.5) == pytest.approx(expected, abs=1e-13)

    def test_accuracy_grid_vs_mpmath(self):
        # binary64 ulp of ln Gamma(1e6) ~ 2e-9, so the absolute floor is
        # supplemented with a few-ulp relative allowance at the top end
        mpmath.mp.dps = 40
        for x in np.geomspace(1e-3, 1e6, 200):
            ref = float(mpmath.loggamma(mpmath.mpf(float(x))))
            tol = max(1e-12, 8 * abs(ref) * np.finfo(float).eps)
            assert abs(log_gamma(float(x)) - ref) <= tol, x

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
    def test_domain_errors(self, bad):
        with pytest.raises(ValueError):
            log_gamma(bad)


class TestDigamma:
    def test_at_one_is_minus_euler(self):
        assert digamma(1.0) == pytest.approx(-np.euler_gamma, abs=1e-12)

    def test_recurrence(self):
        assert digamma(2.0) == pytest.approx(-np.euler_gamma + 1.0, abs=1e-12)

    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0, 5.0, 10.0, 100.0])
    def test_matches_finite_difference_of_log_gamma(self, x):
        h = 1e-5
        fd = (log_gamma(x + h) - log_gamma(x - h)) / (2 * h)
        assert digamma(x) == pytest.approx(fd, abs=1e-6)

    def test_accuracy_grid_vs_mpmath(self):
        mpmath.mp.dps = 40
        for x in np.geomspace(1e-3, 1e6, 200):
            ref = float(mpmath.digamma(mpmath.mpf(float(x))))
            assert abs(digamma(float(x)) - ref) <= 1e-10, x

    def test_domain_error(self):
        with pytest.raises(ValueError):
            digamma(-2.0)


class TestTrigamma:
    @pytest.mark.parametrize("x", [0.5, 1.5, 4.0, 50.0])
    def test_matches_finite_difference_of_digamma(self, x):
        h = 1e-5
        fd = (digamma(x + h) - digamma(x - h)) / (2 * h)
        assert trigamma(x) == pytest.approx(fd, abs=1e-6)


class TestLogBeta:
    def test_trivial(self):
        assert log_beta(1.0, 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_half_half_is_log_pi(self):
        assert log_beta(0.5, 0.5) == pytest.approx(math.log(math.pi), abs=1e-13)

    def test_recurrence_case(self):
        # Gamma(2) Gamma(2.5) / Gamma(4.5) = 4/35 by the recurrence
        assert log_beta(2.0, 2.5) == pytest.approx(math.log(4.0 / 35.0), abs=1e-13)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a, b = rng.uniform(0.1, 50.0, 2)
            assert log_beta(a, b) == log_beta(b, a)

    def test_gamma_consistency(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            a, b = rng.uniform(0.1, 50.0, 2)
            lhs = log_beta(a, b) + log_gamma(a + b)
            rhs = log_gamma(a) + log_gamma(b)
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            log_beta(-1.0, 2.0)


class TestWallis:
    def test_p0(self):
        assert wallis(0) == pytest.approx(math.pi / 2, abs=1e-14)

    def test_p1(self):
        assert wallis(1) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("p", range(13))
    def test_matches_quadrature(self, p):
        assert wallis(p) == pytest.approx(simpson_sin_power(p), abs=1e-8)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            wallis(-1)
