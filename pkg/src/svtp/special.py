"""Scalar special functions used by the t-density and the Fisher constants.

Everything here is a thin, domain-checked wrapper around scipy.special.
Downstream code works with ratios of Beta values, always formed as
``exp(log_beta(a, b) - log_beta(c, d))`` so that large degrees of freedom
never overflow.
"""

import math

from scipy.special import gammaln, polygamma, psi

__all__ = ["log_gamma", "digamma", "trigamma", "log_beta", "wallis"]


def _check_positive(name, x):
    if not math.isfinite(x) or x <= 0.0:
        raise ValueError(f"{name} must be a positive finite real, got {x!r}")


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    _check_positive("x", x)
    return float(gammaln(x))


def digamma(x: float) -> float:
    """Logarithmic derivative of the gamma function for x > 0."""
    _check_positive("x", x)
    return float(psi(x))


def trigamma(x: float) -> float:
    """Second derivative of log-gamma for x > 0."""
    _check_positive("x", x)
    return float(polygamma(1, x))


def log_beta(a: float, b: float) -> float:
    """log B(a, b) = log Gamma(a) + log Gamma(b) - log Gamma(a + b)."""
    _check_positive("a", a)
    _check_positive("b", b)
    return float(gammaln(a) + gammaln(b) - gammaln(a + b))


def wallis(p: int) -> float:
    """Integral of sin^p over [0, pi/2], via the gamma-function identity.

    Serves as a numerical self-test of the gamma machinery: the value must
    match direct quadrature of sin^p.
    """
    if p < 0 or p != int(p):
        raise ValueError(f"p must be a nonnegative integer, got {p!r}")
    return 0.5 * math.sqrt(math.pi) * math.exp(log_gamma((p + 1) / 2) - log_gamma((p + 2) / 2))
