"""Closed-form reference laws used as test oracles (one-dimensional)."""

from __future__ import annotations

import math

from .measures import GaussianLaw

__all__ = [
    "variance_drift_law",
    "mixture_law",
    "nonlinearity_gap",
    "gaussian_wasserstein2",
    "ou_stationary",
]


def _check_time(t: float) -> None:
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")


def variance_drift_law(start, t: float) -> GaussianLaw:
    """Law at time t of dX = Var(X) dt + dB.

    ``start`` is a real x (point mass at x) or ``"standard_normal"``.
    From x: N(x + t^2/2, t). From N(0,1): N(t + t^2/2, 1 + t).
    """
    _check_time(t)
    if isinstance(start, str):
        if start != "standard_normal":
            raise ValueError(f"unknown start {start!r}")
        return GaussianLaw(t + t * t / 2, 1.0 + t)
    return GaussianLaw(float(start) + t * t / 2, t)


def mixture_law(t: float) -> GaussianLaw:
    """Average of the point-mass laws over x ~ N(0,1): N(t^2/2, 1 + t)."""
    _check_time(t)
    return GaussianLaw(t * t / 2, 1.0 + t)


def nonlinearity_gap(t: float) -> float:
    """W1 between the law started from N(0,1) and the mixture of point-mass laws.

    Both are normal with variance 1 + t, so W1 is the mean gap, t.
    """
    a = variance_drift_law("standard_normal", t)
    b = mixture_law(t)
    return abs(a.mean - b.mean)


def gaussian_wasserstein2(a: GaussianLaw, b: GaussianLaw) -> float:
    return math.hypot(a.mean - b.mean, a.std - b.std)


def ou_stationary(kappa: float, sigma: float) -> GaussianLaw:
    """Invariant law N(0, sigma^2 / (2 kappa)) of dX = -kappa X dt + sigma dB."""
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    return GaussianLaw(0.0, sigma * sigma / (2.0 * kappa))
