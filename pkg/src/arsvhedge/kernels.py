"""Radon-Nikodym weight processes for the two pricing measures.

``mmm``
    Minimal martingale measure.  Per-step factor

        N_k = 1 + (e^{K1} - 1)(e^{z_k} - e^{K1}) / (e^{2 K1} - e^{K2})

    with ``z_k = y_k - r`` the realised excess log-return and the conditional
    cumulants approximated from a volatility forecast, ``K1 = sigma_hat^2/2``,
    ``K2 = 2 sigma_hat^2``.  Factors can be negative.

``mc``
    Mean-correcting measure.  ``N_t = f(eps_hat + rho) / f(eps_hat)`` with ``f``
    the standard normal density, ``eps_hat = z_t / sigma_hat`` and market price
    of risk ``rho = K1 / sigma_hat``.  Always positive; kept in log space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import log_returns

MEASURES = ("mmm", "mc")


class DegenerateVolatilityError(ArithmeticError):
    """A kernel was asked to use a zero volatility forecast."""


def _check_sigma(sigma_hat) -> np.ndarray:
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    if np.any(~(sigma_hat > 0.0)):
        raise DegenerateVolatilityError("volatility forecasts must be strictly positive")
    return sigma_hat


def mmm_factors_from_cumulants(z, k1, k2):
    """Minimal-martingale factors for given conditional cumulants ``K(sigma)``, ``K(2 sigma)``.

    Evaluated as ``1 - expm1(K1) expm1(z - K1) / (e^{K1} expm1(K2 - 2 K1))``,
    which is the same quantity without the cancellation in the denominator.
    """
    z, k1, k2 = (np.asarray(a, dtype=np.float64) for a in (z, k1, k2))
    gap = np.expm1(k2 - 2.0 * k1)
    if np.any(gap == 0.0):
        raise DegenerateVolatilityError("zero conditional variance in minimal martingale factor")
    return 1.0 - np.expm1(k1) * np.expm1(z - k1) / (np.exp(k1) * gap)


def mmm_factors(z, sigma_hat):
    sigma_hat = _check_sigma(sigma_hat)
    s2 = sigma_hat * sigma_hat
    return mmm_factors_from_cumulants(z, 0.5 * s2, 2.0 * s2)


def mc_log_factors(z, sigma_hat):
    sigma_hat = _check_sigma(sigma_hat)
    rho = 0.5 * sigma_hat * sigma_hat / sigma_hat
    eps_hat = np.asarray(z, dtype=np.float64) / sigma_hat
    # log f(eps_hat + rho) - log f(eps_hat)
    return -rho * eps_hat - 0.5 * rho * rho


def step_factors(measure: str, z, sigma_hat):
    """``(factors, log_factors)``; ``log_factors`` is None for ``mmm``."""
    if measure == "mmm":
        return mmm_factors(z, sigma_hat), None
    if measure == "mc":
        lf = mc_log_factors(z, sigma_hat)
        return np.exp(lf), lf
    raise ValueError(f"unknown measure {measure!r}; expected one of {MEASURES}")


@dataclass
class KernelWeights:
    """Per-step factors ``n[t-1] = N_t`` and running products ``z[t] = Z_t`` (``z[0] = 1``)."""

    measure: str
    n: np.ndarray
    z: np.ndarray
    log_n: np.ndarray | None = None

    @property
    def negative_flag(self) -> bool:
        return bool(np.any(self.z[1:] <= 0.0))

    @property
    def horizon(self) -> int:
        return len(self.n)

    @property
    def log_z(self) -> np.ndarray | None:
        if self.log_n is None:
            return None
        return np.concatenate(([0.0], np.cumsum(self.log_n)))


def _weights(measure: str, path, sigma_hat) -> KernelWeights:
    sh = getattr(sigma_hat, "sigma_hat", sigma_hat)
    z = log_returns(path.s) - path.r
    if len(np.asarray(sh)) != len(z):
        raise ValueError(f"forecast length {len(sh)} does not match path horizon {len(z)}")
    n, log_n = step_factors(measure, z, sh)
    if log_n is not None:
        zc = np.exp(np.concatenate(([0.0], np.cumsum(log_n))))
    else:
        zc = np.multiply.accumulate(np.concatenate(([1.0], n)))
    return KernelWeights(measure=measure, n=n, z=zc, log_n=log_n)


def mmm_weights(path, sigma_hat) -> KernelWeights:
    """Minimal martingale measure weights along one observed path."""
    return _weights("mmm", path, sigma_hat)


def mc_weights(path, sigma_hat) -> KernelWeights:
    """Mean-correcting measure weights along one observed path."""
    return _weights("mc", path, sigma_hat)


def tail_product(weights: KernelWeights, from_step: int) -> float:
    """``N_from_step * ... * N_T``."""
    if not 1 <= from_step <= weights.horizon:
        raise IndexError(f"from_step must lie in 1..{weights.horizon}")
    if weights.log_n is not None:
        return float(np.exp(np.sum(weights.log_n[from_step - 1:])))
    return float(np.prod(weights.n[from_step - 1:]))
