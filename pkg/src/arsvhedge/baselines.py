"""Sensitivity-based comparison hedges.

``bs``
    Black-Scholes call delta using the stationary ARSV volatility, annualised
    with 252 steps per year.
``duan``
    Static delta ``e^{-r(T-t)} E^Q[(S_T / s_t) 1{S_T >= K}]`` estimated from the
    same reweighted sub-paths as the local-risk-minimising hedge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .filters import FilterState
from .lrm import OptionSpec, Sampler, SubpathBundle, simulate_subpaths, state_from_b
from .model import STEPS_PER_YEAR, ModelParams, stationary_moments


@dataclass(frozen=True)
class BsParams:
    vol: float
    rate: float
    steps_per_year: int = STEPS_PER_YEAR

    def __post_init__(self):
        if not self.vol > 0:
            raise ValueError("volatility must be positive")

    @classmethod
    def from_model(cls, params: ModelParams) -> "BsParams":
        return cls(vol=stationary_moments(params).annualized_vol,
                   rate=params.r * STEPS_PER_YEAR)


def _d1_d2(s, k, tau_years, bsp: BsParams):
    vs = bsp.vol * math.sqrt(tau_years)
    d1 = (math.log(s / k) + (bsp.rate + 0.5 * bsp.vol ** 2) * tau_years) / vs
    return d1, d1 - vs


def _check(s, k, tau):
    if not (s > 0 and k > 0):
        raise ValueError("price and strike must be positive")
    if tau < 0:
        raise ValueError("time to maturity must be non-negative")


def bs_delta(s: float, k: float, tau: float, bsp: BsParams) -> float:
    """Call delta; ``tau`` is measured in steps.  At expiry the delta is ``1{s > k}``."""
    _check(s, k, tau)
    if tau == 0:
        return 1.0 if s > k else 0.0
    d1, _ = _d1_d2(s, k, tau / bsp.steps_per_year, bsp)
    return float(ndtr(d1))


def bs_price(s: float, k: float, tau: float, bsp: BsParams) -> float:
    _check(s, k, tau)
    if tau == 0:
        return max(s - k, 0.0)
    ty = tau / bsp.steps_per_year
    d1, d2 = _d1_d2(s, k, ty, bsp)
    return float(s * ndtr(d1) - k * math.exp(-bsp.rate * ty) * ndtr(d2))


def bs_put_price(s: float, k: float, tau: float, bsp: BsParams) -> float:
    _check(s, k, tau)
    if tau == 0:
        return max(k - s, 0.0)
    ty = tau / bsp.steps_per_year
    d1, d2 = _d1_d2(s, k, ty, bsp)
    return float(k * math.exp(-bsp.rate * ty) * ndtr(-d2) - s * ndtr(-d1))


def duan_from_bundle(bundle: SubpathBundle, strikes: Sequence[float], measure: str) -> list[float]:
    """Duan deltas for each strike from one bundle, with the same censoring as the LRM quote."""
    f, censored = bundle.weights(measure)
    p = np.where(censored, 0.0, bundle.prob * f)
    total = np.sum(p)
    if not total > 0:
        raise ArithmeticError("every sub-path was censored")
    s_T = bundle.s[:, -1]
    disc = math.exp(-bundle.r * bundle.horizon)
    return [disc * float(np.dot(p, (s_T / bundle.s_t) * (s_T >= k)) / total) for k in strikes]


def duan_delta(
    option: OptionSpec,
    t: int,
    s_t: float,
    b_state: float,
    params: ModelParams,
    measure: str,
    filter: str,
    n_mc: int,
    seed: int | np.random.Generator,
    state: FilterState | None = None,
    sampler: Sampler | None = None,
) -> float:
    T = option.maturity
    if t == T:
        return 1.0 if s_t > option.strike else 0.0
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside 0..{T}")
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = state or state_from_b(filter, params, t, b_state)
    bundle = simulate_subpaths(params, t, s_t, b_state, state, T - t, n_mc, rng, sampler)
    return duan_from_bundle(bundle, [option.strike], measure)[0]
