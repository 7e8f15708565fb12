"""Local risk minimisation under a martingale measure, by reweighted Monte Carlo.

At a rebalance time ``t`` the hedger simulates sub-paths of the ARSV model
under the physical measure from the current price and a filtered
log-variance, continues its volatility filter along each sub-path, and turns
the resulting kernel factors into Radon-Nikodym weights.  With ``F`` the
product of the factors over ``t+1..T`` and ``W`` the product over
``t+1..t+j``::

    V_t        = E^Q[e^{-r(T-t)} H(S_T)]
    xi_{t+j}   = e^{-r(T-t)} E^Q[H(S_T) dS] / E^Q[dS^2],   dS = S_{t+j} e^{-rj} - S_t

where ``E^Q[X]`` is the self-normalised weighted mean ``sum(p F X) / sum(p F)``
(``W`` replaces ``F`` in the denominator).  The denominator is always the
average of squared deviations from ``S_t``; the algebraically equal
``E[S^2 e^{-2rj}] - S_t^2`` is available only as a diagnostic.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .filters import FilterState, KalmanConstants, forecast_along
from .kernels import MEASURES, step_factors
from .model import ModelParams, rebuild_prices

LOW_SAMPLE = 50
DENOM_FLOOR = 1e-14

Sampler = Callable[[np.random.Generator, tuple], tuple]


class DegenerateDenominatorError(ArithmeticError):
    """The conditional variance of the hedging instrument is numerically zero."""


class LowSampleWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    maturity: int
    r: float
    kind: str = "european-call"

    def __post_init__(self):
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if self.maturity < 1:
            raise ValueError("maturity must be >= 1 step")
        if self.kind != "european-call":
            raise ValueError(f"unsupported payoff {self.kind!r}")

    def payoff(self, s_T):
        return np.maximum(np.asarray(s_T, dtype=np.float64) - self.strike, 0.0)


@dataclass
class HedgeQuote:
    value: float
    ratio: float
    denom: float
    n_effective: float
    censored_fraction: float = 0.0
    warnings: list = field(default_factory=list)


# -- sub-path generation -------------------------------------------------------

def gaussian_sampler(rng: np.random.Generator, shape: tuple):
    """Volatility innovations first, then return innovations."""
    w = rng.standard_normal(shape)
    eps = rng.standard_normal(shape)
    return w, eps


def discrete_sampler(eps_support, eps_probs, w_support, w_probs) -> Sampler:
    """Sampler drawing standardised innovations from finite supports."""
    eps_support = np.asarray(eps_support, dtype=float)
    w_support = np.asarray(w_support, dtype=float)
    eps_probs = np.asarray(eps_probs, dtype=float)
    w_probs = np.asarray(w_probs, dtype=float)

    def sample(rng: np.random.Generator, shape: tuple):
        w = w_support[rng.choice(len(w_support), size=shape, p=w_probs)]
        eps = eps_support[rng.choice(len(eps_support), size=shape, p=eps_probs)]
        return w, eps

    return sample


@dataclass
class SubpathBundle:
    """Sub-paths starting at ``(t0, s_t)``; prices ``s[:, k]`` are at time ``t0 + k``.

    ``prob`` holds the physical probability of each row (uniform for Monte
    Carlo, exact leaf probabilities for an enumerated tree).
    """

    t0: int
    s_t: float
    r: float
    s: np.ndarray
    z: np.ndarray
    sigma_hat: np.ndarray
    prob: np.ndarray

    @property
    def horizon(self) -> int:
        return self.z.shape[1]

    def __len__(self) -> int:
        return self.z.shape[0]

    def factors(self, measure: str):
        return step_factors(measure, self.z, self.sigma_hat)

    def weights(self, measure: str, upto: int | None = None):
        """Products of kernel factors over the first ``upto`` steps, and a censor mask.

        The mask is True for rows whose partial products ever reach a
        non-positive value (only possible for ``mmm``).
        """
        h = self.horizon if upto is None else upto
        n, log_n = self.factors(measure)
        if log_n is not None:
            w = np.exp(np.sum(log_n[:, :h], axis=1))
            return w, np.zeros(len(self), dtype=bool)
        w = np.prod(n[:, :h], axis=1)
        censored = np.any(n[:, :self.horizon] <= 0.0, axis=1)
        return w, censored


def kalman_state_var(params: ModelParams, t: int) -> float:
    """Kalman state variance after ``t`` updates (independent of the data)."""
    kc = KalmanConstants.from_params(params)
    p = kc.stationary_var
    for _ in range(t):
        pp = kc.phi * kc.phi * p + kc.var_eta
        f = pp + kc.var_xi
        k = pp / f if f > 0.0 else 0.0
        p = pp * (1.0 - k)
    return p


def state_from_b(filter_name: str, params: ModelParams, t: int, b_state: float) -> FilterState:
    """Filter state whose log-variance estimate is ``b_state`` at time ``t``."""
    if filter_name == "kalman":
        return FilterState("kalman", t, 0.5 * b_state, kalman_state_var(params, t))
    if filter_name == "hlik":
        return FilterState("hlik", t, b_state)
    raise ValueError(f"unknown filter {filter_name!r}")


def bundle_from_innovations(params, t0, s_t, b_state, state, w, eps, prob=None) -> SubpathBundle:
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    n = w.shape[0]
    b0 = np.full(n, float(b_state))
    _, y = _backend.arsv_recursion(w, eps, b0, params.r, params.gamma, params.phi, params.sigma_w)
    s = rebuild_prices(s_t, y)
    z = y - params.r
    sigma_hat = forecast_along(state, params, z)
    if prob is None:
        prob = np.full(n, 1.0 / n)
    return SubpathBundle(t0=t0, s_t=float(s_t), r=params.r, s=s, z=z,
                         sigma_hat=sigma_hat, prob=np.asarray(prob, dtype=np.float64))


def simulate_subpaths(
    params: ModelParams,
    t0: int,
    s_t: float,
    b_state: float,
    state: FilterState,
    horizon: int,
    n_mc: int,
    rng: np.random.Generator,
    sampler: Sampler | None = None,
) -> SubpathBundle:
    """Draw ``n_mc`` physical-measure sub-paths of length ``horizon``.

    The latent log-variance at ``t0`` is set to ``b_state``; the hedger's
    filter is continued from ``state`` along every sub-path.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    w, eps = (sampler or gaussian_sampler)(rng, (n_mc, horizon))
    return bundle_from_innovations(params, t0, s_t, b_state, state, w, eps)


# -- quotes ------------------------------------------------------------------

def _wmean(p, x):
    return float(np.dot(p, x) / np.sum(p))


def denominator_estimates(bundle: SubpathBundle, measure: str, j: int) -> dict:
    """Both estimators of ``E^Q[(S_{t+j} e^{-rj})^2] - S_t^2`` on one bundle."""
    w, censored = bundle.weights(measure, upto=j)
    p = np.where(censored, 0.0, bundle.prob * w)
    fwd = bundle.s[:, j] * math.exp(-bundle.r * j)
    return {
        "variance": _wmean(p, (fwd - bundle.s_t) ** 2),
        "second_moment": _wmean(p, fwd ** 2) - bundle.s_t ** 2,
    }


def quote_from_bundle(
    bundle: SubpathBundle,
    strikes: Sequence[float],
    measure: str,
    j: int,
    alt_numerator_discount: bool = False,
    centered: bool = False,
) -> list[HedgeQuote]:
    """LRM value and hedge ratio for each strike from one set of sub-paths.

    With ``centered`` the numerator uses ``H - E^Q[H]`` in place of ``H``
    (the conditional covariance form).  Both agree under an exact martingale
    measure; the centered form removes the ``K * E^Q[dS]`` noise term.

    ``alt_numerator_discount`` switches the numerator discount to ``e^{-r(T+t)}`` for
    comparison with that alternative convention; the default uses
    ``e^{-r(T-t)}``, which keeps the ratio a share count.
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    h = bundle.horizon
    if not 1 <= j <= h:
        raise ValueError(f"hedge interval j={j} must lie in 1..{h}")
    r = bundle.r
    f_full, censored = bundle.weights(measure)
    w_j, _ = bundle.weights(measure, upto=j)
    keep = ~censored
    p_full = np.where(keep, bundle.prob * f_full, 0.0)
    p_j = np.where(keep, bundle.prob * w_j, 0.0)
    if not np.any(keep):
        raise DegenerateDenominatorError("every sub-path was censored")
    ess = float(np.sum(p_full) ** 2 / np.sum(p_full ** 2))
    cens_frac = float(np.sum(bundle.prob[censored]) / np.sum(bundle.prob))

    ds = bundle.s[:, j] * math.exp(-r * j) - bundle.s_t
    denom = _wmean(p_j, ds * ds)
    if not denom > DENOM_FLOOR * bundle.s_t ** 2:
        raise DegenerateDenominatorError(f"hedging denominator {denom:g} is degenerate")
    t0 = bundle.t0
    T = t0 + h
    disc = math.exp(-r * h)
    num_disc = math.exp(-r * (T + t0)) if alt_numerator_discount else disc
    s_T = bundle.s[:, -1]
    quotes = []
    for k in strikes:
        payoff = np.maximum(s_T - k, 0.0)
        value = disc * _wmean(p_full, payoff)
        centre = _wmean(p_full, payoff) if centered else 0.0
        num = num_disc * _wmean(p_full, (payoff - centre) * ds)
        notes = []
        if ess < LOW_SAMPLE:
            notes.append(f"low effective sample size {ess:.1f}")
            warnings.warn(notes[-1], LowSampleWarning, stacklevel=2)
        quotes.append(HedgeQuote(value=value, ratio=num / denom, denom=denom,
                                 n_effective=ess, censored_fraction=cens_frac, warnings=notes))
    return quotes


def lrm_quote(
    option: OptionSpec,
    t: int,
    s_t: float,
    b_state: float,
    params: ModelParams,
    measure: str,
    filter: str,
    j: int,
    n_mc: int,
    seed: int | np.random.Generator,
    state: FilterState | None = None,
    sampler: Sampler | None = None,
    alt_numerator_discount: bool = False,
    centered: bool = False,
) -> HedgeQuote:
    """Value and ``j``-step hedge ratio of ``option`` at time ``t``.

    ``b_state`` is the filtered log-variance at ``t`` used to start the
    sub-simulation; ``state`` overrides the filter state that is otherwise
    rebuilt from ``b_state``.
    """
    T = option.maturity
    if t == T:
        return HedgeQuote(value=float(option.payoff(s_t)), ratio=0.0,
                          denom=float("nan"), n_effective=float("nan"))
    if not 0 <= t < T or t + j > T:
        raise ValueError(f"need t + j <= T (t={t}, j={j}, T={T})")
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    if not math.isfinite(b_state):
        raise ValueError("b_state must be finite")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = state or state_from_b(filter, params, t, b_state)
    bundle = simulate_subpaths(params, t, s_t, b_state, state, T - t, n_mc, rng, sampler)
    return quote_from_bundle(bundle, [option.strike], measure, j, alt_numerator_discount, centered)[0]


# -- replication -------------------------------------------------------------

@dataclass
class HedgeRun:
    """One replication of a claim along an observed price path.

    ``gains`` and ``costs`` are discounted and sampled at ``times`` plus the
    maturity (last entry).
    """

    times: np.ndarray
    ratios: np.ndarray
    values: np.ndarray
    gains: np.ndarray
    costs: np.ndarray
    terminal_error: float
    method: str
    strike: float
    maturity: int
    j: int
    measure: str | None = None
    filter: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "measure": self.measure,
            "filter": self.filter,
            "strike": self.strike,
            "maturity": self.maturity,
            "j": self.j,
            "times": [int(t) for t in self.times],
            "ratios": [float(x) for x in self.ratios],
            "values": [float(x) for x in self.values],
            "gains": [float(x) for x in self.gains],
            "costs": [float(x) for x in self.costs],
            "terminal_error": float(self.terminal_error),
            "diagnostics": self.diagnostics,
        }


def rebalance_times(maturity: int, j: int) -> np.ndarray:
    if j < 1 or maturity % j:
        raise ValueError(f"maturity {maturity} is not a multiple of the hedge interval {j}")
    return np.arange(0, maturity, j)


def replicate(
    prices,
    option: OptionSpec,
    j: int,
    values: Sequence[float],
    ratios: Sequence[float],
    method: str = "",
    undiscounted: bool = False,
    **meta,
) -> HedgeRun:
    """Self-financing replication from ``V_0`` with ratio ``ratios[i]`` held over ``(t_i, t_i + j]``.

    The terminal error is ``(H~ - V_0 - G~_T)^2`` in discounted units, or the
    same shortfall at maturity value when ``undiscounted`` is set.
    """
    T = option.maturity
    times = rebalance_times(T, j)
    prices = np.asarray(prices, dtype=np.float64)
    if len(prices) < T + 1:
        raise ValueError(f"need {T + 1} prices, got {len(prices)}")
    ratios = np.asarray(ratios, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    disc_s = prices[: T + 1] * np.exp(-option.r * np.arange(T + 1))
    increments = ratios * (disc_s[times + j] - disc_s[times])
    gains = np.concatenate(([0.0], np.cumsum(increments)))
    h_disc = float(option.payoff(prices[T])) * math.exp(-option.r * T)
    disc_values = np.concatenate((values * np.exp(-option.r * times), [h_disc]))
    costs = disc_values - gains
    shortfall = h_disc - values[0] - gains[-1]
    if undiscounted:
        shortfall *= math.exp(option.r * T)
    return HedgeRun(
        times=times, ratios=ratios, values=values, gains=gains, costs=costs,
        terminal_error=shortfall * shortfall, method=method, strike=option.strike,
        maturity=T, j=j, **meta,
    )
