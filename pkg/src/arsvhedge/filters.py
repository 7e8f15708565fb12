"""Predictable one-step-ahead volatility forecasts from observed prices.

Two estimators are provided:

* ``kalman`` runs a linear Gaussian filter on ``l_t = log|y_t - r|`` treating
  ``log|eps_t|`` as Gaussian with mean ``MU_XI`` and variance ``pi^2/8``.  The
  forecast is ``sigma_hat_t = exp(E[l_t | F_{t-1}] - MU_XI)``.
* ``hlik`` alternates the AR prediction ``b_tp = gamma + phi * b_{(t-1)u}``
  with an h-likelihood update ``b_tu`` (a strictly convex scalar problem) and
  forecasts ``sigma_hat_t = exp(b_tp / 2)``.

Both consume known model parameters; nothing here estimates them.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .model import ModelParams, ParameterError, log_returns

log = logging.getLogger(__name__)

MU_XI = -0.63518
VAR_XI = math.pi ** 2 / 8.0
ABS_RETURN_FLOOR = 1e-12
HLIK_TOL = 1e-10
HLIK_MAX_ITER = 100

METHODS = ("kalman", "hlik")


class HlikConvergenceError(ArithmeticError):
    def __init__(self, message: str, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class KalmanConstants:
    mu_xi: float
    var_xi: float
    alpha_k: float
    phi: float
    var_eta: float

    @classmethod
    def from_params(cls, params: ModelParams, mu_xi: float = MU_XI, var_xi: float = VAR_XI):
        return cls(
            mu_xi=mu_xi,
            var_xi=var_xi,
            alpha_k=params.gamma / (2.0 * (1.0 - params.phi)),
            phi=params.phi,
            var_eta=params.sigma_w ** 2 / 4.0,
        )

    @property
    def stationary_var(self) -> float:
        return self.var_eta / (1.0 - self.phi ** 2)


@dataclass(frozen=True)
class FilterState:
    """What a filter knows after the returns ``y_1..y_t``.

    ``level`` is the filtered state (Kalman: mean of ``log sigma_t``; h-lik:
    the updated log-variance ``b_tu``); ``var`` is the Kalman state variance
    and unused by h-lik.
    """

    method: str
    t: int
    level: float
    var: float = 0.0

    def log_variance(self) -> float:
        """Point estimate of ``b_t = log sigma_t^2`` given ``F_t``."""
        return 2.0 * self.level if self.method == "kalman" else self.level


@dataclass
class VolForecastSeries:
    """``sigma_hat[t-1]`` is the forecast of ``sigma_t`` built from ``y_1..y_{t-1}``."""

    method: str
    sigma_hat: np.ndarray
    sigma_next: float
    aux: dict = field(default_factory=dict)
    prior: FilterState | None = None
    n_floored: int = 0

    def __len__(self) -> int:
        return len(self.sigma_hat)

    def state_at(self, t: int) -> FilterState:
        """Filter state after observing ``y_1..y_t`` (``t = 0`` is the prior)."""
        if t < 0 or t > len(self):
            raise IndexError(f"t={t} outside 0..{len(self)}")
        if t == 0:
            return self.prior
        if self.method == "kalman":
            return FilterState("kalman", t, float(self.aux["a_filt"][t - 1]),
                               float(self.aux["p_filt"][t - 1]))
        return FilterState("hlik", t, float(self.aux["b_tu"][t - 1]))

    def aux_columns(self) -> dict:
        return dict(self.aux)


# -- Kalman ------------------------------------------------------------------

def _log_abs(z, floor):
    dev = np.abs(z)
    floored = dev < floor
    return np.log(np.maximum(dev, floor)), int(np.count_nonzero(floored))


def kalman_prior(params: ModelParams, constants: KalmanConstants | None = None) -> FilterState:
    kc = constants or KalmanConstants.from_params(params)
    return FilterState("kalman", 0, kc.alpha_k, kc.stationary_var)


def kalman_filter(
    params: ModelParams,
    prices,
    floor: float = ABS_RETURN_FLOOR,
    constants: KalmanConstants | None = None,
) -> VolForecastSeries:
    """Kalman volatility forecasts for a single price series.

    The filter starts from the stationary distribution of ``log sigma_t``.
    Returns exactly equal to ``r`` make the observation singular; their
    absolute deviation is floored at ``floor`` and counted in ``n_floored``.
    """
    kc = constants or KalmanConstants.from_params(params)
    prior = kalman_prior(params, kc)
    y = log_returns(prices) if len(prices) > 1 else np.empty(0)
    l, n_floored = _log_abs(y - params.r, floor)
    if n_floored:
        log.warning("kalman_filter: %d zero excess returns floored at %g", n_floored, floor)
    a_pred, p_pred, a_filt, p_filt = _backend.kalman_run(
        l[None, :], np.array([prior.level]), prior.var,
        kc.alpha_k, kc.phi, kc.var_eta, kc.mu_xi, kc.var_xi,
    )
    a_last = a_filt[0, -1] if len(y) else prior.level
    return VolForecastSeries(
        method="kalman",
        sigma_hat=np.exp(a_pred[0]),
        sigma_next=math.exp(kc.alpha_k + kc.phi * (a_last - kc.alpha_k)),
        aux={"a_pred": a_pred[0], "p_pred": p_pred, "a_filt": a_filt[0], "p_filt": p_filt},
        prior=prior,
        n_floored=n_floored,
    )


# -- h-likelihood -------------------------------------------------------------

def _require_sigma_w(params: ModelParams) -> None:
    if not params.sigma_w > 0.0:
        raise ParameterError("the h-likelihood update needs sigma_w > 0")


def hlik_objective(b, z, b_pred, sigma_w):
    return z * z * np.exp(-b) + b + (b - b_pred) ** 2 / sigma_w ** 2


def hlik_gradient(b, z, b_pred, sigma_w):
    return -z * z * np.exp(-b) + 1.0 + 2.0 / sigma_w ** 2 * (b - b_pred)


def hlik_update(
    params: ModelParams,
    z: float,
    b_pred: float,
    tol: float = HLIK_TOL,
    max_iter: int = HLIK_MAX_ITER,
) -> float:
    """Updated log-variance: the minimiser of the one-step h-likelihood term.

    Solved by Newton's method on the gradient, safeguarded by a bracket of
    +-40 around ``b_pred`` with bisection fallback.
    """
    _require_sigma_w(params)
    b, _, conv = _backend.hlik_solve(np.float64(z), np.float64(b_pred), params.sigma_w, tol, max_iter)
    if not bool(conv):
        raise HlikConvergenceError(
            f"h-likelihood update did not converge in {max_iter} iterations", float(b))
    return float(b)


def hlik_prior(params: ModelParams) -> FilterState:
    return FilterState("hlik", 0, params.mean_b)


def hlik_filter(
    params: ModelParams,
    prices,
    tol: float = HLIK_TOL,
    max_iter: int = HLIK_MAX_ITER,
) -> VolForecastSeries:
    """h-likelihood prediction/update forecasts for a single price series."""
    _require_sigma_w(params)
    prior = hlik_prior(params)
    y = log_returns(prices) if len(prices) > 1 else np.empty(0)
    b_pred, b_upd, ok = _backend.hlik_run(
        (y - params.r)[None, :], np.array([prior.level]),
        params.gamma, params.phi, params.sigma_w, tol, max_iter,
    )
    if not ok:
        raise HlikConvergenceError("h-likelihood update did not converge", b_upd[0])
    b_last = b_upd[0, -1] if len(y) else prior.level
    return VolForecastSeries(
        method="hlik",
        sigma_hat=np.exp(0.5 * b_pred[0]),
        sigma_next=math.exp(0.5 * (params.gamma + params.phi * b_last)),
        aux={"b_tp": b_pred[0], "b_tu": b_upd[0]},
        prior=prior,
    )


def run_filter(method: str, params: ModelParams, prices) -> VolForecastSeries:
    if method == "kalman":
        return kalman_filter(params, prices)
    if method == "hlik":
        return hlik_filter(params, prices)
    raise ValueError(f"unknown filter {method!r}; expected one of {METHODS}")


def prior_state(method: str, params: ModelParams) -> FilterState:
    if method == "kalman":
        return kalman_prior(params)
    if method == "hlik":
        return hlik_prior(params)
    raise ValueError(f"unknown filter {method!r}")


def forecast_along(state: FilterState, params: ModelParams, z, floor: float = ABS_RETURN_FLOOR):
    """Continue a filter from ``state`` along a batch of excess-return paths.

    ``z`` has shape ``(n, h)`` and holds ``y - r`` for steps ``t+1..t+h``.
    Returns ``(n, h)`` forecasts; column ``k`` depends only on columns
    ``< k`` of ``z``, and column 0 is the same for every row.
    """
    z = np.asarray(z, dtype=np.float64)
    n, h = z.shape
    out = np.empty((n, h))
    if state.method == "kalman":
        kc = KalmanConstants.from_params(params)
        out[:, 0] = kc.alpha_k + kc.phi * (state.level - kc.alpha_k)
        if h > 1:
            l, _ = _log_abs(z[:, :-1], floor)
            _, _, a_filt, _ = _backend.kalman_run(
                l, np.full(n, state.level), state.var,
                kc.alpha_k, kc.phi, kc.var_eta, kc.mu_xi, kc.var_xi,
            )
            out[:, 1:] = kc.alpha_k + kc.phi * (a_filt - kc.alpha_k)
        return np.exp(out)
    if state.method == "hlik":
        _require_sigma_w(params)
        out[:, 0] = params.gamma + params.phi * state.level
        if h > 1:
            _, b_upd, ok = _backend.hlik_run(
                z[:, :-1], np.full(n, state.level),
                params.gamma, params.phi, params.sigma_w, HLIK_TOL, HLIK_MAX_ITER,
            )
            if not ok:
                raise HlikConvergenceError("h-likelihood update did not converge", b_upd)
            out[:, 1:] = params.gamma + params.phi * b_upd
        return np.exp(0.5 * out)
    raise ValueError(f"unknown filter {state.method!r}")
