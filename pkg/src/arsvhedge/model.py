"""The standard ARSV data-generating process.

Log-returns and latent log-variances follow

    y_t = r + sigma_t * eps_t,            eps_t ~ N(0, 1)
    b_t = gamma + phi * b_{t-1} + w_t,    w_t ~ N(0, sigma_w^2)

with ``b_t = log sigma_t^2`` and prices ``S_t = S_{t-1} exp(y_t)``.  One step
is one trading day.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _backend
from .rng import EVAL_PATHS, substream

STEPS_PER_YEAR = 252


class ParameterError(ValueError):
    """Model parameters outside their admissible domain."""


@dataclass(frozen=True)
class ModelParams:
    r: float
    gamma: float
    phi: float
    sigma_w: float

    def __post_init__(self):
        for name in ("r", "gamma", "phi", "sigma_w"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if not abs(self.phi) < 1.0:
            raise ParameterError(f"|phi| must be < 1 for stationarity, got {self.phi}")
        if self.sigma_w < 0.0:
            raise ParameterError(f"sigma_w must be >= 0, got {self.sigma_w}")

    @property
    def mean_b(self) -> float:
        return self.gamma / (1.0 - self.phi)

    @property
    def var_b(self) -> float:
        """Marginal variance of the stationary log-variance process."""
        return self.sigma_w ** 2 / (1.0 - self.phi ** 2)

    def shifted(self, **changes) -> "ModelParams":
        values = {k: getattr(self, k) for k in ("r", "gamma", "phi", "sigma_w")}
        values.update(changes)
        return ModelParams(**values)


#: Parameters of the price-generating process used in the hedging experiments.
DEFAULT_PARAMS = ModelParams(r=0.1 / 252, gamma=-0.821, phi=0.9, sigma_w=0.675)


@dataclass(frozen=True)
class StationaryMoments:
    var_y: float
    kurtosis_y: float
    mean_b: float
    var_b: float
    annualized_vol: float

    def as_dict(self) -> dict:
        return {
            "var_y": self.var_y,
            "kurtosis_y": self.kurtosis_y,
            "mean_b": self.mean_b,
            "var_b": self.var_b,
            "annualized_vol": self.annualized_vol,
        }


def stationary_moments(params: ModelParams) -> StationaryMoments:
    """Closed-form marginal moments of the stationary return process."""
    var_b = params.var_b
    var_y = math.exp(params.mean_b + 0.5 * var_b)
    return StationaryMoments(
        var_y=var_y,
        kurtosis_y=3.0 * math.exp(var_b),
        mean_b=params.mean_b,
        var_b=var_b,
        annualized_vol=math.sqrt(STEPS_PER_YEAR * var_y),
    )


def acf_squared_approx(params: ModelParams, lag: int) -> float:
    """Approximate lag-``lag`` autocorrelation of squared returns."""
    if lag < 1:
        raise ValueError("lag must be >= 1")
    e = math.exp(params.var_b)
    return (e - 1.0) / (3.0 * e - 1.0) * params.phi ** lag


def acf_squared_exact(params: ModelParams, lag: int) -> float:
    """Exact lag-``lag`` autocorrelation of squared centred returns.

    ``(exp(var_b * phi^lag) - 1) / (3 exp(var_b) - 1)``; the approximation
    above is its first-order expansion in ``var_b * phi^lag``.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    return math.expm1(params.var_b * params.phi ** lag) / (3.0 * math.exp(params.var_b) - 1.0)


def gaussian_cumulant(z):
    """Log moment generating function of a standard normal, ``z**2 / 2``."""
    return 0.5 * np.square(z) if isinstance(z, np.ndarray) else 0.5 * z * z


def conditional_price_moments(s_prev, sigma_hat):
    """Conditional mean and variance of the next discounted price change.

    The conditional cumulants are approximated from a volatility estimate:
    ``K(sigma) ~ sigma_hat**2 / 2`` and ``K(2 sigma) ~ 2 sigma_hat**2``.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if np.any(sigma_hat <= 0):
        raise ValueError("sigma_hat must be positive")
    k1 = 0.5 * sigma_hat ** 2
    k2 = 2.0 * sigma_hat ** 2
    mean = s_prev * np.expm1(k1)
    # e^{k2} - e^{2 k1} without cancellation
    var = np.square(s_prev) * np.exp(2.0 * k1) * np.expm1(k2 - 2.0 * k1)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def rebuild_prices(s0, y):
    """Prices ``S_t = S_{t-1} exp(y_t)`` accumulated left to right.

    ``y`` may be 1-D (one path) or 2-D (paths along axis 0).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        return np.multiply.accumulate(np.concatenate(([float(s0)], np.exp(y))))
    s0 = np.broadcast_to(np.asarray(s0, dtype=np.float64), (y.shape[0],))
    growth = np.concatenate((s0[:, None], np.exp(y)), axis=1)
    return np.multiply.accumulate(growth, axis=1)


def log_returns(prices) -> np.ndarray:
    prices = np.asarray(prices, dtype=np.float64)
    if np.any(prices <= 0):
        raise ValueError("prices must be positive")
    return np.log(prices[..., 1:] / prices[..., :-1])


@dataclass
class MarketPath:
    """One simulated trajectory.  Index ``t-1`` of the step arrays is time ``t``."""

    s0: float
    b: np.ndarray
    sigma: np.ndarray
    y: np.ndarray
    s: np.ndarray
    eps: np.ndarray
    w: np.ndarray
    r: float
    b0: float = float("nan")

    @property
    def horizon(self) -> int:
        return len(self.y)

    def discounted_prices(self) -> np.ndarray:
        return self.s * np.exp(-self.r * np.arange(len(self.s)))

    def to_csv(self, path) -> None:
        write_path_csv(self, path)


@dataclass
class MarketPaths:
    """A batch of paths stored as ``(n_paths, horizon)`` arrays."""

    s0: float
    b0: np.ndarray
    b: np.ndarray
    y: np.ndarray
    s: np.ndarray
    eps: np.ndarray
    w: np.ndarray
    r: float
    seed: int | None = None
    sigma: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sigma = np.exp(0.5 * self.b)

    def __len__(self) -> int:
        return self.b.shape[0]

    @property
    def horizon(self) -> int:
        return self.b.shape[1]

    def __getitem__(self, i: int) -> MarketPath:
        return MarketPath(
            s0=self.s0, b=self.b[i], sigma=self.sigma[i], y=self.y[i], s=self.s[i],
            eps=self.eps[i], w=self.w[i], r=self.r, b0=float(self.b0[i]),
        )

    def __iter__(self) -> Iterator[MarketPath]:
        for i in range(len(self)):
            yield self[i]

    def discounted_prices(self) -> np.ndarray:
        return self.s * np.exp(-self.r * np.arange(self.s.shape[1]))


def draw_innovations(rng: np.random.Generator, horizon: int):
    """Volatility then return innovations, both standard normal."""
    w = rng.standard_normal(horizon)
    eps = rng.standard_normal(horizon)
    return w, eps


def simulate_paths(
    params: ModelParams,
    s0: float,
    horizon: int,
    n_paths: int,
    seed: int,
    b_init: float | None = None,
    first_path: int = 0,
    stream_tag: int = EVAL_PATHS,
) -> MarketPaths:
    """Simulate ``n_paths`` independent ARSV paths.

    Path ``i`` draws from the substream ``(seed, stream_tag, first_path + i)``
    so any subset of paths can be regenerated on its own.  The latent
    log-variance starts at the stationary mean unless ``b_init`` is given.
    """
    if horizon < 1 or n_paths < 1:
        raise ValueError("horizon and n_paths must be >= 1")
    if s0 <= 0:
        raise ValueError("s0 must be positive")
    b0 = params.mean_b if b_init is None else float(b_init)
    w = np.empty((n_paths, horizon))
    eps = np.empty((n_paths, horizon))
    for i in range(n_paths):
        w[i], eps[i] = draw_innovations(substream(seed, stream_tag, first_path + i), horizon)
    b0_arr = np.full(n_paths, b0)
    b, y = _backend.arsv_recursion(w, eps, b0_arr, params.r, params.gamma, params.phi, params.sigma_w)
    s = rebuild_prices(s0, y)
    return MarketPaths(s0=float(s0), b0=b0_arr, b=b, y=y, s=s, eps=eps, w=w, r=params.r, seed=seed)


# -- CSV interchange ---------------------------------------------------------

PATH_COLUMNS = ("t", "b", "sigma", "y", "s")


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def write_path_csv(path: MarketPath, dest) -> None:
    """Write ``t, b, sigma, y, s`` rows for ``t = 0..T`` (``y`` blank at 0)."""
    dest = Path(dest)
    with dest.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(PATH_COLUMNS)
        wr.writerow([0, _fmt(path.b0), _fmt(math.exp(0.5 * path.b0)), "", _fmt(path.s0)])
        for t in range(1, path.horizon + 1):
            wr.writerow([t, _fmt(path.b[t - 1]), _fmt(path.sigma[t - 1]),
                         _fmt(path.y[t - 1]), _fmt(path.s[t])])


def _float(cell: str) -> float:
    return float(cell) if cell.strip() else float("nan")


def read_path_csv(src, r: float) -> MarketPath:
    """Inverse of :func:`write_path_csv`; ``eps`` is recovered as ``(y - r)/sigma``."""
    with Path(src).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{src}: no rows")
    missing = set(PATH_COLUMNS) - set(rows[0])
    if missing:
        raise ValueError(f"{src}: missing columns {sorted(missing)}")
    b = np.array([_float(row["b"]) for row in rows[1:]])
    y = np.array([_float(row["y"]) for row in rows[1:]])
    s = np.array([_float(row["s"]) for row in rows])
    sigma = np.array([_float(row["sigma"]) for row in rows[1:]])
    return MarketPath(
        s0=s[0], b=b, sigma=sigma, y=y, s=s, eps=(y - r) / sigma,
        w=np.full(len(y), np.nan), r=r, b0=_float(rows[0]["b"]),
    )


def read_prices_csv(src) -> np.ndarray:
    """Price column (``s`` or ``price``) of a CSV file, in row order."""
    with Path(src).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        key = "s" if "s" in cols else "price" if "price" in cols else None
        if key is None:
            raise ValueError(f"{src}: expected a 's' or 'price' column, got {cols}")
        prices = np.array([float(row[key]) for row in reader])
    if len(prices) == 0:
        raise ValueError(f"{src}: no prices")
    if np.any(~np.isfinite(prices)) or np.any(prices <= 0):
        raise ValueError(f"{src}: prices must be positive and finite")
    return prices
