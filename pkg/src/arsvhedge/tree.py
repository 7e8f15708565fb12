"""Exhaustive enumeration of small discretised ARSV trees.

Innovations take values on finite supports, so every leaf of a ``T``-step
tree can be listed with its exact probability.  The hedger's information at
time ``t`` is the price history ``S_0..S_t``; leaves that share a price
prefix belong to the same node.  On such trees the local-risk-minimising
recursions can be evaluated exactly, which gives oracles for the Monte Carlo
estimators and a numerical check of the hedge relation between the physical
and minimal martingale measures.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .filters import FilterState
from .lrm import DegenerateDenominatorError, OptionSpec, SubpathBundle, bundle_from_innovations
from .model import ModelParams, rebuild_prices

MAX_HORIZON = 4
MAX_SUPPORT = 5
SYMMETRIC_PM1 = ((-1.0, 1.0), (0.5, 0.5))


@dataclass
class ArsvTree:
    """All leaves of a discretised ARSV tree.

    ``w`` and ``eps`` are standardised innovations of shape ``(n_leaves, T)``;
    ``prob`` holds leaf probabilities and ``nodes[t]`` maps each leaf to its
    node at time ``t``.
    """

    params: ModelParams
    s0: float
    b0: float
    w: np.ndarray
    eps: np.ndarray
    prob: np.ndarray
    b: np.ndarray
    s: np.ndarray
    nodes: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.w.shape[1]

    @property
    def n_leaves(self) -> int:
        return self.w.shape[0]

    def discounted_prices(self) -> np.ndarray:
        return self.s * np.exp(-self.params.r * np.arange(self.horizon + 1))

    def n_nodes(self, t: int) -> int:
        return int(self.nodes[t].max()) + 1


def build_tree(
    params: ModelParams,
    s0: float,
    horizon: int,
    b0: float | None = None,
    eps_dist=SYMMETRIC_PM1,
    w_dist=SYMMETRIC_PM1,
) -> ArsvTree:
    """Enumerate every ``(w_t, eps_t)`` sequence over ``horizon`` steps.

    ``eps_dist`` and ``w_dist`` are ``(support, probabilities)`` pairs.
    """
    if not 1 <= horizon <= MAX_HORIZON:
        raise ValueError(f"tree horizon must lie in 1..{MAX_HORIZON}")
    (e_sup, e_p), (w_sup, w_p) = eps_dist, w_dist
    if max(len(e_sup), len(w_sup)) > MAX_SUPPORT:
        raise ValueError(f"innovation supports are limited to {MAX_SUPPORT} points")
    for p in (e_p, w_p):
        if not math.isclose(sum(p), 1.0, abs_tol=1e-12) or min(p) < 0:
            raise ValueError("support probabilities must be non-negative and sum to one")
    b0 = params.mean_b if b0 is None else float(b0)
    steps = [(w, e, pw * pe) for (w, pw) in zip(w_sup, w_p) for (e, pe) in zip(e_sup, e_p)]
    leaves = list(itertools.product(steps, repeat=horizon))
    w = np.array([[st[0] for st in leaf] for leaf in leaves], dtype=np.float64)
    eps = np.array([[st[1] for st in leaf] for leaf in leaves], dtype=np.float64)
    prob = np.array([math.prod(st[2] for st in leaf) for leaf in leaves])
    keep = prob > 0
    w, eps, prob = w[keep], eps[keep], prob[keep]
    b, y = _backend.arsv_recursion(w, eps, np.full(len(w), b0),
                                   params.r, params.gamma, params.phi, params.sigma_w)
    s = rebuild_prices(s0, y)
    nodes = [np.unique(s[:, : t + 1], axis=0, return_inverse=True)[1].ravel()
             for t in range(horizon + 1)]
    return ArsvTree(params=params, s0=float(s0), b0=b0, w=w, eps=eps, prob=prob,
                    b=b, s=s, nodes=nodes)


def _cond(tree: ArsvTree, t: int, weight: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``E[weight * x | node_t] / E[weight | node_t]`` broadcast to leaves."""
    g = tree.nodes[t]
    num = np.bincount(g, weights=weight * x)
    den = np.bincount(g, weights=weight)
    return (num / den)[g]


@dataclass
class TreeHedge:
    """Leafwise discounted values ``values[:, t]`` and ratios ``ratios[:, t] = xi_{t+1}``."""

    measure: str
    values: np.ndarray
    ratios: np.ndarray

    @property
    def v0(self) -> float:
        return float(self.values[0, 0])

    @property
    def xi1(self) -> float:
        return float(self.ratios[0, 0])


def _one_step(tree: ArsvTree, t: int, weight, v_next, ds, label: str):
    m = _cond(tree, t, weight, ds)
    ev = _cond(tree, t, weight, v_next)
    var = _cond(tree, t, weight, (ds - m) ** 2)
    s_t = tree.discounted_prices()[:, t]
    if np.any(var <= 1e-14 * s_t ** 2):
        raise DegenerateDenominatorError(f"zero conditional variance at a time-{t} node ({label})")
    cov = _cond(tree, t, weight, (v_next - ev) * (ds - m))
    xi = cov / var
    return xi, ev - xi * m, m, var


def lrm_quote_physical(option: OptionSpec, tree: ArsvTree) -> TreeHedge:
    """Exact physical-measure local risk minimisation by backward recursion."""
    _check_option(option, tree)
    st = tree.discounted_prices()
    T = tree.horizon
    values = np.empty((tree.n_leaves, T + 1))
    ratios = np.empty((tree.n_leaves, T))
    values[:, T] = option.payoff(tree.s[:, T]) * math.exp(-option.r * T)
    for t in range(T - 1, -1, -1):
        ds = st[:, t + 1] - st[:, t]
        ratios[:, t], values[:, t], _, _ = _one_step(tree, t, tree.prob, values[:, t + 1], ds, "P")
    return TreeHedge("physical", values, ratios)


def minimal_martingale_factors(tree: ArsvTree) -> np.ndarray:
    """Exact per-step factors ``N_{t+1} = 1 - m_t (dS - m_t) / v_t`` on the tree."""
    st = tree.discounted_prices()
    T = tree.horizon
    n = np.empty((tree.n_leaves, T))
    for t in range(T):
        ds = st[:, t + 1] - st[:, t]
        m = _cond(tree, t, tree.prob, ds)
        var = _cond(tree, t, tree.prob, (ds - m) ** 2)
        n[:, t] = 1.0 - m * (ds - m) / var
    return n


def lrm_quote_minimal(option: OptionSpec, tree: ArsvTree) -> TreeHedge:
    """Local risk minimisation under the exact (possibly signed) minimal martingale measure."""
    _check_option(option, tree)
    st = tree.discounted_prices()
    n = minimal_martingale_factors(tree)
    T = tree.horizon
    values = np.empty((tree.n_leaves, T + 1))
    ratios = np.empty((tree.n_leaves, T))
    values[:, T] = option.payoff(tree.s[:, T]) * math.exp(-option.r * T)
    for t in range(T - 1, -1, -1):
        ds = st[:, t + 1] - st[:, t]
        ratios[:, t], values[:, t], _, _ = _one_step(
            tree, t, tree.prob * n[:, t], values[:, t + 1], ds, "Q")
    return TreeHedge("minimal", values, ratios)


@dataclass
class HedgeRelationReport:
    xi_p: np.ndarray
    xi_q: np.ndarray
    correction: np.ndarray
    discrepancy: np.ndarray
    value_gap: float

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.discrepancy)))


def global_risk(option: OptionSpec, tree: ArsvTree, hedge: TreeHedge | None = None) -> np.ndarray:
    """``L_t = V_t - V_0 - G_t`` for the physical-measure strategy (leafwise, ``t = 0..T``)."""
    hedge = hedge or lrm_quote_physical(option, tree)
    st = tree.discounted_prices()
    gains = np.concatenate(
        (np.zeros((tree.n_leaves, 1)), np.cumsum(hedge.ratios * np.diff(st, axis=1), axis=1)), axis=1)
    return hedge.values - hedge.values[:, :1] - gains


def hedge_relation_check(option: OptionSpec, tree: ArsvTree) -> HedgeRelationReport:
    """Node-by-node residual of ``xi^Q = xi^P + E^Q[L^P dS] / var^Q[dS]``."""
    phys = lrm_quote_physical(option, tree)
    mmm = lrm_quote_minimal(option, tree)
    big_l = global_risk(option, tree, phys)
    n = minimal_martingale_factors(tree)
    st = tree.discounted_prices()
    corr = np.empty_like(phys.ratios)
    for t in range(tree.horizon):
        q = tree.prob * n[:, t]
        ds = st[:, t + 1] - st[:, t]
        mq = _cond(tree, t, q, ds)
        var_q = _cond(tree, t, q, (ds - mq) ** 2)
        corr[:, t] = _cond(tree, t, q, big_l[:, t + 1] * ds) / var_q
    disc = mmm.ratios - phys.ratios - corr
    return HedgeRelationReport(
        xi_p=phys.ratios, xi_q=mmm.ratios, correction=corr, discrepancy=disc,
        value_gap=abs(phys.v0 - mmm.v0),
    )


def tree_bundle(tree: ArsvTree, state: FilterState) -> SubpathBundle:
    """Every leaf of ``tree`` as a weighted sub-path bundle started at time ``state.t``.

    Feeding this bundle to the Monte Carlo quote routines evaluates their
    estimators exactly under the discrete innovation law.
    """
    return bundle_from_innovations(tree.params, state.t, tree.s0, tree.b0, state,
                                   tree.w, tree.eps, prob=tree.prob)


def _check_option(option: OptionSpec, tree: ArsvTree) -> None:
    if option.maturity != tree.horizon:
        raise ValueError(f"option maturity {option.maturity} differs from tree horizon {tree.horizon}")
