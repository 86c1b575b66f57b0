"""Scalar and per-node kernels shared by every solver.

The divergence kernel ``f_q``, the tail kernel ``K_p``, the convex
functional ``phi_p`` and the per-node objectives for the power and log
utilities, plus the portfolio <-> portfolio-rate correspondence.  All
kernels are pure functions; out-of-domain arguments map to IEEE
infinities (never NaN), so the extended-real contracts stay testable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import AdaptedProcess, MarketTree, PredictableProcess

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class RiskAversion:
    """Risk-aversion parameter ``p < 1`` with its conjugate ``q = p/(p-1)``.

    ``p = 0`` is the log case and is never passed to power kernels;
    ``p = 1`` is rejected outright.
    """

    p: float

    def __post_init__(self):
        if not self.p < 1.0:
            raise ValueError(f"p must be < 1, got {self.p}")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def kind(self) -> str:
        return "log" if self.p == 0.0 else "power"


def f_q(q: float, x):
    """Order-``q`` divergence kernel.

    ``((1+x)^q - 1 - q x) / (q (q-1))`` for ``q`` outside ``{0, 1}`` and
    ``x > -1``; ``x - log(1+x)`` at ``q = 0``; ``(1+x) log(1+x) - x`` at
    ``q = 1`` (defined on ``x >= -1``); ``+inf`` otherwise.  Nonnegative
    everywhere, zero only at ``x = 0``.
    """
    arr = np.asarray(x, dtype=float)
    out = np.full(arr.shape, np.inf)
    if q == 0.0:
        ok = arr > -1.0
        out[ok] = arr[ok] - np.log1p(arr[ok])
    elif q == 1.0:
        ok = arr >= -1.0
        v = arr[ok]
        vals = np.full(v.shape, 1.0)  # limit value at x = -1
        inner = v > -1.0
        vals[inner] = (1.0 + v[inner]) * np.log1p(v[inner]) - v[inner]
        out[ok] = vals
    else:
        ok = arr > -1.0
        v = arr[ok]
        out[ok] = (np.expm1(q * np.log1p(v)) - q * v) / (q * (q - 1.0))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def K_p(p: float, y):
    """Tail kernel ``y (1 - (1+y)^(p-1))`` on ``y > -1``; ``+inf`` below."""
    arr = np.asarray(y, dtype=float)
    out = np.full(arr.shape, np.inf)
    ok = arr > -1.0
    v = arr[ok]
    out[ok] = -v * np.expm1((p - 1.0) * np.log1p(v))
    return float(out) if np.isscalar(y) or arr.ndim == 0 else out


def phi_p(p: float, b, c, F, lam) -> float:
    """Convex functional ``lam'b/(p-1) + lam'c lam/2 + sum w_i f_p(lam'x_i)``.

    ``F`` is a discrete measure given as ``(weight, x)`` pairs; ``c`` must
    be a symmetric PSD matrix.  Value is ``+inf`` as soon as any ``f_p``
    term is.
    """
    if p == 1.0:
        raise ValueError("p = 1 is excluded")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if not np.allclose(c, c.T, atol=1e-12, rtol=0.0):
        raise ValueError("c must be symmetric")
    total = float(lam @ b) / (p - 1.0) + 0.5 * float(lam @ c @ lam)
    for w, xv in F:
        total += float(w) * f_q(p, float(lam @ np.atleast_1d(xv)))
        if np.isinf(total):
            return np.inf
    return total


def _node_margins(tree: MarketTree, node, lam) -> np.ndarray:
    depth, index = node
    sl = tree.children(depth, index)
    inc = tree.delta_S[depth + 1][sl]
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return 1.0 + inc @ lam


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0.0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError("weights must be positive and sum to 1")
    return w


def psi_power(tree: MarketTree, node, p: float, weights, lam) -> float:
    """Per-node power objective ``sign(p) * sum_b w_b (1 + lam'dS_b)^p``.

    The optimal rate maximises this over the admissible set; equivalently
    its negative is the convex objective the solver minimises.  Returns
    ``+inf`` off the admissible set (for ``0 < p < 1`` the finite extension
    on the closure is used, with ``0^p = 0``).
    """
    if p == 0.0 or p >= 1.0:
        raise ValueError(f"power objective needs p < 1, p != 0, got {p}")
    w = _check_weights(weights)
    m = _node_margins(tree, node, lam)
    if p < 0.0:
        if np.min(m) <= 0.0:
            return np.inf
    elif np.min(m) < 0.0:
        return np.inf
    return float(np.sign(p) * np.sum(w * np.power(m, p)))


def y_log(tree: MarketTree, node, weights, lam) -> float:
    """Per-node log objective ``sum_b w_b log(1 + lam'dS_b)``; concave.

    ``-inf`` off the admissible set.
    """
    w = _check_weights(weights)
    m = _node_margins(tree, node, lam)
    if np.min(m) <= 0.0:
        return -np.inf
    return float(np.sum(w * np.log(m)))


# -- wealth and the portfolio <-> portfolio-rate correspondence --------------


def _theta_rows(theta: PredictableProcess, depth: int, d: int) -> np.ndarray:
    v = theta.values[depth]
    return v.reshape(v.shape[0], d) if d > 1 or v.ndim > 1 else v.reshape(-1, 1)


def wealth_process(x0: float, theta: PredictableProcess, tree: MarketTree) -> AdaptedProcess:
    """Multiplicative wealth ``x0 * prod(1 + theta'dS)`` along every path.

    Raises if some one-step factor is not strictly positive (the rate left
    the admissible set), naming the offending node.
    """
    if not x0 > 0.0:
        raise ValueError(f"x0 must be positive, got {x0}")
    d = tree.n_assets
    vals = [np.full(1, float(x0))]
    for j in range(1, tree.horizon + 1):
        th = _theta_rows(theta, j - 1, d)[tree.parent[j]]
        factors = 1.0 + np.sum(th * tree.delta_S[j], axis=1)
        bad = np.nonzero(factors <= 0.0)[0]
        if bad.size:
            raise ValueError(
                f"wealth factor {factors[bad[0]]!r} <= 0 at node ({j},{bad[0]})"
                f" (path {tree.path_to(j, int(bad[0]))})"
            )
        vals.append(vals[j - 1][tree.parent[j]] * factors)
    return AdaptedProcess(tree, vals)


def rate_to_portfolio(x0: float, theta: PredictableProcess, tree: MarketTree) -> PredictableProcess:
    """Positions ``pi = (wealth at the node) * theta``; inverse of
    :func:`portfolio_to_rate`."""
    W = wealth_process(x0, theta, tree)
    d = tree.n_assets
    out = []
    for j in range(tree.horizon):
        pi = W.values[j][:, None] * _theta_rows(theta, j, d)
        out.append(pi[:, 0] if d == 1 else pi)
    return PredictableProcess(tree, out)


def portfolio_to_rate(x0: float, pi: PredictableProcess, tree: MarketTree) -> PredictableProcess:
    """Rates ``theta = pi / (x0 + gains so far)``; requires the additive
    wealth ``x0 + (pi . S)`` to stay strictly positive on every path."""
    if not x0 > 0.0:
        raise ValueError(f"x0 must be positive, got {x0}")
    d = tree.n_assets
    wealth = [np.full(1, float(x0))]
    for j in range(1, tree.horizon + 1):
        rows = _theta_rows(pi, j - 1, d)[tree.parent[j]]
        w = wealth[j - 1][tree.parent[j]] + np.sum(rows * tree.delta_S[j], axis=1)
        bad = np.nonzero(w <= 0.0)[0]
        if bad.size:
            raise ValueError(
                f"wealth {w[bad[0]]!r} <= 0 at node ({j},{bad[0]})"
                f" (path {tree.path_to(j, int(bad[0]))})"
            )
        wealth.append(w)
    out = []
    for j in range(tree.horizon):
        rows = _theta_rows(pi, j, d)
        th = rows / wealth[j][:, None]
        out.append(th[:, 0] if d == 1 else th)
    return PredictableProcess(tree, out)
