"""Per-node solvers for the optimal portfolio rate.

Each internal node poses one finite-dimensional concave problem: maximise
the weighted power (or log) objective over the open set of rates keeping
every one-step wealth factor positive.  The stationarity condition is

    sum_b  w_b * dS_b * (1 + theta' dS_b)^(p-1)  =  0        (p = 0: log)

For a single asset the root is found by bisection in the log of the
binding-branch margin ``s = log min_b(1 + theta x_b)``; this keeps roots
that sit extremely close to the boundary representable and lets the
residual be evaluated without the catastrophic cancellation of forming
``1 + theta x`` directly.  For several assets a damped Newton iteration
with a fraction-to-boundary line search is used; a pseudo-inverse step
handles collinear increments (minimum-norm solution, flagged).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tree import MarketTree

DEFAULT_TOL = 1e-12
MAX_ITER = 200
EXPAND_LIMIT = -1e9


class SolverFailure(RuntimeError):
    """Raised when a node solve cannot meet its contract."""

    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


@dataclass
class NodeSolution:
    """Solution of one per-node first-order condition.

    ``boundary_flag`` is set when no interior root was found: the iterates
    ran off toward the boundary (or to infinity for one-sided increments)
    while the gradient stayed away from zero.  When the flag is clear the
    residual is at most the requested tolerance and every reported margin
    is strictly positive; ``margins`` are evaluated in the solver's
    log-margin parametrisation, so roots lying extremely close to the
    boundary are still resolved to full precision.
    """

    theta_hat: np.ndarray
    foc_residual: float
    objective_value: float
    iterations: int
    boundary_flag: bool
    margins: np.ndarray = field(default_factory=lambda: np.ones(0))
    log_margins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate: bool = False
    rank_deficient: bool = False


def _validate(weights, tol: float) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise ValueError("weights must be finite and strictly positive")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    if not tol > 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    return w


def _objective(w: np.ndarray, log_m: np.ndarray, p: float) -> float:
    if p == 0.0:
        return float(np.sum(w * log_m))
    return float(np.sign(p) * np.sum(w * np.exp(p * log_m)))


def _scalar_log_margins(r: np.ndarray, s: float) -> np.ndarray:
    """log of branch margins ``(1 - r) + r e^s`` (binding branch has r = 1).

    Branches tied with the binding one get ``s`` directly, so the margin
    stays meaningful even when ``e^s`` underflows double precision.
    """
    with np.errstate(divide="ignore"):
        out = np.log((1.0 - r) + r * np.exp(s))
    return np.where(r == 1.0, s, out)


def _solve_scalar(x: np.ndarray, w: np.ndarray, p: float, tol: float, max_iter: int) -> NodeSolution:
    e = p - 1.0
    m = x.shape[0]
    if np.all(x == 0.0):
        return NodeSolution(np.zeros(1), 0.0, _objective(w, np.zeros(m), p), 0, False,
                            np.ones(m), np.zeros(m), degenerate=True)

    r0 = float(np.sum(w * x))
    if r0 == 0.0:
        return NodeSolution(np.zeros(1), 0.0, _objective(w, np.zeros(m), p), 0, False,
                            np.ones(m), np.zeros(m))

    has_pos = np.any(x > 0.0)
    has_neg = np.any(x < 0.0)
    if not (has_pos and has_neg):
        # one-sided increments: the objective increases without bound in one
        # direction, so the iterates would run off to infinity
        scale = 1e8 / np.max(np.abs(x))
        theta = np.array([np.sign(r0) * scale])
        lm = np.log(1.0 + x * theta[0])
        with np.errstate(over="ignore"):
            res = float(abs(np.sum(w * x * np.exp(e * lm))))
        return NodeSolution(theta, res, _objective(w, lm, p), 0, True, np.exp(lm), lm)

    # binding branch: the margin that hits zero first in the root's direction
    bind = int(np.argmin(x)) if r0 > 0.0 else int(np.argmax(x))
    x_bind = x[bind]
    r = x / x_bind
    direction = np.sign(r0)

    def u(s: float) -> float:
        lm = _scalar_log_margins(r, s)
        with np.errstate(over="ignore", invalid="ignore"):
            g = np.sum(w * x * np.exp(e * lm))
        return float(direction * g)

    # u is increasing in s with u(0) > 0; expand downward to bracket the root
    iterations = 0
    hi, lo = 0.0, -1.0
    while u(lo) >= 0.0:
        hi, lo = lo, 2.0 * lo
        iterations += 1
        if lo < EXPAND_LIMIT:
            lm = _scalar_log_margins(r, lo)
            theta = np.array([np.expm1(lo) / x_bind])
            return NodeSolution(theta, abs(u(lo)), _objective(w, lm, p), iterations,
                                True, np.exp(lm), lm)

    for _ in range(max_iter):
        iterations += 1
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if u(mid) < 0.0:
            lo = mid
        else:
            hi = mid

    s = hi if abs(u(hi)) <= abs(u(lo)) else lo
    lm = _scalar_log_margins(r, s)
    margins = np.exp(lm)
    theta = np.array([np.expm1(s) / x_bind])
    residual = abs(u(s))
    flag = residual > tol
    return NodeSolution(theta, residual, _objective(w, lm, p), iterations, flag, margins, lm)


def _solve_newton(X: np.ndarray, w: np.ndarray, p: float, tol: float, max_iter: int) -> NodeSolution:
    m, d = X.shape
    if np.all(X == 0.0):
        return NodeSolution(np.zeros(d), 0.0, _objective(w, np.zeros(m), p), 0, False,
                            np.ones(m), np.zeros(m), degenerate=True)
    rank_deficient = np.linalg.matrix_rank(X, tol=1e-12) < d

    def grad_at(mar: np.ndarray) -> np.ndarray:
        return X.T @ (w * mar ** (p - 1.0))

    theta = np.zeros(d)
    margins = np.ones(m)
    grad = grad_at(margins)
    scale = np.max(np.abs(X))
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) <= tol:
            break
        hess = (p - 1.0) * X.T @ (X * (w * margins ** (p - 2.0))[:, None])
        step = -np.linalg.pinv(hess, rcond=1e-13) @ grad
        if float(grad @ step) <= 0.0:
            step = grad / max(np.linalg.norm(grad), 1.0)  # ascent fallback
        dz = X @ step
        neg = dz < 0.0
        t = 1.0
        if np.any(neg):
            t = min(1.0, 0.9995 * float(np.min(-margins[neg] / dz[neg])))
        base = _objective(w, np.log(margins), p)
        gnorm = np.linalg.norm(grad)
        accepted = False
        for _ in range(60):
            cand = theta + t * step
            mc = 1.0 + X @ cand
            if np.min(mc) > 0.0:
                gc = grad_at(mc)
                if (np.linalg.norm(gc) < gnorm
                        or _objective(w, np.log(mc), p) >= base + 1e-4 * t * float(grad @ step)):
                    theta, margins, grad = cand, mc, gc
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        if np.linalg.norm(theta) > 1e8 / max(scale, 1e-300):
            break

    log_m = np.log(margins)
    residual = float(np.linalg.norm(grad_at(margins)))
    flag = residual > tol
    return NodeSolution(theta, residual, _objective(w, log_m, p), it, flag, margins, log_m,
                        rank_deficient=rank_deficient)


def solve_node_foc(increments, weights, p: float, tol: float = DEFAULT_TOL,
                   max_iter: int = MAX_ITER) -> NodeSolution:
    """Solve the stationarity condition for one node (``p = 0`` is the log case)."""
    if not p < 1.0:
        raise ValueError(f"p must be < 1, got {p}")
    w = _validate(weights, tol)
    X = np.asarray(increments, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != w.shape[0]:
        raise ValueError("one weight per branch increment is required")
    if X.shape[1] == 1:
        return _solve_scalar(X[:, 0], w, p, tol, max_iter)
    return _solve_newton(X, w, p, tol, max_iter)


def _node_increments(tree: MarketTree, node) -> np.ndarray:
    depth, index = node
    return tree.delta_S[depth + 1][tree.children(depth, index)]


def solve_power_foc(tree: MarketTree, node, p: float, weights, tol: float = DEFAULT_TOL) -> NodeSolution:
    """Optimal rate at a node for the power utility under the given branch weights."""
    if p == 0.0:
        raise ValueError("p = 0 is the log case; use solve_log_foc")
    return solve_node_foc(_node_increments(tree, node), weights, p, tol)


def solve_log_foc(tree: MarketTree, node, weights, tol: float = DEFAULT_TOL) -> NodeSolution:
    """Optimal rate at a node for the log utility under the given branch weights."""
    return solve_node_foc(_node_increments(tree, node), weights, 0.0, tol)


# -- binomial closed forms ----------------------------------------------------


def _validate_binomial(xi_u: float, xi_d: float, s_prev: float, q_up: float):
    if not xi_u > 1.0:
        raise ValueError(f"xi_u must be > 1, got {xi_u}")
    if not 0.0 < xi_d < 1.0:
        raise ValueError(f"xi_d must be in (0, 1), got {xi_d}")
    if not s_prev > 0.0:
        raise ValueError(f"s_prev must be positive, got {s_prev}")
    if not 0.0 < q_up < 1.0:
        raise ValueError(f"q_up must be in (0, 1), got {q_up}")


def binomial_power_closed_form(xi_u: float, xi_d: float, s_prev: float, q_up: float,
                               p: float) -> tuple[float, float]:
    """Closed-form optimal rate for one binomial step of the power utility.

    Returns ``(theta_hat, gamma)`` where
    ``gamma = ((xi_u - 1) q / ((1 - xi_d) (1 - q)))^(1/(1-p))`` and
    ``theta_hat = (gamma - 1) / ((xi_u - 1 + gamma (1 - xi_d)) * s_prev)``,
    computed through logs so extreme ``gamma`` cannot overflow the rate.
    """
    _validate_binomial(xi_u, xi_d, s_prev, q_up)
    if p == 0.0 or not p < 1.0:
        raise ValueError(f"power closed form needs p < 1, p != 0, got {p}")
    log_ratio = np.log((xi_u - 1.0) * q_up) - np.log((1.0 - xi_d) * (1.0 - q_up))
    log_gamma = log_ratio / (1.0 - p)
    with np.errstate(over="ignore"):
        gamma = float(np.exp(log_gamma))
    if log_gamma <= 0.0:
        theta = (gamma - 1.0) / ((xi_u - 1.0 + gamma * (1.0 - xi_d)) * s_prev)
    else:
        inv = float(np.exp(-log_gamma))
        theta = (1.0 - inv) / (((xi_u - 1.0) * inv + (1.0 - xi_d)) * s_prev)
    return float(theta), gamma


def binomial_log_closed_form(xi_u: float, xi_d: float, s_prev: float, q_up: float) -> float:
    """Closed-form optimal rate for one binomial step of the log utility."""
    _validate_binomial(xi_u, xi_d, s_prev, q_up)
    return ((xi_u - 1.0) * q_up - (1.0 - xi_d) * (1.0 - q_up)) / (
        (xi_u - 1.0) * (1.0 - xi_d) * s_prev
    )
