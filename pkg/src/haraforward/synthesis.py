"""Backward-recursion synthesis of HARA forward utilities on a tree.

Power case: given the terminal coefficient ``D(T)`` with ``p * D(T) > 0``,
each step solves the node stationarity condition under branch weights
proportional to ``prob * D(child)`` and then rolls the coefficient back via

    D(j-1) = E[ D(j) (1 + theta' dS_j)^p | F_{j-1} ].

Log case: ``D_hat`` is closed backward as a martingale, the rate solves the
log stationarity condition under ``prob * D_hat(child)`` weights, and
``D_bar`` rolls back so that ``D_hat log(wealth) + D_bar`` is a martingale
along the optimal wealth.

Both recursions also return the multiplicative decomposition of the
coefficient process: a positive martingale part ``Z_D`` and a predictable
exponent ``a_D`` with ``D = D(0) * Z_D * exp(a_D)`` node by node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import RiskAversion
from .optimizer import DEFAULT_TOL, NodeSolution, SolverFailure, solve_node_foc
from .tree import AdaptedProcess, MarketTree, PredictableProcess
from .verifier import RandomFieldUtility

MARTINGALE_TOL = 1e-12


@dataclass(frozen=True)
class HaraSpec:
    """Terminal data pinning one HARA forward utility.

    Power: ``terminal_D`` (scalar or per-leaf), same sign as ``p``.
    Log: strictly positive ``terminal_D_hat`` and free ``terminal_D_bar``.
    """

    risk_aversion: RiskAversion
    terminal_D: object = None
    terminal_D_hat: object = None
    terminal_D_bar: object = None

    @classmethod
    def power(cls, p: float, terminal_D) -> "HaraSpec":
        ra = RiskAversion(p)
        if ra.kind != "power":
            raise ValueError("p = 0 is the log case; use HaraSpec.log")
        return cls(ra, terminal_D=terminal_D)

    @classmethod
    def log(cls, terminal_D_hat, terminal_D_bar=0.0) -> "HaraSpec":
        return cls(RiskAversion(0.0), terminal_D_hat=terminal_D_hat,
                   terminal_D_bar=terminal_D_bar)


@dataclass
class ForwardUtilityResult:
    """Synthesized forward utility with per-node diagnostics.

    ``a_D`` holds the cumulative predictable exponent for the step out of
    each internal node, so ``D(node) = D(0) * Z_D(node) * exp(a_D(parent))``.
    For the log case the analogous decomposition of ``D_bar`` into a
    martingale plus its cumulative predictable part is reported instead.
    """

    kind: str
    p: float
    theta_hat: PredictableProcess
    node_solutions: list
    Z_D: AdaptedProcess
    a_D: PredictableProcess
    D: AdaptedProcess | None = None
    D_hat: AdaptedProcess | None = None
    D_bar: AdaptedProcess | None = None
    d_bar_predictable: PredictableProcess | None = None
    d_bar_martingale: AdaptedProcess | None = None

    def branch_log_margins(self, step: int) -> np.ndarray:
        """log(1 + theta' dS) on every branch into depth ``step + 1``, as
        computed by the node solver (stable even for near-boundary rates)."""
        return np.concatenate([s.log_margins for s in self.node_solutions[step]])


def _terminal_array(tree: MarketTree, value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(tree.n_nodes(tree.horizon), float(arr))
    if arr.shape != (tree.n_nodes(tree.horizon),):
        raise ValueError(f"{name}: expected a scalar or one value per leaf")
    return arr


def _cumulate(tree: MarketTree, increments: list[np.ndarray]) -> PredictableProcess:
    """Running sum of per-step increments along each path (predictable)."""
    cum = [increments[0].copy()]
    for k in range(1, tree.horizon):
        cum.append(cum[k - 1][tree.parent[k]] + increments[k])
    return PredictableProcess(tree, cum)


def _solve_depth(tree: MarketTree, j: int, coeff_child: np.ndarray, p: float,
                 tol: float) -> tuple[list[NodeSolution], np.ndarray, np.ndarray]:
    """Solve every node at depth ``j-1``; returns solutions, theta rows and
    the one-step expectations ``E[coeff * margins^p | node]``."""
    n = tree.n_nodes(j - 1)
    d = tree.n_assets
    sols: list[NodeSolution] = []
    theta = np.zeros((n, d))
    rolled = np.zeros(n)
    bounds = tree.child_slice[j - 1]
    for i in range(n):
        sl = slice(int(bounds[i]), int(bounds[i + 1]))
        pb = tree.prob[j][sl]
        cc = coeff_child[sl]
        raw = pb * cc
        total = raw.sum()
        sol = solve_node_foc(tree.delta_S[j][sl], raw / total, p, tol)
        if sol.boundary_flag:
            raise SolverFailure(
                f"no interior optimal rate at node ({j - 1},{i})", node=(j - 1, i)
            )
        sols.append(sol)
        theta[i] = sol.theta_hat
        if p == 0.0:
            rolled[i] = total  # martingale closure for the log coefficient
        else:
            rolled[i] = float(np.sum(raw * np.exp(p * sol.log_margins)))
    return sols, theta, rolled


def _doob_parts(tree: MarketTree, D: list[np.ndarray]) -> tuple[AdaptedProcess, PredictableProcess]:
    z_vals = [np.ones(1)]
    incs = []
    for j in range(1, tree.horizon + 1):
        cond = np.add.reduceat(tree.prob[j] * D[j], tree.child_slice[j - 1][:-1])
        incs.append(np.log(cond / D[j - 1]))
        z_vals.append(z_vals[j - 1][tree.parent[j]] * D[j] / cond[tree.parent[j]])
    return AdaptedProcess(tree, z_vals), _cumulate(tree, incs)


def synthesize_power(tree: MarketTree, spec: HaraSpec, tol: float = DEFAULT_TOL) -> ForwardUtilityResult:
    """Backward recursion for the power forward utility ``D(t) x^p``."""
    p = spec.risk_aversion.p
    if spec.risk_aversion.kind != "power":
        raise ValueError("spec carries log terminal data; use synthesize_log")
    D_T = _terminal_array(tree, spec.terminal_D, "terminal_D")
    if np.any(np.sign(p) * D_T <= 0.0):
        bad = int(np.argmax(np.sign(p) * D_T <= 0.0))
        raise ValueError(
            f"terminal_D must have the sign of p at every leaf; "
            f"leaf {bad} holds {D_T[bad]!r} with p = {p}"
        )
    D: list[np.ndarray] = [None] * (tree.horizon + 1)
    D[tree.horizon] = D_T
    thetas: list[np.ndarray] = [None] * tree.horizon
    sols: list[list[NodeSolution]] = [None] * tree.horizon
    for j in range(tree.horizon, 0, -1):
        sols[j - 1], theta, D[j - 1] = _solve_depth(tree, j, D[j], p, tol)
        thetas[j - 1] = theta[:, 0] if tree.n_assets == 1 else theta
    z_d, a_d = _doob_parts(tree, D)
    return ForwardUtilityResult(
        kind="power", p=p, D=AdaptedProcess(tree, D),
        theta_hat=PredictableProcess(tree, thetas),
        node_solutions=sols, Z_D=z_d, a_D=a_d,
    )


def synthesize_log(tree: MarketTree, spec: HaraSpec, tol: float = DEFAULT_TOL) -> ForwardUtilityResult:
    """Backward recursion for the log forward utility ``D_hat(t) log x + D_bar(t)``."""
    if spec.risk_aversion.kind != "log":
        raise ValueError("spec carries power terminal data; use synthesize_power")
    dh_T = _terminal_array(tree, spec.terminal_D_hat, "terminal_D_hat")
    if np.any(dh_T <= 0.0):
        bad = int(np.argmax(dh_T <= 0.0))
        raise ValueError(f"terminal_D_hat must be positive; leaf {bad} holds {dh_T[bad]!r}")
    db_T = _terminal_array(tree, spec.terminal_D_bar, "terminal_D_bar")

    T = tree.horizon
    dh: list[np.ndarray] = [None] * (T + 1)
    db: list[np.ndarray] = [None] * (T + 1)
    dh[T], db[T] = dh_T, db_T
    thetas: list[np.ndarray] = [None] * T
    sols: list[list[NodeSolution]] = [None] * T
    pred_inc: list[np.ndarray] = [None] * T
    for j in range(T, 0, -1):
        sols[j - 1], theta, dh[j - 1] = _solve_depth(tree, j, dh[j], 0.0, tol)
        thetas[j - 1] = theta[:, 0] if tree.n_assets == 1 else theta
        starts = tree.child_slice[j - 1][:-1]
        log_m = np.concatenate([s.log_margins for s in sols[j - 1]])
        gain = np.add.reduceat(tree.prob[j] * dh[j] * log_m, starts)
        db[j - 1] = np.add.reduceat(tree.prob[j] * db[j], starts) + gain
        pred_inc[j - 1] = -gain
    pred = _cumulate(tree, pred_inc)
    mart = [db[0].copy()]
    for j in range(1, T + 1):
        mart.append(db[j] - pred.values[j - 1][tree.parent[j]])
    z_vals = [dh[j] / dh[0][0] for j in range(T + 1)]
    return ForwardUtilityResult(
        kind="log", p=0.0,
        D_hat=AdaptedProcess(tree, dh), D_bar=AdaptedProcess(tree, db),
        theta_hat=PredictableProcess(tree, thetas),
        node_solutions=sols,
        Z_D=AdaptedProcess(tree, z_vals),
        a_D=PredictableProcess(tree, [np.zeros(tree.n_nodes(j)) for j in range(T)]),
        d_bar_predictable=pred,
        d_bar_martingale=AdaptedProcess(tree, mart),
    )


def binomial_a_D(tree: MarketTree, spec: HaraSpec, result: ForwardUtilityResult) -> PredictableProcess:
    """Closed-form cumulative predictable exponent on a binomial tree.

    Evaluates, per step, ``-log((gamma^(p-1) Q_u + Q_d) (xi_u - xi_d)^(p-1)
    / (xi_u - 1 + gamma (1 - xi_d))^(p-1))`` with the up/down conditional
    probabilities taken under the measure of the martingale part of ``D``,
    and accumulates along paths.  Must agree with the recursion's ``a_D``.
    """
    if result.kind != "power":
        raise ValueError("closed form applies to power results")
    p = result.p
    incs = []
    for k in range(tree.horizon):
        j = k + 1
        bounds = tree.child_slice[k]
        n = tree.n_nodes(k)
        inc = np.zeros(n)
        for i in range(n):
            sl = slice(int(bounds[i]), int(bounds[i + 1]))
            if sl.stop - sl.start != 2 or tree.n_assets != 1:
                raise ValueError("closed form requires a binomial tree")
            dS = tree.delta_S[j][sl][:, 0]
            pb = tree.prob[j][sl]
            Dc = result.D.values[j][sl]
            up, dn = (0, 1) if dS[0] > dS[1] else (1, 0)
            s_prev = tree.S[k][i, 0]
            xi_u = 1.0 + dS[up] / s_prev
            xi_d = 1.0 + dS[dn] / s_prev
            cond = float(pb[up] * Dc[up] + pb[dn] * Dc[dn])
            q_u = pb[up] * Dc[up] / cond
            q_d = pb[dn] * Dc[dn] / cond
            log_ratio = np.log((xi_u - 1.0) * q_u) - np.log((1.0 - xi_d) * q_d)
            log_gamma = log_ratio / (1.0 - p)
            gamma_pm1 = np.exp(-log_ratio)  # gamma^(p-1)
            if log_gamma > 0.0:
                log_den = log_gamma + np.log(1.0 - xi_d) + np.log1p(
                    (xi_u - 1.0) * np.exp(-log_gamma) / (1.0 - xi_d))
            else:
                log_den = np.log(xi_u - 1.0) + np.log1p(
                    np.exp(log_gamma) * (1.0 - xi_d) / (xi_u - 1.0))
            inc[i] = -(np.log(gamma_pm1 * q_u + q_d)
                       + (p - 1.0) * (np.log(xi_u - xi_d) - log_den))
        incs.append(inc)
    return _cumulate(tree, incs)


def transform_under_density(result, Z: AdaptedProcess) -> RandomFieldUtility:
    """Multiply a utility field by a positive martingale density.

    ``result`` may be a :class:`ForwardUtilityResult` or a
    :class:`RandomFieldUtility`.  ``Z`` must be a positive martingale with
    ``Z(0) = 1``; the returned field is forward under the original branch
    probabilities exactly when the input field is forward under the
    ``Z``-reweighted ones.
    """
    tree = Z.tree
    if abs(Z.values[0][0] - 1.0) > MARTINGALE_TOL:
        raise ValueError(f"Z(0) must be 1, got {Z.values[0][0]!r}")
    for j in range(1, tree.horizon + 1):
        if np.any(Z.values[j] <= 0.0):
            raise ValueError(f"Z must be strictly positive (depth {j})")
        cond = np.add.reduceat(tree.prob[j] * Z.values[j], tree.child_slice[j - 1][:-1])
        err = np.max(np.abs(cond - Z.values[j - 1]))
        if err > MARTINGALE_TOL:
            raise ValueError(f"Z is not a martingale: one-step error {err:.3e} at depth {j - 1}")
    base = result if isinstance(result, RandomFieldUtility) else RandomFieldUtility.from_result(result)

    def ev(depth, x, _b=base, _z=Z):
        u = np.asarray(_b.eval_depth(depth, x))
        z = _z.values[depth]
        return u * z.reshape(z.shape[0], *([1] * (u.ndim - 1)))

    return RandomFieldUtility(tree, ev)
