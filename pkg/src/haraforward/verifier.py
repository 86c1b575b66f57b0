"""Independent forward-property checking by exhaustive conditional expectation.

A random-field utility is *forward* when it is a supermartingale along the
wealth of every admissible strategy and a martingale along the optimal one.
On a finite tree both statements reduce to one-step conditional
expectations, so the martingale side is checked exactly at every internal
node and the supermartingale side over a seeded sample of predictable
strategies drawn from a compactly shrunken admissible set.

The conditional checks are exact; the strategy sample is not a proof over
the whole admissible family.  ``detect_nonconstant_p`` is the matching
refuter for fields whose exponent varies over the tree: it probes the
null-strategy supermartingale bound at geometrically spread capital levels
and returns a violation certificate when it finds one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tree import AdaptedProcess, MarketTree, PredictableProcess, admissible_set

UTILITY_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
SAMPLING_SHRINK = 0.95
SAMPLING_BOX = 100.0


def _bc(coeff: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Broadcast a per-node coefficient against per-node wealth arrays."""
    extra = np.ndim(x) - 1
    return coeff.reshape(coeff.shape[0], *([1] * extra)) if extra > 0 else coeff


class RandomFieldUtility:
    """Utility random field evaluated per depth: ``eval_depth(j, x)``.

    ``x`` may be a scalar, one value per node ``(n_j,)``, or stacked wealth
    columns ``(n_j, k)``; the result matches the node axis.
    """

    def __init__(self, tree: MarketTree, eval_depth):
        self.tree = tree
        self._eval = eval_depth

    def eval_depth(self, depth: int, x):
        return self._eval(depth, np.asarray(x, dtype=float))

    def at(self, node, x: float) -> float:
        depth, index = node
        return float(np.asarray(self.eval_depth(depth, x))[index])

    @classmethod
    def from_power(cls, tree: MarketTree, D: AdaptedProcess, p) -> "RandomFieldUtility":
        """Field ``D(node) * x^p``; ``p`` may be a scalar or an
        :class:`AdaptedProcess` (node-varying exponent, for adversarial use)."""
        if isinstance(p, AdaptedProcess):
            def ev(depth, x, _D=D, _p=p):
                return _bc(_D.values[depth], x) * np.power(x, _bc(_p.values[depth], x))
        else:
            p = float(p)

            def ev(depth, x, _D=D, _p=p):
                return _bc(_D.values[depth], x) * np.power(x, _p)
        return cls(tree, ev)

    @classmethod
    def from_log(cls, tree: MarketTree, D_hat: AdaptedProcess, D_bar: AdaptedProcess) -> "RandomFieldUtility":
        def ev(depth, x, _h=D_hat, _b=D_bar):
            return _bc(_h.values[depth], x) * np.log(x) + _bc(_b.values[depth], x)
        return cls(tree, ev)

    @classmethod
    def from_result(cls, result) -> "RandomFieldUtility":
        tree = result.theta_hat.tree
        if result.kind == "power":
            return cls.from_power(tree, result.D, result.p)
        return cls.from_log(tree, result.D_hat, result.D_bar)


def validate_utility_shape(U: RandomFieldUtility, grid=UTILITY_GRID) -> None:
    """Reject fields that are not strictly increasing and strictly concave
    in wealth at every node (checked on the capital grid)."""
    xs = np.asarray(grid, dtype=float)
    for depth in range(U.tree.horizon + 1):
        vals = np.stack([np.asarray(U.eval_depth(depth, x)) for x in xs], axis=1)
        slopes = np.diff(vals, axis=1) / np.diff(xs)
        if np.any(slopes <= 0.0):
            node = int(np.argwhere(slopes <= 0.0)[0][0])
            raise ValueError(f"field is not strictly increasing in x at node ({depth},{node})")
        if np.any(np.diff(slopes, axis=1) >= 0.0):
            node = int(np.argwhere(np.diff(slopes, axis=1) >= 0.0)[0][0])
            raise ValueError(f"field is not strictly concave in x at node ({depth},{node})")


@dataclass
class VerificationReport:
    """Outcome of a forward-property verification run.

    The martingale error is exact; the supermartingale margin only covers
    the sampled strategies (a positive value is a violation).
    """

    martingale_max_error: float
    supermartingale_worst_violation: float
    strategies_tested: int
    tol_m: float
    tol_s: float
    per_node: list = field(default_factory=list)
    failing_nodes_by_x0: dict = field(default_factory=dict)
    skipped_nodes: list = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return bool(self.martingale_max_error <= self.tol_m
                    and self.supermartingale_worst_violation <= self.tol_s)


def _theta_rows(theta: PredictableProcess, depth: int, d: int) -> np.ndarray:
    v = theta.values[depth]
    return v.reshape(v.shape[0], d) if v.ndim == 1 and d == 1 else v


def _wealth_factors(tree: MarketTree, theta: PredictableProcess, j: int) -> np.ndarray:
    th = _theta_rows(theta, j - 1, tree.n_assets)[tree.parent[j]]
    return 1.0 + np.sum(th * tree.delta_S[j], axis=1)


def _sample_strategy(tree: MarketTree, rng: np.random.Generator, n: int) -> list[np.ndarray]:
    """Sample ``n`` predictable strategies, each uniform over a compactly
    shrunken interior of the admissible set of every internal node.
    Returns per-depth arrays of shape ``(n_nodes, n, d)``."""
    d = tree.n_assets
    out = []
    for j in range(tree.horizon):
        nodes = tree.n_nodes(j)
        th = np.zeros((nodes, n, d))
        for i in range(nodes):
            inc = tree.delta_S[j + 1][tree.children(j, i)]
            scale = np.max(np.abs(inc))
            if scale == 0.0:
                continue
            box = SAMPLING_BOX / scale
            if d == 1:
                lo, hi = admissible_set(tree, (j, i)).interval
                lo, hi = max(lo, -box), min(hi, box)
                th[i, :, 0] = SAMPLING_SHRINK * rng.uniform(lo, hi, size=n)
            else:
                u = rng.normal(size=(n, d))
                u /= np.linalg.norm(u, axis=1, keepdims=True)
                proj = inc @ u.T  # (m, n)
                with np.errstate(divide="ignore"):
                    tmax = np.where(proj < 0.0, -1.0 / proj, np.inf).min(axis=0)
                tmax = np.minimum(tmax, box)
                th[i] = u * (SAMPLING_SHRINK * rng.uniform(0.0, 1.0, size=n) * tmax)[:, None]
        out.append(th)
    return out


def _clip_to_admissible(tree: MarketTree, theta: PredictableProcess, factor: float) -> list[np.ndarray]:
    """Scale ``factor * theta`` back inside the admissible set where needed."""
    d = tree.n_assets
    out = []
    for j in range(tree.horizon):
        th = _theta_rows(theta, j, d) * factor
        for i in range(tree.n_nodes(j)):
            inc = tree.delta_S[j + 1][tree.children(j, i)]
            proj = inc @ th[i]
            m = np.min(1.0 + proj)
            if m <= 1.0 - SAMPLING_SHRINK:
                worst = np.min(proj)
                t = SAMPLING_SHRINK * (-1.0 / worst)
                th = th.copy()
                th[i] = th[i] * t
        out.append(th)
    return out


def verify_forward(tree: MarketTree, U: RandomFieldUtility, theta_hat: PredictableProcess,
                   x0_list=(0.5, 1.0, 10.0), n_random_strategies: int = 200, seed: int = 0,
                   tol_m: float = 1e-11, tol_s: float = 1e-11) -> VerificationReport:
    """Check the self-generation property of a utility field.

    Martingale side: at every internal node and every initial capital, the
    one-step conditional expectation of the field along the wealth of
    ``theta_hat`` must reproduce the field's value.  Supermartingale side:
    over sampled strategies (plus ``0``, ``theta_hat/2`` and ``2 theta_hat``
    clipped back inside the admissible set), the conditional expectation
    must not exceed it.
    """
    validate_utility_shape(U)
    d = tree.n_assets
    rng = np.random.default_rng(seed)

    mart_max = 0.0
    node_mart = [np.zeros(tree.n_nodes(j)) for j in range(tree.horizon)]
    failing: dict[float, list] = {}
    for x0 in x0_list:
        fail_nodes = []
        W = [np.full(1, float(x0))]
        for j in range(1, tree.horizon + 1):
            W.append(W[j - 1][tree.parent[j]] * _wealth_factors(tree, theta_hat, j))
        for j in range(1, tree.horizon + 1):
            child_u = np.asarray(U.eval_depth(j, W[j]))
            cond = np.add.reduceat(tree.prob[j] * child_u, tree.child_slice[j - 1][:-1])
            here = np.asarray(U.eval_depth(j - 1, W[j - 1]))
            err = np.abs(cond - here)
            node_mart[j - 1] = np.maximum(node_mart[j - 1], err)
            mart_max = max(mart_max, float(err.max()))
            fail_nodes.extend((j - 1, int(i)) for i in np.nonzero(err > tol_m)[0])
        failing[float(x0)] = fail_nodes

    # supermartingale side over sampled + deterministic strategies
    strategies = _sample_strategy(tree, rng, n_random_strategies)
    zero = [np.zeros((tree.n_nodes(j), 1, d)) for j in range(tree.horizon)]
    half = [0.5 * _theta_rows(theta_hat, j, d)[:, None, :] for j in range(tree.horizon)]
    double = [v[:, None, :] for v in _clip_to_admissible(tree, theta_hat, 2.0)]
    all_strats = [np.concatenate([strategies[j], zero[j], half[j], double[j]], axis=1)
                  for j in range(tree.horizon)]
    n_strat = all_strats[0].shape[1]

    worst = -np.inf
    node_super = [np.full(tree.n_nodes(j), -np.inf) for j in range(tree.horizon)]
    for x0 in x0_list:
        W = [np.full((1, n_strat), float(x0))]
        for j in range(1, tree.horizon + 1):
            th = all_strats[j - 1][tree.parent[j]]  # (n_j, n_strat, d)
            factors = 1.0 + np.einsum("bsk,bk->bs", th, tree.delta_S[j])
            W.append(W[j - 1][tree.parent[j]] * factors)
        for j in range(1, tree.horizon + 1):
            child_u = np.asarray(U.eval_depth(j, W[j]))
            cond = np.add.reduceat(tree.prob[j][:, None] * child_u,
                                   tree.child_slice[j - 1][:-1], axis=0)
            here = np.asarray(U.eval_depth(j - 1, W[j - 1]))
            excess = cond - here
            node_super[j - 1] = np.maximum(node_super[j - 1], excess.max(axis=1))
            worst = max(worst, float(excess.max()))

    per_node = [
        {"depth": j, "index": i,
         "martingale_error": float(node_mart[j][i]),
         "supermartingale_excess": float(node_super[j][i])}
        for j in range(tree.horizon) for i in range(tree.n_nodes(j))
    ]
    return VerificationReport(
        martingale_max_error=mart_max,
        supermartingale_worst_violation=worst,
        strategies_tested=n_strat,
        tol_m=tol_m, tol_s=tol_s,
        per_node=per_node,
        failing_nodes_by_x0=failing,
    )


@dataclass
class NonconstancyReport:
    """One-sided certificate search for a varying exponent.

    ``violation_found = False`` does not prove constancy; it only reports
    that no probe exposed the field.
    """

    violation_found: bool
    x: float | None = None
    node: tuple | None = None
    excess: float = 0.0
    probes: int = 0


def detect_nonconstant_p(tree: MarketTree, D: AdaptedProcess, p_process: AdaptedProcess,
                         n_probes: int = 4, seed: int = 0) -> NonconstancyReport:
    """Probe the null-strategy supermartingale bound ``E[D(j) x^p(j) | node]
    <= D(node) x^p(node)`` at capitals ``exp(+-k)`` plus seeded random ones.

    A certificate is returned as soon as some probe exceeds the bound by
    more than ``1e-12``; constant-exponent forward fields never trigger it.
    """
    for j in range(tree.horizon + 1):
        pj = p_process.values[j]
        if np.any(pj >= 1.0):
            raise ValueError(f"exponent must be < 1 everywhere (depth {j})")
        if np.any(np.sign(D.values[j] * pj) <= 0.0):
            raise ValueError(f"D * p must be positive everywhere (depth {j})")
    rng = np.random.default_rng(seed)
    ks = np.arange(1, n_probes + 1, dtype=float)
    xs = np.concatenate([np.exp(ks), np.exp(-ks),
                         np.exp(rng.uniform(-n_probes, n_probes, size=n_probes))])
    best = NonconstancyReport(False, probes=xs.size)
    for x in xs:
        for j in range(1, tree.horizon + 1):
            child = D.values[j] * np.power(x, p_process.values[j])
            cond = np.add.reduceat(tree.prob[j] * child, tree.child_slice[j - 1][:-1])
            here = D.values[j - 1] * np.power(x, p_process.values[j - 1])
            excess = cond - here
            i = int(np.argmax(excess))
            if excess[i] > 1e-12 and excess[i] > best.excess:
                best = NonconstancyReport(True, float(x), (j - 1, i), float(excess[i]), xs.size)
    return best
