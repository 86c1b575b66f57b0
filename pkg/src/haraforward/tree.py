"""Finite event-tree market model.

A market is a rooted tree of depth ``T``.  Each non-root node carries the
one-step branch probability of reaching it from its parent and the price
increment realised on that branch; each node carries the current price
vector of the ``d`` risky assets.  Nodes are addressed by
``(depth, index)`` where ``index`` is the breadth-first position within the
depth level, so processes can be stored as one flat array per depth.

Trees are immutable after construction.  Adapted and predictable processes
are separate overlays keyed by node identity, which keeps per-node solves
independent and lets one tree be reused across scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-14
PRICE_TOL = 1e-12


def _as_vector(x, d: int, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.shape != (d,):
        raise ValueError(f"{name}: expected a length-{d} vector, got shape {v.shape}")
    return v


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class MarketTree:
    """Event tree with per-depth node arrays.

    Parameters
    ----------
    s0:
        Initial price vector (scalar accepted for a single asset).
    parents, probs, deltas:
        One entry per depth ``1..T``.  ``parents[j-1][i]`` is the index of
        the parent (at depth ``j-1``) of node ``(j, i)``; nodes must be
        grouped by parent in increasing parent order.  ``probs`` are the
        one-step branch probabilities, ``deltas`` the price increments
        (shape ``(n_j, d)``).
    """

    def __init__(self, s0, parents, probs, deltas):
        s0 = np.atleast_1d(np.asarray(s0, dtype=float))
        self.n_assets = s0.shape[0]
        self.horizon = len(parents)
        if not (len(probs) == len(deltas) == self.horizon):
            raise ValueError("parents, probs and deltas must have one entry per period")

        self.S = [_frozen(s0.reshape(1, self.n_assets))]
        self.parent = [_frozen(np.zeros(1, dtype=np.intp))]
        self.prob = [_frozen(np.ones(1))]
        self.delta_S = [_frozen(np.zeros((1, self.n_assets)))]
        self.child_slice = []

        for j in range(1, self.horizon + 1):
            par = np.asarray(parents[j - 1], dtype=np.intp)
            pr = np.asarray(probs[j - 1], dtype=float)
            dS = np.asarray(deltas[j - 1], dtype=float).reshape(len(par), self.n_assets)
            n_prev = self.S[j - 1].shape[0]
            if len(par) == 0:
                raise ValueError(f"period {j}: no nodes")
            if np.any(np.diff(par) < 0):
                raise ValueError(f"period {j}: nodes must be grouped by parent index")
            if par[0] != 0 or par[-1] != n_prev - 1 or np.any(np.diff(par) > 1):
                raise ValueError(f"period {j}: every depth-{j-1} node needs at least one child")
            if np.any(pr <= 0.0):
                raise ValueError(f"period {j}: branch probabilities must be strictly positive")
            starts = np.searchsorted(par, np.arange(n_prev))
            bounds = np.append(starts, len(par))
            sums = np.add.reduceat(pr, starts)
            bad = np.nonzero(np.abs(sums - 1.0) > PROB_TOL)[0]
            if bad.size:
                raise ValueError(
                    f"period {j}: branch probabilities at node ({j-1},{bad[0]}) "
                    f"sum to {sums[bad[0]]!r}, expected 1"
                )
            self.parent.append(_frozen(par))
            self.prob.append(_frozen(pr))
            self.delta_S.append(_frozen(dS))
            self.S.append(_frozen(self.S[j - 1][par] + dS))
            self.child_slice.append(_frozen(bounds))

    # -- structure ---------------------------------------------------------

    def n_nodes(self, depth: int) -> int:
        return self.S[depth].shape[0]

    @property
    def total_nodes(self) -> int:
        return sum(self.n_nodes(j) for j in range(self.horizon + 1))

    def children(self, depth: int, index: int) -> slice:
        """Index range of the children of node ``(depth, index)`` at depth+1."""
        if depth >= self.horizon:
            raise ValueError(f"node ({depth},{index}) is a leaf")
        b = self.child_slice[depth]
        return slice(int(b[index]), int(b[index + 1]))

    def is_leaf(self, depth: int, index: int) -> bool:
        return depth == self.horizon

    def path_to(self, depth: int, index: int) -> list[int]:
        """Node indices along the root-to-node path, one per depth 0..depth."""
        idx = [index]
        for j in range(depth, 0, -1):
            index = int(self.parent[j][index])
            idx.append(index)
        return idx[::-1]

    def reach_probabilities(self) -> list[np.ndarray]:
        """Probability of reaching each node from the root, per depth."""
        out = [np.ones(1)]
        for j in range(1, self.horizon + 1):
            out.append(out[j - 1][self.parent[j]] * self.prob[j])
        return out


# -- processes --------------------------------------------------------------


class AdaptedProcess:
    """Per-node values: the value at a node is known once the node is reached.

    ``values[j]`` is an array of shape ``(n_j,)`` for scalar processes or
    ``(n_j, d)`` for vector ones.
    """

    def __init__(self, tree: MarketTree, values):
        self.tree = tree
        if len(values) != tree.horizon + 1:
            raise ValueError("values must cover every depth 0..T")
        vals = []
        for j in range(tree.horizon + 1):
            v = np.asarray(values[j], dtype=float)
            if v.shape[0] != tree.n_nodes(j):
                raise ValueError(
                    f"depth {j}: expected {tree.n_nodes(j)} values, got {v.shape[0]}"
                )
            vals.append(v)
        self.values = vals

    @classmethod
    def constant(cls, tree: MarketTree, c: float) -> "AdaptedProcess":
        return cls(tree, [np.full(tree.n_nodes(j), float(c)) for j in range(tree.horizon + 1)])

    def at(self, depth: int, index: int):
        return self.values[depth][index]

    def __getitem__(self, depth: int) -> np.ndarray:
        return self.values[depth]


class PredictableProcess:
    """Per-internal-node values carried on the step to the children.

    ``values[j]`` (``j = 0..T-1``) holds the value used on the step from
    depth ``j`` to depth ``j+1``; it is constant across the children of a
    node and never read at leaves.
    """

    def __init__(self, tree: MarketTree, values):
        self.tree = tree
        if len(values) != tree.horizon:
            raise ValueError("values must cover every internal depth 0..T-1")
        vals = []
        for j in range(tree.horizon):
            v = np.asarray(values[j], dtype=float)
            if v.shape[0] != tree.n_nodes(j):
                raise ValueError(
                    f"depth {j}: expected {tree.n_nodes(j)} values, got {v.shape[0]}"
                )
            vals.append(v)
        self.values = vals

    @classmethod
    def constant(cls, tree: MarketTree, c) -> "PredictableProcess":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        if c.shape == (1,):
            return cls(tree, [np.full(tree.n_nodes(j), c[0]) for j in range(tree.horizon)])
        return cls(tree, [np.tile(c, (tree.n_nodes(j), 1)) for j in range(tree.horizon)])

    def at(self, depth: int, index: int):
        return self.values[depth][index]

    def __getitem__(self, depth: int) -> np.ndarray:
        return self.values[depth]


# -- admissible set ----------------------------------------------------------


@dataclass(frozen=True)
class AdmissibleSet:
    """Portfolio rates keeping one-step wealth strictly positive at a node.

    Membership depends only on the support of the branch increments, never
    on the branch probabilities.  For a single asset with at least one
    positive and one negative increment the set is the bounded open
    interval ``(-1/max(x), -1/min(x))``.
    """

    increments: np.ndarray  # (m, d), one row per branch
    lower: float = field(default=-np.inf)  # d = 1 only
    upper: float = field(default=np.inf)  # d = 1 only

    def contains(self, theta, margin: float = 0.0) -> bool:
        theta = _as_vector(theta, self.increments.shape[1], "theta")
        return bool(np.min(1.0 + self.increments @ theta) > margin)

    def margins(self, theta) -> np.ndarray:
        theta = _as_vector(theta, self.increments.shape[1], "theta")
        return 1.0 + self.increments @ theta

    @property
    def interval(self) -> tuple[float, float]:
        if self.increments.shape[1] != 1:
            raise ValueError("interval endpoints are only defined for d = 1")
        return (self.lower, self.upper)


def admissible_set(tree: MarketTree, node: tuple[int, int]) -> AdmissibleSet:
    """Admissible portfolio-rate set for the step out of an internal node."""
    depth, index = node
    if depth >= tree.horizon:
        raise ValueError(f"node ({depth},{index}) is a leaf; no one-step set there")
    sl = tree.children(depth, index)
    inc = tree.delta_S[depth + 1][sl]
    lower, upper = -np.inf, np.inf
    if tree.n_assets == 1:
        x = inc[:, 0]
        pos = x[x > 0.0]
        neg = x[x < 0.0]
        if pos.size:
            lower = -1.0 / np.max(pos)
        if neg.size:
            upper = -1.0 / np.min(neg)
    return AdmissibleSet(increments=inc, lower=lower, upper=upper)


# -- conditional expectation -------------------------------------------------


def conditional_expectation(tree: MarketTree, X, at_depth: int) -> np.ndarray:
    """One-step conditional expectation of depth ``at_depth + 1`` values.

    ``X`` may be an :class:`AdaptedProcess` or the raw value array at depth
    ``at_depth + 1``.  Returns, for each node at ``at_depth``, the
    probability-weighted sum over its children (exact up to floating-point
    summation).
    """
    if not 0 <= at_depth < tree.horizon:
        raise ValueError(f"at_depth must be in [0, {tree.horizon - 1}], got {at_depth}")
    vals = X[at_depth + 1] if isinstance(X, AdaptedProcess) else np.asarray(X, dtype=float)
    if vals.shape[0] != tree.n_nodes(at_depth + 1):
        raise ValueError("X must be defined at every node of depth at_depth + 1")
    w = tree.prob[at_depth + 1]
    weighted = vals * (w if vals.ndim == 1 else w[:, None])
    starts = tree.child_slice[at_depth][:-1]
    return np.add.reduceat(weighted, starts, axis=0)


# -- builders ----------------------------------------------------------------


def _per_period(x, T: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(T, float(arr))
    if arr.shape != (T,):
        raise ValueError(f"{name}: expected a scalar or length-{T} sequence")
    return arr


def build_binomial(T: int, s0: float, xi_u, xi_d, prob_up) -> MarketTree:
    """Full binary tree: price multiplies by ``xi_u`` (up) or ``xi_d`` (down).

    Requires ``0 < xi_d < 1 < xi_u`` per period.  Children are ordered up
    then down, so node ``(j, i)`` has children ``(j+1, 2i)`` and
    ``(j+1, 2i+1)``.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not s0 > 0.0:
        raise ValueError(f"s0 must be positive, got {s0}")
    xu = _per_period(xi_u, T, "xi_u")
    xd = _per_period(xi_d, T, "xi_d")
    pu = _per_period(prob_up, T, "prob_up")
    for j in range(T):
        if not xu[j] > 1.0:
            raise ValueError(f"period {j + 1}: xi_u must be > 1, got {xu[j]}")
        if not 0.0 < xd[j] < 1.0:
            raise ValueError(f"period {j + 1}: xi_d must be in (0, 1), got {xd[j]}")
        if not 0.0 < pu[j] < 1.0:
            raise ValueError(f"period {j + 1}: prob_up must be in (0, 1), got {pu[j]}")

    parents, probs, deltas = [], [], []
    prices = np.array([s0])
    for j in range(T):
        n = prices.shape[0]
        parents.append(np.repeat(np.arange(n), 2))
        probs.append(np.tile([pu[j], 1.0 - pu[j]], n))
        dS = np.empty(2 * n)
        dS[0::2] = prices * (xu[j] - 1.0)
        dS[1::2] = prices * (xd[j] - 1.0)
        deltas.append(dS.reshape(-1, 1))
        prices = np.repeat(prices, 2) + dS
    return MarketTree(s0, parents, probs, deltas)


def build_explicit(s0, levels) -> MarketTree:
    """Tree from explicit per-period branch lists.

    ``levels`` is a list over periods ``1..T``; each entry lists branches as
    mappings with keys ``parent``, ``prob`` and ``delta_S``.  Branches are
    stably sorted by parent index.
    """
    parents, probs, deltas = [], [], []
    for j, level in enumerate(levels, start=1):
        if not level:
            raise ValueError(f"period {j}: empty level")
        order = sorted(range(len(level)), key=lambda i: level[i]["parent"])
        parents.append([int(level[i]["parent"]) for i in order])
        probs.append([float(level[i]["prob"]) for i in order])
        deltas.append([np.atleast_1d(level[i]["delta_S"]) for i in order])
    return MarketTree(s0, parents, probs, deltas)


def truncate(tree: MarketTree, depth: int) -> MarketTree:
    """The same market stopped at ``depth`` (sub-tree of the first periods)."""
    if not 1 <= depth <= tree.horizon:
        raise ValueError(f"depth must be in [1, {tree.horizon}], got {depth}")
    return MarketTree(tree.S[0][0], tree.parent[1:depth + 1], tree.prob[1:depth + 1],
                      tree.delta_S[1:depth + 1])


def freeze_after(tree: MarketTree, stop_nodes) -> tuple[MarketTree, list[np.ndarray]]:
    """Stopped market: zero increments strictly below the given nodes.

    ``stop_nodes`` is an iterable of ``(depth, index)``; a path freezes at
    its first node in the set.  Returns the stopped tree (same shape and
    branch probabilities, frozen prices) together with per-depth anchor
    arrays of shape ``(n_j, 2)``: row ``i`` holds the ``(depth, index)`` of
    the node that ``(j, i)`` is frozen to (itself if unstopped).  Anchors
    identify where a frozen overlay should be read from.
    """
    stop = set((int(d), int(i)) for d, i in stop_nodes)
    stopped = [np.array([(0, i) in stop for i in range(tree.n_nodes(0))])]
    anchor = [np.stack([np.zeros(tree.n_nodes(0), dtype=np.intp),
                        np.arange(tree.n_nodes(0))], axis=1)]
    deltas = []
    for j in range(1, tree.horizon + 1):
        par = tree.parent[j]
        was = stopped[j - 1][par]
        dS = np.where(was[:, None], 0.0, tree.delta_S[j])
        deltas.append(dS)
        now = was | np.array([(j, i) in stop for i in range(tree.n_nodes(j))])
        stopped.append(now)
        own = np.stack([np.full(tree.n_nodes(j), j, dtype=np.intp),
                        np.arange(tree.n_nodes(j))], axis=1)
        anchor.append(np.where(was[:, None], anchor[j - 1][par], own))
    new = MarketTree(tree.S[0][0], tree.parent[1:], tree.prob[1:], deltas)
    return new, anchor
