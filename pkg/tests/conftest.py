"""Shared generators and independent oracles for the test suite."""

import numpy as np
import pytest

from haraforward import MarketTree


def random_tree(rng, T=3, max_branches=3, d=1, scale=0.3) -> MarketTree:
    """Random non-recombining market with mixed-sign increments per node.

    For two assets every node gets exactly three branches whose increment
    vectors are built so the origin lies in the interior of their convex
    hull (positive combination summing to zero), which guarantees an
    interior optimal rate at every node.
    """
    parents, probs, deltas = [], [], []
    n_prev = 1
    for _ in range(T):
        par, pr, dS = [], [], []
        for i in range(n_prev):
            if d == 1:
                m = int(rng.integers(2, max_branches + 1))
                while True:
                    x = rng.uniform(-scale, scale, size=m)
                    if np.any(x > 0.01) and np.any(x < -0.01):
                        break
                rows = x.reshape(m, 1)
            else:
                m = 3
                while True:
                    x1 = rng.uniform(-scale, scale, size=d)
                    x2 = rng.uniform(-scale, scale, size=d)
                    if np.linalg.matrix_rank(np.stack([x1, x2]), tol=1e-3 * scale) == 2:
                        break
                a = rng.uniform(0.2, 1.0, size=3)
                x3 = -(a[0] * x1 + a[1] * x2) / a[2]
                rows = np.stack([x1, x2, x3])
            w = rng.uniform(0.2, 1.0, size=m)
            w = w / w.sum()
            par.extend([i] * m)
            pr.extend(w.tolist())
            dS.extend(rows.tolist())
        parents.append(par)
        probs.append(pr)
        deltas.append(dS)
        n_prev = len(par)
    s0 = np.full(d, 1.0)
    return MarketTree(s0, parents, probs, deltas)


def path_expectation(tree, leaf_values) -> float:
    """Brute-force expectation of leaf values via path probabilities."""
    reach = tree.reach_probabilities()[tree.horizon]
    return float(np.sum(reach * np.asarray(leaf_values, dtype=float)))


def two_step_expectation(tree, values, at_depth):
    """Direct two-step conditional expectation of depth ``at_depth + 2``
    values down to ``at_depth`` by explicit path sums (oracle)."""
    vals = np.asarray(values, dtype=float)
    j2 = at_depth + 2
    out = np.zeros(tree.n_nodes(at_depth))
    for i in range(tree.n_nodes(j2)):
        parent = int(tree.parent[j2][i])
        grand = int(tree.parent[j2 - 1][parent])
        out[grand] += tree.prob[j2][i] * tree.prob[j2 - 1][parent] * vals[i]
    return out


def bisect_foc(x, w, p, lo, hi, tol=1e-14, iters=400):
    """Plain bisection oracle for the scalar stationarity condition
    ``sum w x (1+theta x)^(p-1) = 0`` on a bracketing interval."""
    def res(theta):
        return float(np.sum(w * x * (1.0 + theta * x) ** (p - 1.0)))

    flo, fhi = res(lo), res(hi)
    assert flo * fhi < 0, "oracle bracket does not straddle the root"
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = res(mid)
        if fm == 0.0 or hi - lo < tol * max(1.0, abs(mid)):
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return 0.5 * (lo + hi)


def random_positive_martingale(rng, tree):
    """Random strictly positive martingale with Z(0) = 1 (ratio overlay)."""
    ratios = []
    for j in range(1, tree.horizon + 1):
        raw = np.exp(rng.normal(0.0, 0.3, size=tree.n_nodes(j)))
        starts = tree.child_slice[j - 1][:-1]
        norm = np.add.reduceat(tree.prob[j] * raw, starts)
        ratios.append(raw / norm[tree.parent[j]])
    return ratios


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)
