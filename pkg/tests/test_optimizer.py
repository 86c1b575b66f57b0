import numpy as np
import pytest

from haraforward import (
    MarketTree,
    binomial_log_closed_form,
    binomial_power_closed_form,
    build_binomial,
    solve_log_foc,
    solve_node_foc,
    solve_power_foc,
)
from conftest import bisect_foc, random_tree


def trinomial_node(increments=(0.3, 0.0, -0.2), probs=(0.3, 0.3, 0.4)) -> MarketTree:
    return MarketTree(1.0, [[0] * len(increments)], [list(probs)],
                      [[[x] for x in increments]])


def foc_residual(x, w, p, theta):
    return float(np.sum(np.asarray(w) * np.asarray(x) * (1.0 + theta * np.asarray(x)) ** (p - 1.0)))


class TestScalarSolver:
    def test_symmetric_binomial_zero(self):
        tree = build_binomial(1, 1.0, 1.2, 0.8, 0.5)
        for p in (-2.0, -0.5, 0.5, 0.9):
            sol = solve_power_foc(tree, (0, 0), p, [0.5, 0.5])
            assert sol.theta_hat[0] == pytest.approx(0.0, abs=1e-12)
            assert not sol.boundary_flag

    def test_worked_case(self):
        tree = build_binomial(1, 1.0, 1.2, 0.9, 0.5)
        sol = solve_power_foc(tree, (0, 0), 0.5, [0.5, 0.5])
        assert sol.theta_hat[0] == pytest.approx(5.0, abs=1e-10)
        assert sol.foc_residual <= 1e-12
        assert not sol.boundary_flag
        assert np.min(sol.margins) >= 1e-10

    def test_trinomial_against_bisection_oracle(self, rng):
        for _ in range(50):
            tree = trinomial_node()
            w = rng.uniform(0.1, 1.0, size=3)
            w = w / w.sum()
            p = float(rng.uniform(-2.5, 0.9))
            if abs(p) < 0.02:
                continue
            sol = solve_power_foc(tree, (0, 0), p, w)
            x = tree.delta_S[1][:, 0]
            oracle = bisect_foc(x, w, p, -1.0 / 0.3 + 1e-9, 1.0 / 0.2 - 1e-9)
            assert sol.theta_hat[0] == pytest.approx(oracle, abs=1e-9)

    def test_log_symmetric(self):
        tree = build_binomial(1, 1.0, 1.2, 0.8, 0.5)
        sol = solve_log_foc(tree, (0, 0), [0.5, 0.5])
        assert sol.theta_hat[0] == pytest.approx(0.0, abs=1e-12)
        # closed form evaluates to zero as well
        assert binomial_log_closed_form(1.2, 0.8, 1.0, 0.5) == pytest.approx(0.0, abs=1e-14)

    def test_log_worked(self):
        tree = build_binomial(1, 1.0, 1.2, 0.9, 0.5)
        sol = solve_log_foc(tree, (0, 0), [0.5, 0.5])
        assert sol.theta_hat[0] == pytest.approx(2.5, abs=1e-10)
        assert abs(0.5 * 0.2 / 1.5 + 0.5 * (-0.1) / 0.75) < 1e-15

    def test_log_trinomial_oracle(self, rng):
        for _ in range(30):
            tree = trinomial_node()
            w = rng.uniform(0.1, 1.0, size=3)
            w = w / w.sum()
            sol = solve_log_foc(tree, (0, 0), w)
            x = tree.delta_S[1][:, 0]
            oracle = bisect_foc(x, w, 0.0, -1.0 / 0.3 + 1e-9, 1.0 / 0.2 - 1e-9)
            assert sol.theta_hat[0] == pytest.approx(oracle, abs=1e-9)

    def test_degenerate_node(self):
        tree = MarketTree(1.0, [[0, 0]], [[0.5, 0.5]], [[[0.0], [0.0]]])
        sol = solve_power_foc(tree, (0, 0), 0.5, [0.5, 0.5])
        assert sol.degenerate
        assert sol.theta_hat[0] == 0.0
        assert not sol.boundary_flag

    def test_one_sided_increments_flagged(self):
        tree = MarketTree(1.0, [[0, 0]], [[0.5, 0.5]], [[[0.2], [0.1]]])
        sol = solve_power_foc(tree, (0, 0), 0.5, [0.5, 0.5])
        assert sol.boundary_flag

    def test_interior_margin_invariant(self, rng):
        for _ in range(40):
            tree = random_tree(rng, T=1, max_branches=3)
            w = tree.prob[1][tree.children(0, 0)]
            p = float(rng.uniform(-2.5, 0.9))
            if abs(p) < 0.02:
                continue
            sol = solve_power_foc(tree, (0, 0), p, w)
            if not sol.boundary_flag:
                assert np.min(sol.margins) >= 1e-10
                assert sol.foc_residual <= 1e-12

    def test_optimality_perturbations(self, rng):
        tree = build_binomial(1, 1.0, 1.25, 0.85, 0.5)
        inc = tree.delta_S[1][:, 0]
        w = np.array([0.5, 0.5])
        for p in (-1.0, 0.5):
            sol = solve_power_foc(tree, (0, 0), p, w)
            th = sol.theta_hat[0]
            convex_at = lambda t: -np.sign(p) * np.sum(w * (1.0 + t * inc) ** p)
            base = convex_at(th)
            count = 0
            while count < 200:
                delta = rng.normal(0, 0.5)
                if np.min(1.0 + (th + delta) * inc) <= 0.0:
                    continue
                count += 1
                assert convex_at(th + delta) >= base - 1e-12
        lsol = solve_log_foc(tree, (0, 0), w)
        lth = lsol.theta_hat[0]
        ylog = lambda t: np.sum(w * np.log(1.0 + t * inc))
        count = 0
        while count < 200:
            delta = rng.normal(0, 0.5)
            if np.min(1.0 + (lth + delta) * inc) <= 0.0:
                continue
            count += 1
            assert ylog(lth + delta) <= ylog(lth) + 1e-12

    def test_measure_invariance_of_feasibility(self, rng):
        tree = trinomial_node()
        inc = tree.delta_S[1][:, 0]
        for _ in range(20):
            w = rng.uniform(0.05, 1.0, size=3)
            w = w / w.sum()
            sol = solve_power_foc(tree, (0, 0), -0.7, w)
            assert np.min(1.0 + sol.theta_hat[0] * inc) > 0.0

    def test_input_validation(self):
        tree = build_binomial(1, 1.0, 1.2, 0.9, 0.5)
        with pytest.raises(ValueError, match="finite"):
            solve_power_foc(tree, (0, 0), 0.5, [np.nan, 1.0])
        with pytest.raises(ValueError, match="tol"):
            solve_power_foc(tree, (0, 0), 0.5, [0.5, 0.5], tol=0.0)
        with pytest.raises(ValueError, match="log case"):
            solve_power_foc(tree, (0, 0), 0.0, [0.5, 0.5])


class TestClosedForms:
    def test_worked_power(self):
        theta, gamma = binomial_power_closed_form(1.2, 0.9, 1.0, 0.5, 0.5)
        assert gamma == pytest.approx(4.0, rel=1e-14)
        assert theta == pytest.approx(5.0, rel=1e-14)
        assert abs(foc_residual(np.array([0.2, -0.1]), [0.5, 0.5], 0.5, 5.0)) < 1e-12

    def test_gamma_one_gives_zero(self):
        # (xi_u - 1) q = (1 - xi_d)(1 - q) makes the ratio one for every p
        xi_u, xi_d = 1.2, 0.9
        q = (1 - xi_d) / ((xi_u - 1) + (1 - xi_d))
        for p in (-2.0, -0.5, 0.5):
            theta, gamma = binomial_power_closed_form(xi_u, xi_d, 1.0, q, p)
            assert gamma == pytest.approx(1.0, abs=1e-14)
            assert theta == pytest.approx(0.0, abs=1e-13)

    def test_worked_log(self):
        theta = binomial_log_closed_form(1.2, 0.9, 1.0, 0.5)
        assert theta == pytest.approx(2.5, rel=1e-14)

    def test_power_grid_vs_solver(self, rng):
        for _ in range(200):
            xi_u = float(rng.uniform(1.02, 2.0))
            xi_d = float(rng.uniform(0.1, 0.98))
            q_up = float(rng.uniform(0.05, 0.95))
            p = float(rng.uniform(-3.0, 0.999))
            if abs(p) < 1e-3:
                continue
            s0 = float(rng.uniform(0.5, 2.0))
            theta, _ = binomial_power_closed_form(xi_u, xi_d, s0, q_up, p)
            tree = build_binomial(1, s0, xi_u, xi_d, 0.5)
            sol = solve_power_foc(tree, (0, 0), p, [q_up, 1.0 - q_up])
            assert abs(theta - sol.theta_hat[0]) <= 1e-9 * max(1.0, abs(theta))
            assert sol.foc_residual <= 1e-12

    def test_log_grid_vs_solver(self, rng):
        for _ in range(200):
            xi_u = float(rng.uniform(1.02, 2.0))
            xi_d = float(rng.uniform(0.1, 0.98))
            q_up = float(rng.uniform(0.05, 0.95))
            s0 = float(rng.uniform(0.5, 2.0))
            theta = binomial_log_closed_form(xi_u, xi_d, s0, q_up)
            tree = build_binomial(1, s0, xi_u, xi_d, 0.5)
            sol = solve_log_foc(tree, (0, 0), [q_up, 1.0 - q_up])
            assert abs(theta - sol.theta_hat[0]) <= 1e-9 * max(1.0, abs(theta))
            assert sol.foc_residual <= 1e-12

    def test_parameter_validation(self):
        with pytest.raises(ValueError, match="xi_d"):
            binomial_power_closed_form(1.2, 1.0, 1.0, 0.5, 0.5)
        with pytest.raises(ValueError, match="q_up"):
            binomial_log_closed_form(1.2, 0.9, 1.0, 1.5)


class TestMultiAsset:
    def test_two_asset_interior_root(self, rng):
        for _ in range(20):
            tree = random_tree(rng, T=1, d=2)
            w = tree.prob[1][tree.children(0, 0)]
            for p in (-1.2, 0.5, 0.0):
                sol = solve_node_foc(tree.delta_S[1], w, p)
                assert not sol.boundary_flag
                assert sol.foc_residual <= 1e-12
                assert np.min(sol.margins) > 0.0

    def test_collinear_assets_min_norm(self):
        # both assets move proportionally: optimum is unique only along v
        v = np.array([1.0, 2.0])
        scal = np.array([0.2, -0.1, 0.05])
        X = np.outer(scal, v)
        w = np.array([0.3, 0.5, 0.2])
        sol = solve_node_foc(X, w, 0.5)
        assert sol.rank_deficient
        assert sol.foc_residual <= 1e-12
        # minimum-norm solution lies in the span of v
        null = np.array([2.0, -1.0]) / np.sqrt(5.0)
        assert abs(float(sol.theta_hat @ null)) <= 1e-10

    def test_two_asset_against_scalar_embedding(self, rng):
        # embed a one-asset problem as the first coordinate of two assets
        tree1 = trinomial_node()
        x = tree1.delta_S[1][:, 0]
        X = np.stack([x, np.zeros(3)], axis=1)
        w = np.array([0.3, 0.3, 0.4])
        sol2 = solve_node_foc(X, w, -0.5)
        sol1 = solve_node_foc(x, w, -0.5)
        assert sol2.theta_hat[0] == pytest.approx(sol1.theta_hat[0], abs=1e-9)
        assert abs(sol2.theta_hat[1]) <= 1e-10
