import numpy as np
import pytest

from haraforward import (
    AdaptedProcess,
    HaraSpec,
    PredictableProcess,
    RandomFieldUtility,
    build_binomial,
    detect_nonconstant_p,
    synthesize_log,
    synthesize_power,
    validate_utility_shape,
    verify_forward,
)


def exhaustive_strategy_grid_violation(tree, D_vals, p, n_grid=50):
    """Oracle: one-step supermartingale sweep over a dense rate grid at every
    internal node (wealth factors out for a constant exponent, so one-step
    checks at unit capital are exhaustive)."""
    worst = -np.inf
    for j in range(tree.horizon):
        bounds = tree.child_slice[j]
        for i in range(tree.n_nodes(j)):
            sl = slice(int(bounds[i]), int(bounds[i + 1]))
            inc = tree.delta_S[j + 1][sl][:, 0]
            pb = tree.prob[j + 1][sl]
            dc = D_vals[j + 1][sl]
            lo = -1.0 / np.max(inc) if np.any(inc > 0) else -50.0
            hi = -1.0 / np.min(inc) if np.any(inc < 0) else 50.0
            for theta in np.linspace(0.98 * lo, 0.98 * hi, n_grid):
                ev = float(np.sum(pb * dc * (1.0 + theta * inc) ** p))
                worst = max(worst, ev - D_vals[j][i])
    return worst


@pytest.fixture(scope="module")
def three_period():
    tree = build_binomial(3, 1.0, 1.25, 0.85, 0.45)
    res = synthesize_power(tree, HaraSpec.power(0.5, 1.0))
    return tree, res


class TestVerifyForward:
    def test_synthesized_passes(self, three_period):
        tree, res = three_period
        rep = verify_forward(tree, RandomFieldUtility.from_result(res), res.theta_hat,
                             n_random_strategies=500, seed=3)
        assert rep.verdict
        assert rep.martingale_max_error <= 1e-11
        assert rep.supermartingale_worst_violation <= 1e-11
        assert rep.strategies_tested == 503

    def test_log_synthesized_passes(self):
        tree = build_binomial(2, 1.0, 1.3, 0.8, 0.4)
        res = synthesize_log(tree, HaraSpec.log(np.array([1.1, 0.9, 1.2, 0.95]), 0.0))
        rep = verify_forward(tree, RandomFieldUtility.from_result(res), res.theta_hat,
                             n_random_strategies=400, seed=4)
        assert rep.verdict

    def test_perturbed_coefficient_fails_locally(self, three_period):
        tree, res = three_period
        vals = [v.copy() for v in res.D.values]
        vals[1][0] *= 1.01
        bad = RandomFieldUtility.from_power(tree, AdaptedProcess(tree, vals), 0.5)
        rep = verify_forward(tree, bad, res.theta_hat, x0_list=(1.0,), seed=3)
        assert not rep.verdict
        w_up = 1.0 + res.theta_hat.values[0][0] * tree.delta_S[1][0, 0]
        bump = 0.01 * res.D.values[1][0] * w_up ** 0.5
        assert rep.martingale_max_error == pytest.approx(bump, rel=1e-9)
        # violation localises to the bumped node and its parent step
        bad_nodes = {(e["depth"], e["index"]) for e in rep.per_node
                     if e["martingale_error"] > 1e-11}
        assert (0, 0) in bad_nodes
        assert all(depth <= 1 for depth, _ in bad_nodes)

    def test_wrong_rate_fails_martingale_only(self, three_period):
        tree, res = three_period
        vals = [v.copy() for v in res.theta_hat.values]
        vals[1][1] = 0.0  # off-optimum at a non-martingale node
        wrong = PredictableProcess(tree, vals)
        rep = verify_forward(tree, RandomFieldUtility.from_result(res), wrong,
                             n_random_strategies=300, seed=5)
        assert rep.martingale_max_error > 1e-11
        assert rep.supermartingale_worst_violation <= 1e-11

    def test_failing_sets_identical_across_x0(self, three_period):
        tree, res = three_period
        vals = [v.copy() for v in res.D.values]
        vals[2][1] *= 1.02
        bad = RandomFieldUtility.from_power(tree, AdaptedProcess(tree, vals), 0.5)
        rep = verify_forward(tree, bad, res.theta_hat, x0_list=(0.5, 1.0, 10.0), seed=6)
        sets = [frozenset(v) for v in rep.failing_nodes_by_x0.values()]
        assert len(set(sets)) == 1
        assert sets[0]


class TestUtilityShapeGate:
    def test_rejects_convex_exponent(self, three_period):
        tree, _ = three_period
        field = RandomFieldUtility.from_power(tree, AdaptedProcess.constant(tree, 1.0), 2.0)
        with pytest.raises(ValueError, match="concave"):
            validate_utility_shape(field)

    def test_rejects_decreasing_field(self, three_period):
        tree, _ = three_period
        field = RandomFieldUtility.from_power(tree, AdaptedProcess.constant(tree, -1.0), 0.5)
        with pytest.raises(ValueError, match="increasing"):
            validate_utility_shape(field)

    def test_gate_runs_before_forward_checks(self, three_period):
        tree, res = three_period
        field = RandomFieldUtility.from_power(tree, AdaptedProcess.constant(tree, 1.0), 2.0)
        with pytest.raises(ValueError, match="concave"):
            verify_forward(tree, field, res.theta_hat)

    def test_negative_p_field_accepted(self, three_period):
        tree, _ = three_period
        res = synthesize_power(tree, HaraSpec.power(-1.0, -1.0))
        validate_utility_shape(RandomFieldUtility.from_result(res))


class TestSoundnessAgainstGrid:
    def test_agreement_on_clean_and_perturbed(self, rng):
        clean = perturbed = 0
        while clean < 6 or perturbed < 6:
            T = int(rng.integers(2, 4))
            tree = build_binomial(T, 1.0, float(rng.uniform(1.1, 1.5)),
                                  float(rng.uniform(0.5, 0.95)), float(rng.uniform(0.2, 0.8)))
            p = float(rng.uniform(0.2, 0.8))
            res = synthesize_power(tree, HaraSpec.power(p, 1.0))
            vals = [v.copy() for v in res.D.values]
            do_bump = clean >= 6 or (perturbed < 6 and rng.uniform() < 0.5)
            if do_bump:
                depth = int(rng.integers(1, T + 1))
                vals[depth][int(rng.integers(0, tree.n_nodes(depth)))] *= 1.05
            grid_worst = exhaustive_strategy_grid_violation(tree, vals, p)
            field = RandomFieldUtility.from_power(tree, AdaptedProcess(tree, vals), p)
            rep = verify_forward(tree, field, res.theta_hat, n_random_strategies=200,
                                 seed=int(rng.integers(0, 1 << 31)))
            if grid_worst > 1e-6:
                assert not rep.verdict
                perturbed += 1
            elif grid_worst <= 1e-11:
                assert rep.verdict
                clean += 1


class TestNonconstantExponentRefuter:
    def test_constant_p_no_certificate(self, three_period):
        tree, res = three_period
        p_proc = AdaptedProcess.constant(tree, 0.5)
        rep = detect_nonconstant_p(tree, res.D, p_proc, n_probes=4, seed=0)
        assert not rep.violation_found

    def test_exponent_jump_flagged_at_e_squared(self):
        # martingale tree, D constant one, exponent drifts 0.5 -> 0.6
        tree = build_binomial(1, 1.0, 1.2, 0.8, 0.5)
        D = AdaptedProcess.constant(tree, 1.0)
        p_proc = AdaptedProcess(tree, [np.array([0.5]), np.array([0.6, 0.6])])
        rep = detect_nonconstant_p(tree, D, p_proc, n_probes=2, seed=0)
        assert rep.violation_found
        x = np.exp(2.0)
        assert rep.excess >= x ** 0.6 - x ** 0.5 - 1e-12
        assert rep.x == pytest.approx(x)

    def test_sign_flip_flagged_for_large_x(self):
        # one branch keeps a positive exponent while the other flips negative
        tree = build_binomial(1, 1.0, 1.2, 0.8, 0.5)
        D = AdaptedProcess(tree, [np.array([0.1]), np.array([1.0, -1.0])])
        p_proc = AdaptedProcess(tree, [np.array([0.5]), np.array([0.5, -0.5])])
        # null-strategy bound holds at x = 1: E[D(1)] = 0 <= 0.1
        rep = detect_nonconstant_p(tree, D, p_proc, n_probes=2, seed=0)
        assert rep.violation_found
        x = np.exp(2.0)
        assert rep.x == pytest.approx(x)
        assert rep.excess == pytest.approx(0.5 * x ** 0.5 - 0.5 * x ** -0.5 - 0.1 * x ** 0.5, rel=1e-12)

    def test_varying_exponent_field_fails_verification(self):
        # the same drifting-exponent instance expressed as a random field:
        # it clears the shape gate node by node but breaks the exact
        # martingale check at large initial capital
        tree = build_binomial(1, 1.0, 1.2, 0.8, 0.5)
        D = AdaptedProcess.constant(tree, 1.0)
        p_proc = AdaptedProcess(tree, [np.array([0.5]), np.array([0.6, 0.6])])
        field = RandomFieldUtility.from_power(tree, D, p_proc)
        validate_utility_shape(field)
        theta0 = PredictableProcess.constant(tree, 0.0)
        rep = verify_forward(tree, field, theta0, x0_list=(0.5, 1.0, 10.0), seed=0)
        assert not rep.verdict
        assert rep.martingale_max_error == pytest.approx(10.0 ** 0.6 - 10.0 ** 0.5, rel=1e-12)

    def test_precondition_validation(self, three_period):
        tree, res = three_period
        with pytest.raises(ValueError, match="< 1"):
            detect_nonconstant_p(tree, res.D, AdaptedProcess.constant(tree, 1.5))
        with pytest.raises(ValueError, match="positive"):
            detect_nonconstant_p(tree, res.D, AdaptedProcess.constant(tree, -0.5))
