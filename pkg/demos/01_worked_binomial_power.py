"""One-period binomial walkthrough, every number checkable by hand.

Market: S0 = 1, up factor 1.2 (prob 1/2), down factor 0.9.
Utility: power with exponent p = 1/2 and terminal coefficient D(1) = 1.
"""

import numpy as np

import haraforward as hf

tree = hf.build_binomial(T=1, s0=1.0, xi_u=1.2, xi_d=0.9, prob_up=0.5)
print("increments per branch:", tree.delta_S[1][:, 0])          # +0.2 / -0.1
print("admissible rate interval:", hf.admissible_set(tree, (0, 0)).interval)

spec = hf.HaraSpec.power(p=0.5, terminal_D=1.0)
res = hf.synthesize_power(tree, spec)

# closed form: gamma = ((0.2 * 0.5) / (0.1 * 0.5))^(1/(1-p)) = 2^2 = 4,
# theta = (gamma - 1) / ((xi_u - 1 + gamma (1 - xi_d)) S0) = 3 / 0.6 = 5
theta_cf, gamma = hf.binomial_power_closed_form(1.2, 0.9, 1.0, 0.5, 0.5)
print(f"optimal rate: recursion {res.theta_hat.values[0][0]:.12f}, closed form {theta_cf:.12f}")
print(f"gamma = {gamma}")

# D(0) = E[D(1) (1 + theta dS)^p] = (sqrt(2) + 1/sqrt(2)) / 2 = 3 / (2 sqrt(2))
print(f"D(0) = {res.D.values[0][0]:.15f}  (3/(2 sqrt 2) = {3 / (2 * np.sqrt(2)):.15f})")

# the induced minimal Hellinger martingale density has ratios (2/3, 4/3):
# (1 + theta dS)^(p-1) renormalised, and it prices the increments to zero
zt = hf.mhm_density_from_theta(tree, res.theta_hat, 0.5)
print("density ratios:", zt.ratios[0])
print("density drift E[ratio * dS]:",
      float(np.sum(tree.prob[1] * zt.ratios[0] * tree.delta_S[1][:, 0])))

# order q = p/(p-1) = -1 Hellinger increment: 0.0625, and the coefficient
# reconstruction D(1) = D(0) (1 + q(q-1) dh)^(p-1) closes the loop
h = hf.hellinger_process(tree, zt, q=-1.0)
dh = h.increments[0][0]
print(f"Hellinger increment (order -1): {dh}")
print(f"reconstruction D(0) * (1 + 2 dh)^(-1/2) = {res.D.values[0][0] * (1 + 2 * dh) ** -0.5:.15f}")

rep = hf.check_reconstruction_power(res)
print(f"reconstruction check: verdict={rep.verdict}, "
      f"max error {rep.max_reconstruction_error:.2e}")

# independent verification of the forward property
field = hf.RandomFieldUtility.from_result(res)
v = hf.verify_forward(tree, field, res.theta_hat, n_random_strategies=500, seed=1)
print(f"forward property: verdict={v.verdict}, martingale error {v.martingale_max_error:.2e}, "
      f"worst supermartingale excess {v.supermartingale_worst_violation:.2e}")
