"""Minimality of the rate-induced density among all martingale densities.

On a trinomial node the positive martingale densities form a segment (two
affine constraints, three unknowns).  The density induced by the optimal
rate should sit at the increment-minimising point of that segment for the
matching order q = p/(p-1); competitors are sampled and gridded.
"""

import numpy as np

import haraforward as hf
from haraforward import MarketTree, PredictableProcess

increments = [0.25, 0.02, -0.15]
probs = [0.35, 0.3, 0.35]
tree = MarketTree(1.0, [[0, 0, 0]], [probs], [[[x] for x in increments]])

for q in (-1.0, -0.5, 0.5, 0.0):
    p = 0.0 if q == 0.0 else q / (q - 1.0)
    sol = hf.solve_node_foc(tree.delta_S[1], tree.prob[1], p)
    theta = PredictableProcess(tree, [np.array([sol.theta_hat[0]])])
    zt = hf.mhm_density_from_theta(tree, theta, p)
    own = hf.hellinger_process(tree, zt, q).increment_at(0, 0)

    rep = hf.verify_mhm_domination(tree, zt, q, competitors=200, seed=4)
    print(f"q = {q:+.1f}: rate {sol.theta_hat[0]:+.5f}, own increment {own:.8f}, "
          f"sampled worst margin {rep.worst_margin:+.2e}, verdict {rep.verdict}")

# show a few sampled competitors explicitly for the log order
rng = np.random.default_rng(5)
sol = hf.solve_node_foc(tree.delta_S[1], tree.prob[1], 0.0)
theta = PredictableProcess(tree, [np.array([sol.theta_hat[0]])])
zt = hf.mhm_density_from_theta(tree, theta, 0.0)
own = hf.hellinger_process(tree, zt, 0.0).increment_at(0, 0)
print("\nminimal density ratios:", zt.ratios[0], " increment:", own)
for _ in range(5):
    r = hf.hellinger.sample_node_density(rng, tree.prob[1], tree.delta_S[1])
    comp = float(np.sum(tree.prob[1] * hf.f_q(0.0, r - 1.0)))
    print(f"  competitor {np.round(r, 4)} -> increment {comp:.8f} (excess {comp - own:+.2e})")
