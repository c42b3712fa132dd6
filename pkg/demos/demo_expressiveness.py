"""Why the dueling duplex head matters: a table no monotonic mixer can fit.

The payoff table rewards coordinated action 0 with +8, punishes
miscoordination with -12, and gives 0 for mutual action 1.  Its greedy
structure is consistent (a local utility assignment exists), yet the best
monotonically-factorizable fit provably has mean squared error 24.  The
dueling duplex head fits it to numerical precision.
"""

import numpy as np

from factormix.mixers import DuelMixMixer, QmixMixer
from factormix.verify import (
    exact_representation_witness,
    fit_expressiveness,
    monotone_fit_floor,
    non_monotonic_table,
)

target = non_monotonic_table()
print("target payoffs:\n", target.payoffs)

floor = monotone_fit_floor(target.payoffs)
print(f"\nbest monotone fit (refined grid search): MSE = {floor:.6f}")

rng = np.random.default_rng(0)
qmix = fit_expressiveness(
    lambda r, c: QmixMixer(2, 1, r, embed_dim=8),
    target, rng=rng, budget=10000, lr=1e-2, stop_mse=0.0,
)
print(f"monotonic head converged:  MSE = {qmix.mse:.6f}")
print("fitted table:\n", np.round(qmix.fitted_table, 3))

duel = fit_expressiveness(
    lambda r, c: DuelMixMixer(2, c, 1, 4, r, embed_dim=8, n_heads=4),
    target, rng=rng, mode="dueling", budget=20000, lr=1e-2,
)
print(f"\ndueling duplex head:       MSE = {duel.mse:.2e} "
      f"(in {duel.steps} steps)")
print("fitted table:\n", np.round(duel.fitted_table, 3))
print("greedy tuple matches target optimum:", duel.greedy_matches_target)

print("\n== constructive witness (unit weights, ratio coefficients) ==")
local_q = [np.array([1.0, 0.0]), np.array([1.0, 0.0])]
witness = exact_representation_witness(target, local_q)
print("reconstruction exact:", witness["exact"],
      f"(max error {witness['max_error_checked']:.1e}, "
      f"min coefficient {witness['lambda_min']:.3f})")
