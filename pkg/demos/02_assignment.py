"""
Auction versus Hungarian
========================

The auction solves the linear assignment problem to within n * epsilon of the
optimum. The Hungarian solver is exact and returns dual potentials that
certify optimality.
"""

# %%
import numpy as np

from neuralqaad.lap import auction_assign, check_lap_certificate, hungarian_assign, pairwise_distances

rng = np.random.default_rng(0)
a, b = rng.normal(size=(128, 3)), rng.normal(size=(128, 3))
cost = pairwise_distances(a, b)
perm, opt, u, v = hungarian_assign(cost, return_duals=True)
print("optimal total", opt, "certified:", check_lap_certificate(cost, perm, u, v))

# %%
# Smaller epsilon means a tighter bound and more bidding rounds.
for eps in (1e-1, 1e-2, 1e-3, 1e-4):
    sol = auction_assign(a, b, eps, max_iterations=10**6)
    print(f"eps {eps:g}: gap {sol.total_cost - opt:.2e} (bound {128 * eps:.1e}), "
          f"{sol.iterations_run} rounds")

# %%
# With a round cap the auction may stop early. The solution then says so, and
# unassigned sources are marked with -1.
sol, trace = auction_assign(a, b, 1e-4, max_iterations=20, record_prices=True)
print("complete:", sol.complete, "unassigned:", int((sol.assignment < 0).sum()))
print("prices never decrease:", bool(np.all(np.diff(trace, axis=0) >= 0)))
