"""
Fans and shocks
===============

The long-time behaviour depends on the net flow q(x) = r_x - r_{parent,x}.
Constant rates push more out of each vertex than comes in (superflow) and the
density thins out with depth.  Halving rates balance exactly (flow).  Rates
that decay faster than that (subflow) jam the tree and the root stays full.
"""
import numpy as np

from treetasep import engine as E
from treetasep.equilibrium import (Truncation, density_profile, exact_stationary,
                                   monotone_check, root_current_rate)
from treetasep.rates import Constant, Exponential, Slowed, classify_flow
from treetasep.tree import OffspringLaw, Tree

tree = Tree(OffspringLaw.regular(3), 0)
families = {"constant": Constant(), "halving": Exponential(3), "slowed": Slowed(3, ("exp", 4.0))}
for name, fam in families.items():
    print(f"{name:9s} -> {classify_flow(fam, tree, 6).kind}")

# exact stationary laws of finite truncations grow with depth
pis = [exact_stationary(Truncation(tree, Exponential(3), d, 0.5)) for d in range(4)]
print("root occupation by truncation depth:", [round(float(p.marginals()[0]), 4) for p in pis])
print("monotone in depth:", all(monotone_check(a, b, 100).ok for a, b in zip(pis, pis[1:])))
print("density by generation, depth 3:", np.round(density_profile(pis[-1], 3), 3))

# simulation on the infinite tree
for name, fam in families.items():
    T = 1000.0
    _, log = E.run(E.SimConfig(tree, fam, 1.0, E.Horizon(T), seed=0))
    prof = density_profile(log, 4, T / 2, T)
    rate = root_current_rate(log, T)["empirical"]
    print(f"{name:9s} J_o(T)/T = {rate:.3f}  density {np.round(prof, 2)}")
