"""
When does the n-th particle arrive?
===================================

For a generation l beyond the disentanglement bound, the aggregated current
J_l(t) jumps from 0 to roughly n inside a window [t_low, t_up].  With halving
rates both ends grow like 2^l, so we look at them on a log scale.
"""
import math

import numpy as np

from treetasep import bounds as B
from treetasep import engine as E
from treetasep.rates import Exponential
from treetasep.tree import OffspringLaw, Tree

law, fam = OffspringLaw.regular(3), Exponential(3)
n, delta = 64, 0.25
ctx = B.context(fam, law, delta)
ell = math.ceil(ctx.M(n))
tw = ctx.time_window(n, ell)
print(f"n = {n}, l = {ell}")
print(f"log2 t_low = {math.log2(tw.t_low):.2f}, log2 t_up = {math.log2(tw.t_up):.2f}")

# arrival times of the first n particles at generation l
arrivals = []
for seed in range(40):
    cfg = E.SimConfig(Tree(law, 0), fam, 1.0, E.Crossings(n, ell), seed=seed, max_entries=n)
    _, log = E.run(cfg)
    arrivals.append([E.tau(log, ell, k) for k in range(1, n + 1)])
arrivals = np.log2(np.array(arrivals))

print("log2 of first arrival:  min", arrivals[:, 0].min().round(2))
print("log2 of 48th arrival:   max", arrivals[:, 47].max().round(2))
print("all inside the window:", bool(arrivals[:, 0].min() > math.log2(tw.t_low)
                                     and arrivals[:, 47].max() < math.log2(tw.t_up)))

# the generation window inverts this: which generations are being filled at time t
for t in (1e3, 1e6):
    gw = ctx.generation_window(t)
    L_up, _ = B.exp_regular_window(math.log(2), t, delta)
    print(f"t = {t:g}: n_t = {gw.n_t}, L_low = {gw.L_low:.1f}, refined L_up = {L_up}")
