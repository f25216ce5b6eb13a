"""The twelve acceptance criteria, each at its stated size and tolerance.

Every test records its outcome; ``conftest.py`` prints one PASS/FAIL line per
criterion after the run.
"""
import itertools
import json
import math

import numpy as np

from treetasep import bounds as B
from treetasep import cli
from treetasep import engine as E
from treetasep.config import COMMANDS
from treetasep.couplings import canonical_pair, exp_sum_tail, irw_pair, slowed_passage_times
from treetasep.equilibrium import (Truncation, bernoulli_check, density_profile, exact_stationary,
                                   flow_generator_identity, monotone_check, root_current_rate)
from treetasep.lpp import LppEnvironment, passage_table, passage_time
from treetasep.rates import Constant, Exponential, Slowed, net_flows
from treetasep.tree import OffspringLaw, Tree, bfs_order


def reg_tree(d=3, seed=0):
    return Tree(OffspringLaw.regular(d), seed)


def test_c01_lpp_oracle_equivalence(criterion):
    c = criterion(1, "slowed TASEP equals restricted LPP, n,m <= 6, 50 seeds", limit=10)
    with c.run():
        M = 6
        compared = 0
        for seed in range(50):
            for n in range(1, 7):
                for m in range(0, 7):
                    G, env = slowed_passage_times(n, m, M, 1.0, Exponential(3), seed)
                    P = passage_table(env, M)
                    filled = ~np.isnan(G)
                    assert filled[n + m, n]
                    assert np.array_equal(G[filled], P[filled]), (seed, n, m)
                    compared += int(filled.sum())
        c.detail = f"{compared} cells"


def _sequential_max(env, i, j):
    # every up-right path, summed in path order so the comparison can be exact
    best = -math.inf
    for ups in itertools.combinations(range(i + j - 2), i - 1):
        a = b = 1
        acc = 0.0 + env.w(1, 1)
        for k in range(i + j - 2):
            if k in ups:
                a += 1
            else:
                b += 1
            acc += env.w(a, b)
        best = max(best, acc)
    return best


def test_c02_dp_matches_enumeration(criterion):
    c = criterion(2, "LPP dynamic programme equals path enumeration on 200 environments", limit=5)
    with c.run():
        rng = np.random.default_rng(2)
        for k in range(200):
            size = 4 if k < 100 else 5
            env = LppEnvironment.from_weights(rng.exponential(size=(size, size)))
            for i in range(1, size + 1):
                for j in range(1, size + 1):
                    assert passage_time(env, i, j) == _sequential_max(env, i, j)


def test_c03_flow_identity(criterion):
    c = criterion(3, "flow-rule pairing vanishes for all |A| <= 4 within depth 4", limit=30)
    with c.run():
        tree = reg_tree()
        fam = Exponential(3)
        verts = bfs_order(tree, 4)
        worst, count = 0.0, 0
        for rho in (0.2, 0.5, 0.8):
            lam = rho * 1.0
            for k in range(1, 5):
                for A in itertools.combinations(verts, k):
                    worst = max(worst, abs(float(flow_generator_identity(A, fam, tree, rho, lam))))
                    count += 1
        c.detail = f"{count} sets, max |pairing| {worst:.3g}"
        assert worst <= 1e-12


def test_c04_stationary_monotone(criterion):
    c = criterion(4, "exact stationary truncations: residual and monotone in depth", limit=60)
    with c.run():
        worst = 0.0
        for fam in (Exponential(3), Constant()):
            pis = [exact_stationary(Truncation(reg_tree(), fam, n, 0.5)) for n in range(3)]
            for pi in pis:
                assert pi.residual <= 1e-10
                worst = max(worst, pi.residual)
            for a, b in zip(pis, pis[1:]):
                cert = monotone_check(a, b, 200, tol=1e-10)
                assert cert.ok and cert.checked >= 200
        c.detail = f"max residual {worst:.2g}"


def test_c05_bernoulli_domination(criterion):
    c = criterion(5, "depth-2 constant-rate truncation below Bernoulli(rho)")
    with c.run():
        tree = reg_tree()
        rho = 0.5
        q_o = net_flows(Constant(), tree, 1)[Tree.ROOT]
        pi = exact_stationary(Truncation(tree, Constant(), 2, rho * q_o))
        cert = bernoulli_check(pi, rho, 200, tol=1e-10)
        c.detail = f"worst gap {cert.worst_gap:.3g}"
        assert cert.ok


def test_c06_coupling_certificates(criterion):
    c = criterion(6, "canonical and random-walk couplings, 100 runs each, zero violations")
    with c.run():
        tree = reg_tree()
        viol = 0
        for s in range(100):
            viol += sum(not h for h in canonical_pair(tree, Exponential(3), 0.5, 1.0, s, 20.0,
                                                      strict=False).certificate.holds)
            viol += sum(not h for h in irw_pair(tree, Exponential(3), 1.0, s, 20.0,
                                                strict=False).certificate.holds)
        c.detail = f"{viol} violations"
        assert viol == 0


def test_c07_disentanglement(criterion):
    c = criterion(7, "disentanglement generation <= M_16 in >= 99% of 1000 runs", limit=120)
    with c.run():
        n, fam, law = 16, Exponential(3), OffspringLaw.regular(3)
        Mn = B.context(fam, law, 0.1).M(n)
        G = math.floor(Mn)
        within = 0
        for s in range(1000):
            sc = E.SimConfig(Tree(law, 0), fam, 1.0, E.Crossings(n, G), seed=s, max_entries=n)
            _, log = E.run(sc)
            try:
                within += E.disentanglement_generation(log, n) <= Mn
            except E.NotYet:
                pass
        c.detail = f"M_16 = {Mn:.4g}, fraction {within / 1000:.3f}"
        assert within >= 990


def test_c08_time_window(criterion):
    c = criterion(8, "J at t_low empty and at t_up >= (1-delta) n, n = 64, 200 runs", limit=600)
    with c.run():
        n, delta, fam, law = 64, 0.25, Exponential(3), OffspringLaw.regular(3)
        ctx = B.context(fam, law, delta)
        ell = math.ceil(ctx.M(n))
        tw = ctx.time_window(n, ell)
        # later particles are covered by a union bound on a lone walker reaching ell by t_low
        late = B.late_arrival_bound(ctx.profile, 1.0, ell, tw.t_low)
        empty = full = 0
        for s in range(200):
            # particles behind the first n never influence them
            sc = E.SimConfig(Tree(law, 0), fam, 1.0, E.Crossings(n, ell), seed=s, max_entries=n)
            _, log = E.run(sc)
            empty += E.current(log, tw.t_low, generation=ell) == 0
            full += E.current(log, tw.t_up, generation=ell) >= (1 - delta) * n
        c.detail = f"ell {ell}, empty {empty}/200 (late bound {late:.2g}), full {full}/200"
        assert empty / 200 - late >= 0.95 and full >= 190


def test_c09_subflow_blockage(criterion):
    c = criterion(9, "subflow current sublinear and root shock", limit=300)
    with c.run():
        fam = Slowed(3, ("exp", 4.0))
        tree = reg_tree()
        r100, r400, dens = [], [], []
        for s in range(100):
            _, log = E.run(E.SimConfig(tree, fam, 1.0, E.Horizon(400.0), seed=s))
            r100.append(root_current_rate(log, 100.0)["empirical"])
            r400.append(root_current_rate(log, 400.0)["empirical"])
            dens.append(density_profile(log, 0, 400.0, 400.0)[0])
        a, b, rho = np.mean(r100), np.mean(r400), np.mean(dens)
        c.detail = f"J/T {a:.4f} -> {b:.4f}, root density {rho:.3f}"
        assert b <= 0.5 * a and rho >= 0.95


def test_c10_superflow_floor(criterion):
    c = criterion(10, "superflow root current above 0.9 q(o) rho (1 - rho)", limit=300)
    with c.run():
        tree, fam, rho, T = reg_tree(), Constant(), 0.5, 1000.0
        q_o = net_flows(fam, tree, 1)[Tree.ROOT]
        _, log = E.run(E.SimConfig(tree, fam, rho * q_o, E.Horizon(T), seed=0))
        rate = root_current_rate(log, T)["empirical"]
        floor = 0.9 * q_o * rho * (1 - rho)
        c.detail = f"J/T {rate:.4f}, floor {floor:.4f}"
        assert rate >= floor


def test_c11_exp_sum_tail(criterion):
    c = criterion(11, "exponential-sum tail bounds vs Monte Carlo, 20 sets")
    with c.run():
        rng = np.random.default_rng(11)
        N = 1_000_000
        bad = []
        for k in range(20):
            terms = int(rng.integers(1, 11))
            rates = 10.0 ** rng.uniform(-2, 1, size=terms)
            delta = float(rng.uniform(0.1, 0.9))
            X = (rng.exponential(size=(N, terms)) / rates).sum(axis=1)
            S = float((1 / rates).sum())
            for t in (0.5 * S, S, 2 * S):
                emp = float(np.mean(X <= t))
                se = math.sqrt(max(emp * (1 - emp), 1 / N) / N)
                b = exp_sum_tail(rates, t, delta)
                hi = min(b["upper1"], b["upper2"])
                if not b["lower"] - 3 * se <= emp <= hi + 3 * se:
                    bad.append((k, round(t / S, 2), emp, b["lower"], hi))
        c.detail = f"{len(bad)} violations" + (f", first (set, t/S, emp, lower, upper) {bad[0]}"
                                               if bad else "")
        assert not bad


def _cli_params(command):
    return {"simulate": {"points": 5}, "disentangle": {"n": 4}, "current-window": {"n": 4},
            "generation-window": {"t": 20.0}, "lpp": {"n": 3, "m": 2, "M_n": 3, "samples": 50},
            "couple": {"T": 5.0, "lam2": 2.0}, "equilibrium": {"depth": 1, "functions": 20},
            "classify-rates": {}, "bounds": {"n": 20, "t": 50.0}}[command]


def test_c12_determinism(criterion, tmp_path):
    c = criterion(12, "every subcommand byte-identical on rerun")
    with c.run():
        for command in COMMANDS:
            raw = {"version": 1, "command": command, "tree": {"law": {"2": 1.0}},
                   "rates": {"kind": "exponential", "d": 3}, "lam": 1.0, "seed": 7,
                   "replicas": 3, "stop": {"horizon": 10.0}, "params": _cli_params(command)}
            cfg = tmp_path / f"{command}.json"
            cfg.write_text(json.dumps(raw))
            for fmt in ("csv", "json", "svg"):
                outs = []
                for rerun in ("a", "b"):
                    out = tmp_path / rerun
                    code = cli.main([command, "--config", str(cfg), "--out", str(out),
                                     "--format", fmt])
                    assert code in (0, 1), command
                    outs.append((out / f"{command}.{fmt}").read_bytes())
                assert outs[0] == outs[1], (command, fmt)
        c.detail = f"{len(COMMANDS)} commands x 3 formats"
