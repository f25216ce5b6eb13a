import math

import numpy as np
import pytest
from scipy import stats

from treetasep.couplings import (canonical_pair, exp_sum_tail, irw_pair,
                                 slowed_passage_times, slowed_real_pair, walk_rates)
from treetasep.engine import EngineError, Horizon, SimConfig, current, particle_paths, run
from treetasep.lpp import passage_table
from treetasep.rates import Constant, CustomTable, Exponential, RegularProfile, Slowed
from treetasep.tree import OffspringLaw, Tree


def reg_tree(d=3, seed=0):
    return Tree(OffspringLaw.regular(d), seed)


def chain():
    return Tree(OffspringLaw.dirac(1, allow_critical=True), 0)


# canonical coupling -----------------------------------------------------------------------

def test_equal_rates_give_identical_runs():
    tree = reg_tree()
    pair = canonical_pair(tree, Exponential(3), 1.0, 1.0, 4, 20.0)
    assert pair.first.lines() == pair.second.lines()
    assert pair.certificate.ok


def test_zero_rate_leaves_first_process_empty():
    pair = canonical_pair(reg_tree(), Exponential(3), 0.0, 1.0, 4, 20.0)
    assert len(pair.first) == 0
    assert len(pair.second) > 0
    assert pair.certificate.ok


def test_canonical_ordering_many_seeds():
    tree = reg_tree()
    for s in range(100):
        pair = canonical_pair(tree, Exponential(3), 0.5, 1.0, s, 20.0)
        assert pair.certificate.ok
        for g in range(4):
            for t in (5.0, 10.0, 20.0):
                assert current(pair.first, t, generation=g) <= current(pair.second, t, generation=g)


def test_canonical_rejects_unordered_inputs():
    tree = reg_tree()
    with pytest.raises(EngineError):
        canonical_pair(tree, Constant(), 1.0, 0.5, 0, 1.0)
    a = tree.ensure_children(0)[0]
    with pytest.raises(EngineError):
        canonical_pair(tree, Constant(), 0.5, 1.0, 0, 1.0, initial1=(a,))


def test_canonical_with_ordered_seeds():
    tree = reg_tree()
    a, b = tree.ensure_children(0)[:2]
    pair = canonical_pair(tree, Constant(), 0.5, 1.0, 3, 15.0, initial1=(a,), initial2=(a, b))
    assert pair.certificate.ok


def test_certificate_csv(tmp_path):
    pair = canonical_pair(reg_tree(), Exponential(3), 0.5, 1.0, 0, 5.0)
    pair.certificate.write(tmp_path / "cert.csv")
    lines = (tmp_path / "cert.csv").read_text().splitlines()
    assert lines[0] == "event_index,holds"
    assert len(lines) == len(pair.first) + len(pair.second) + 1
    assert pair.certificate.first_violation() is None


# independent walkers -----------------------------------------------------------------------

def test_walk_rates_regular():
    M = walk_rates(Exponential(3), reg_tree())
    assert [M(ell) for ell in range(4)] == [1.0, 0.5, 0.25, 0.125]


def test_single_particle_on_chain_matches_walker():
    tree = chain()
    tree.materialise(30)
    table = {(tree.parent[v], v): 1.0 for v in range(1, len(tree))}
    fam = CustomTable(table)
    pair = irw_pair(tree, fam, 1.0, 0, 20.0, profile=RegularProfile(Constant(), 2))
    # nothing is ahead of the first particle, so it jumps at every ring of its stream
    assert particle_paths(pair.first)[0] == particle_paths(pair.second)[0]
    assert len(particle_paths(pair.first)[0]) > 5
    assert pair.certificate.ok


@pytest.mark.parametrize("seed", range(100))
def test_irw_domination(seed):
    tree = reg_tree()
    pair = irw_pair(tree, Exponential(3), 1.0, seed, 50.0)
    assert pair.certificate.ok
    for g in range(0, 8):
        for t in (10.0, 25.0, 50.0):
            assert current(pair.first, t, generation=g) <= current(pair.second, t, generation=g)


def test_irw_marginal_is_tasep():
    # the opportunity construction must not change the law of the TASEP: compare
    # J_1(5) with the engine over 2000 seeds
    tree = reg_tree()
    a = np.array([current(irw_pair(tree, Exponential(3), 1.0, s, 5.0).first, 5.0, generation=1)
                  for s in range(2000)])
    b = np.array([current(run(SimConfig(tree, Exponential(3), 1.0, Horizon(5.0), seed=s))[1], 5.0,
                          generation=1) for s in range(2000)])
    assert stats.ks_2samp(a, b).pvalue > 1e-3


# slowed TASEP -------------------------------------------------------------------------------

@pytest.mark.parametrize("fam", [Exponential(3), Constant(), Slowed(3, ("exp", 2.0))],
                         ids=lambda f: f.kind)
def test_slowed_lags_real(fam):
    tree = reg_tree()
    for s in range(30):
        res = slowed_real_pair(tree, fam, 1.0, s, 30.0)
        assert res.certificate.ok
        for i, sa in enumerate(res.slowed_arrivals):
            for g, t in sa.items():
                assert res.real_arrivals[i][g] <= t * (1 + 1e-12) + 1e-12


def test_slowed_one_particle_is_cumulative_sum():
    G, env = slowed_passage_times(1, 4, 4, 1.0, Exponential(3), seed=2)
    col = [G[1 + g, 1] for g in range(5)]
    assert col == list(np.cumsum([env.W[1 + g, 1] for g in range(5)]))


@pytest.mark.parametrize("seed", range(5))
def test_slowed_events_equal_recursion(seed):
    for n in range(1, 7):
        for m in range(0, 7):
            a, env = slowed_passage_times(n, m, 6, 0.8, Exponential(3), seed, method="events")
            b, _ = slowed_passage_times(n, m, 6, 0.8, Exponential(3), seed, method="recursion",
                                        env=env)
            np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_slowed_equals_restricted_lpp(seed):
    n = m = 5
    G, env = slowed_passage_times(n, m, m, 1.0, Exponential(3), seed)
    P = passage_table(env, m)
    filled = ~np.isnan(G)
    assert filled.sum() > 0
    assert np.array_equal(G[filled], P[filled])


def test_slowed_boundary():
    G, env = slowed_passage_times(4, 3, 3, 1.0, Constant(), 1)
    # first particle: cumulative sums down column 1
    acc = 0.0
    for i in range(1, 5):
        acc += env.W[i, 1]
        assert G[i, 1] == acc
    # entries along the diagonal wait for the previous particle to leave the root
    assert G[2, 2] == max(G[2, 1], G[1, 1]) + env.W[2, 2]


def test_slowed_rejects_m_above_M():
    with pytest.raises(ValueError):
        slowed_passage_times(3, 5, 4, 1.0, Constant(), 0)


# exponential sums ---------------------------------------------------------------------------

def test_single_term_is_bracketed():
    b = exp_sum_tail([1.0], 1.0, 0.5)
    exact = 1 - math.exp(-1.0)
    assert b["lower"] <= exact <= b["upper1"]
    assert b["upper2"] == math.inf


@pytest.mark.parametrize("c,terms", [(1.0, 1), (1.0, 5), (2.0, 3), (0.5, 4), (1.0, 20)])
def test_gamma_sum_bracketed(c, terms):
    rng = np.random.default_rng(terms)
    samples = rng.gamma(terms, 1 / c, size=1_000_000)
    S = terms / c
    for t in (0.5 * S, S, 2 * S):
        emp = float(np.mean(samples <= t))
        se = math.sqrt(max(emp * (1 - emp), 1e-6) / len(samples))
        b = exp_sum_tail([c] * terms, t, 0.5)
        assert b["lower"] - 3 * se <= emp <= min(b["upper1"], b["upper2"]) + 3 * se


def test_delta_to_zero():
    b = exp_sum_tail([1.0, 2.0, 3.0], 2.0, 1e-9)
    assert abs(b["lower"]) < 1e-7 and abs(b["upper1"] - 1) < 1e-7


def test_upper2_literal_form_undershoots_for_slow_rates():
    # the literal second upper bound lacks a factor of order t / (l + 1); with small
    # rates it falls below the exact Gamma probability
    c, terms = 0.01, 2
    t = terms / c / 2
    exact = stats.gamma.cdf(t, terms, scale=1 / c)
    assert exp_sum_tail([c] * terms, t, 0.5)["upper2"] < exact
    # with l + 1 in place of l the bound (c t)^(l+1) e^(l+1) / (l+1)^(l+1) holds
    fixed = (c * t) ** terms * math.e ** terms / terms ** terms
    assert exact <= fixed


def test_exp_sum_validation():
    with pytest.raises(ValueError):
        exp_sum_tail([1.0], 1.0, 1.0)
    with pytest.raises(ValueError):
        exp_sum_tail([1.0, -2.0], 1.0, 0.5)
