import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treetasep.lpp import (LppEnvironment, LppError, batch_passage, build_env, in_region,
                           optimal_path, passage_table, passage_time, passage_time_restricted,
                           tail_check, write_table)
from treetasep.rates import Constant, Exponential, RegularProfile


def _paths(i, j):
    """All up-right paths from (1,1) to (i,j) as lists of cells (enumeration oracle)."""
    for ups in itertools.combinations(range(i + j - 2), i - 1):
        a, b, cells = 1, 1, [(1, 1)]
        for k in range(i + j - 2):
            if k in ups:
                a += 1
            else:
                b += 1
            cells.append((a, b))
        yield cells


def brute(env, i, j, m=None):
    best = -math.inf
    for cells in _paths(i, j):
        if m is not None and not all(in_region(a, b, m) for a, b in cells):
            continue
        best = max(best, math.fsum(env.w(a, b) for a, b in cells))
    return best


def random_env(I, J, seed):
    rng = np.random.default_rng(seed)
    return LppEnvironment.from_weights(rng.exponential(size=(I, J)))


def test_path_count():
    assert len(list(_paths(4, 4))) == 20


def test_boundary_values():
    env = random_env(4, 5, 0)
    assert passage_time(env, 1, 1) == env.w(1, 1)
    for ell in range(1, 6):
        assert math.isclose(passage_time(env, 1, ell), sum(env.w(1, j) for j in range(1, ell + 1)))


@pytest.mark.parametrize("seed", range(10))
def test_dp_matches_enumeration(seed):
    env = random_env(4, 4, seed)
    G = passage_table(env)
    for i in range(1, 5):
        for j in range(1, 5):
            assert math.isclose(G[i, j], brute(env, i, j), rel_tol=1e-13)
    assert math.isclose(passage_time(env, 4, 4), brute(env, 4, 4), rel_tol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_restricted_matches_enumeration(seed):
    env = random_env(5, 5, seed)
    for m in range(0, 5):
        for i in range(1, 6):
            for j in range(max(1, i - m), 6):
                assert math.isclose(passage_time_restricted(env, i, j, m), brute(env, i, j, m),
                                    rel_tol=1e-13)


def test_restricted_staircase():
    env = random_env(4, 4, 3)
    # m = 0: paths stay on or above the diagonal
    G = passage_table(env, 0)
    assert math.isnan(G[2, 1])
    assert math.isclose(G[4, 4], brute(env, 4, 4, 0))
    with pytest.raises(LppError):
        passage_time_restricted(env, 3, 1, 0)


def test_restricted_inactive_region():
    env = random_env(5, 6, 1)
    for i in range(1, 6):
        for j in range(1, 7):
            assert passage_time_restricted(env, i, j, 10) == passage_time(env, i, j)


def test_bounds_checked():
    env = random_env(3, 3, 0)
    with pytest.raises(LppError):
        passage_time(env, 4, 1)
    with pytest.raises(LppError):
        passage_table(env, -1)


# built environments ----------------------------------------------------------------------

def test_zero_above_diagonal():
    env = build_env(6, 6, 1.0, Exponential(3), 0)
    for i in range(1, 7):
        for j in range(i + 1, 7):
            assert env.w(i, j) == 0.0


@pytest.mark.parametrize("d", [3, 4])
def test_cell_three_one(d):
    env = build_env(4, 2, 1.0, Exponential(d), 5)
    assert env.w(3, 1) == (d - 1) ** 2 * env.omega[3, 1]
    assert env.w(2, 1) == (d - 1) * env.omega[2, 1]


def test_profile_and_family_agree():
    a = build_env(6, 3, 0.7, Exponential(3), 2)
    b = build_env(6, 3, 0.7, RegularProfile(Exponential(3), 3), 2)
    assert np.array_equal(a.W, b.W)
    with pytest.raises(LppError):
        build_env(3, 3, 0.0, Constant(), 0)


def test_diagonal_mean():
    lam = 2.5
    draws = np.concatenate([np.diag(build_env(100, 100, lam, Constant(), s).W)[1:]
                            for s in range(1000)])
    assert len(draws) == 100_000
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - 1 / lam) <= 3 * se


@pytest.mark.parametrize("seed", range(5))
def test_restricted_on_built_env_matches_enumeration(seed):
    # targets (n + m', n) with m' <= m on 5 x 8 built instances
    env = build_env(8, 5, 1.0, Exponential(3), seed)
    for n in range(1, 6):
        for mp in range(0, 8 - n + 1):
            for m in range(mp, 8):
                assert math.isclose(passage_time_restricted(env, n + mp, n, m),
                                    brute(env, n + mp, n, m), rel_tol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_optimal_paths_avoid_zero_region(seed):
    env = build_env(12, 6, 1.0, Exponential(3), seed)
    for n in range(1, 7):
        # A_0 = {j >= i} forces a staircase through zero cells, so m starts at 1
        for m in range(1, 7):
            path = optimal_path(env, n + m, n, m)
            assert path[0] == (1, 1) and path[-1] == (n + m, n)
            assert all(b <= a for a, b in path)
            assert all(in_region(a, b, m) for a, b in path)
            assert math.isclose(math.fsum(env.w(a, b) for a, b in path),
                                passage_time_restricted(env, n + m, n, m), rel_tol=1e-13)


# properties ----------------------------------------------------------------------------------

@given(seed=st.integers(0, 10 ** 6), i=st.integers(1, 6), j=st.integers(1, 6),
       bump=st.floats(0.0, 10.0), m=st.one_of(st.none(), st.integers(0, 6)))
@settings(max_examples=100, deadline=None)
def test_monotone_in_weights(seed, i, j, bump, m):
    env = random_env(6, 6, seed)
    before = passage_table(env, m)
    W = env.W.copy()
    W[i, j] += bump
    after = passage_table(LppEnvironment(W), m)
    ok = ~np.isnan(before)
    assert np.all(after[ok] >= before[ok])


def test_superadditivity_in_distribution():
    # G(2i, 2j) >= G(i, j) + (value of the shifted block), on every sample
    rng = np.random.default_rng(0)
    S, i, j = 2000, 5, 5
    W = np.zeros((S, 2 * i + 1, 2 * j + 1))
    W[:, 1:, 1:] = rng.exponential(size=(S, 2 * i, 2 * j))
    big = batch_passage(W)[:, 2 * i, 2 * j]
    first = batch_passage(W[:, : i + 1, : j + 1])[:, i, j]
    block = np.zeros((S, i + 1, j + 1))
    block[:, 1:, 1:] = W[:, i + 1:, j + 1:]
    second = batch_passage(block)[:, i, j]
    assert np.all(big >= first + second - 1e-12)


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    W = np.zeros((4, 7, 5))
    W[:, 1:, 1:] = rng.exponential(size=(4, 6, 4))
    for m in (None, 0, 2):
        G = batch_passage(W, m)
        for s in range(4):
            np.testing.assert_array_equal(G[s], passage_table(LppEnvironment(W[s]), m))


# tail estimate -------------------------------------------------------------------------------

def test_tail_check_constant_rates():
    prof = RegularProfile(Constant(), 3)
    M = math.ceil((1 / (3 - 2) + 1 + 0.1) * 30)
    rep = tail_check(prof, 30, M, 1.0, 1000)
    assert rep.exceed_rate <= 0.05


def test_tail_check_large_alpha_and_small_n():
    prof = RegularProfile(Exponential(3), 3)
    assert tail_check(prof, 5, 6, 1e6, 200).exceed_rate == 0.0
    # n = 1, M = 0: G is a single Exp(1) draw, so the exceedance rate is exp(-threshold)
    rep = tail_check(prof, 1, 0, 1.0, 20_000)
    p = math.exp(-rep.threshold)
    assert abs(rep.exceed_rate - p) <= 4 * math.sqrt(p / rep.samples)
    with pytest.raises(LppError):
        tail_check(prof, 5, 6, 0.0, 10)


# files -----------------------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    env = build_env(5, 4, 1.0, Exponential(3), 9)
    env.to_csv(tmp_path / "env.csv")
    back = LppEnvironment.from_csv(tmp_path / "env.csv")
    np.testing.assert_array_equal(back.W, env.W)
    write_table(passage_table(env, 2), tmp_path / "G.csv")
    lines = (tmp_path / "G.csv").read_text().splitlines()
    assert lines[0] == "i,j,G"
    assert all(int(r.split(",")[1]) >= int(r.split(",")[0]) - 2 for r in lines[1:])
