from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chisquare

from markov_outliers.chain import from_dense, stationary_distribution
from markov_outliers.errors import ConfigError
from markov_outliers.montecarlo import path_frequencies, total_variation
from markov_outliers.sampling import (
    RngSeed,
    geometric_length,
    sample_geometric_trajectory,
    sample_parallel,
    sample_serial,
    sample_star_split,
    sample_trajectory,
    sample_trajectory_product,
    sample_two_paths,
)
from markov_outliers.zoo import make_cycle, random_reversible_chain

from conftest import paths


@pytest.fixture
def two_cycle():
    return make_cycle(2)


def test_zero_steps(two_cycle):
    assert sample_trajectory(two_cycle, 1, 0, 5).states == (1,)


def test_deterministic_cycle(two_cycle):
    assert sample_trajectory(two_cycle, 0, 3, 5).states == (0, 1, 0, 1)


def test_symmetric_transition_frequencies():
    c = from_dense([[0.5, 0.5], [0.5, 0.5]])
    path = np.array(sample_trajectory(c, 0, 100_000, RngSeed(3)).states)
    stay = np.count_nonzero(path[1:] == path[:-1])
    n = len(path) - 1
    assert abs(stay / n - 0.5) < 3 * np.sqrt(0.25 / n)


def test_two_paths_shapes(two_cycle):
    s = sample_two_paths(two_cycle, 0, 0, 1)
    assert s.y.states == s.z.states == (0,)
    s = sample_two_paths(two_cycle, 0, 2, 1)
    assert s.y.states == s.z.states == (0, 1, 0)


@pytest.mark.slow
def test_two_path_concatenation_is_stationary_trajectory():
    c = random_reversible_chain(3, 5)
    k = 1
    exact = {p: float(w) for p, w in paths(c, 2 * k)}
    pi = stationary_distribution(c)
    g = np.random.default_rng(9)
    counts = {}
    n = 200_000
    starts = g.choice(c.n_states, size=n, p=pi)
    for i, s0 in enumerate(starts[:n]):
        t = sample_two_paths(c, int(s0), k, RngSeed(17), i).as_trajectory().states
        counts[t] = counts.get(t, 0) + 1
    emp = {p: v / n for p, v in counts.items()}
    assert set(emp) <= set(exact)
    assert total_variation(emp, exact) < 0.01


def test_star_split_structure(two_cycle):
    s = sample_star_split(two_cycle, 0, 2, 3, RngSeed(4))
    assert 1 <= s.xi <= 2
    assert len(s.pre_branch) == s.xi and len(s.side) == 2 - s.xi
    assert len(s.branches) == 2
    hub = s.split_state
    for b in s.branches:
        assert len(b) == 2 and b[0] == 1 - hub
    assert len(s.comparison_states()) == 2 * 3


def test_star_split_k1_forces_xi():
    c = random_reversible_chain(4, 1)
    for i in range(20):
        s = sample_star_split(c, 0, 1, 2, 0, i)
        assert s.xi == 1 and len(s.pre_branch) == 1 and s.side == ()


def test_star_split_m1_has_no_branches():
    c = random_reversible_chain(4, 1)
    s = sample_star_split(c, 0, 3, 1, 0)
    assert s.branches == ()
    assert len(s.comparison_states()) == 3


def test_serial_split_range():
    c = random_reversible_chain(4, 2)
    xs = {sample_serial(c, 0, 3, 0, i).xi for i in range(200)}
    assert xs == {0, 1, 2, 3}


def test_parallel_branches_share_hub(two_cycle):
    s = sample_parallel(two_cycle, 0, 3, 4, 0)
    assert s.stem == (1, 0, 1)
    assert all(b == (0, 1, 0) for b in s.branches)
    assert len(s.comparison_states()) == 4


def test_geometric_mean():
    g = np.random.default_rng(2)
    ks = np.array([geometric_length(5.0, g).realized_k for _ in range(200_000)])
    sd = np.sqrt(5.0 * 6.0 / len(ks))
    assert abs(ks.mean() - 5.0) < 3 * sd


def test_geometric_pmf_shape():
    g = np.random.default_rng(3)
    ks = np.array([geometric_length(1.0, g).realized_k for _ in range(100_000)])
    assert abs(np.mean(ks == 0) - 0.5) < 0.01
    g = np.random.default_rng(4)
    ks = np.array([geometric_length(3.0, g).realized_k for _ in range(400_000)])
    c = np.bincount(ks)
    assert c[1] / c[0] == pytest.approx(0.75, abs=0.01)
    assert c[2] / c[1] == pytest.approx(0.75, abs=0.01)


def test_geometric_cap_is_flagged():
    c = random_reversible_chain(3, 0)
    seen = False
    for i in range(50):
        s = sample_geometric_trajectory(c, 0, 50.0, 1, i, cap=5)
        assert s.length.realized_k <= 5
        assert len(s.trajectory) == s.length.realized_k + 1
        seen |= s.length.truncated
    assert seen


def test_geometric_rejects_bad_mu():
    with pytest.raises(ConfigError):
        geometric_length(0.0, np.random.default_rng(0))


def test_reproducible_and_stream_sensitive():
    c = random_reversible_chain(5, 6)
    a = sample_trajectory(c, 0, 50, RngSeed(1, 0))
    assert a == sample_trajectory(c, 0, 50, RngSeed(1, 0))
    assert a != sample_trajectory(c, 0, 50, RngSeed(1, 1))
    assert a != sample_trajectory(c, 0, 50, RngSeed(1, 0), index=1)


def test_streams_uncorrelated():
    c = from_dense([[0.5, 0.5], [0.5, 0.5]])
    a = np.array(sample_trajectory(c, 0, 20_000, RngSeed(5, 0)).states)
    b = np.array(sample_trajectory(c, 0, 20_000, RngSeed(5, 1)).states)
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) < 4 / np.sqrt(len(a))


def test_seed_range_checked():
    with pytest.raises(ConfigError):
        RngSeed(-1)
    with pytest.raises(ConfigError):
        RngSeed(0, 2**64)


@pytest.mark.slow
def test_stationary_marginals_chi_square():
    c = random_reversible_chain(4, 12)
    pi = stationary_distribution(c)
    g = np.random.default_rng(0)
    n = 1_000_000
    paths_ = c.walk_batch(g.choice(4, size=n, p=pi), 3, g)
    for col in range(4):
        obs = np.bincount(paths_[:, col], minlength=4)
        assert chisquare(obs, pi * n).pvalue > 1e-3


@pytest.mark.slow
def test_reversal_symmetry():
    c = random_reversible_chain(3, 7)
    f = path_frequencies(c, 2, 1_000_000, seed=3)
    r = {tuple(reversed(p)): v for p, v in f.items()}
    assert total_variation(f, r) < 0.01


def test_product_d1_matches_pivot_structure():
    c = random_reversible_chain(4, 3)
    s = sample_trajectory_product([c], [2], [3], rng=0)
    (t,) = s.trajectories
    assert len(t) == 4 and t.states[s.pivots[0]] == 2


def test_product_fixed_pivot_at_end():
    c = random_reversible_chain(4, 3)
    s = sample_trajectory_product([c, c], [1, 2], [2, 3], pivots=(2, 3), rng=0)
    assert s.sigma0 == (1, 2)
    assert s.trajectories[0].states[-1] == 1 and s.trajectories[1].states[-1] == 2


def test_product_two_cycles_enumerable(two_cycle):
    seen = set()
    for i in range(100):
        s = sample_trajectory_product([two_cycle, two_cycle], [0, 1], [1, 1], rng=0, index=i)
        seen.add((s.pivots, tuple(t.states for t in s.trajectories)))
    expected = {
        ((0, 0), ((0, 1), (1, 0))),
        ((0, 1), ((0, 1), (0, 1))),
        ((1, 0), ((1, 0), (1, 0))),
        ((1, 1), ((1, 0), (0, 1))),
    }
    assert seen == expected


def test_product_rejects_mismatch():
    c = make_cycle(3)
    with pytest.raises(ConfigError):
        sample_trajectory_product([c, c], [0], [1, 1])
    with pytest.raises(ConfigError):
        sample_trajectory_product([c], [0], [1], pivots=(2,))
