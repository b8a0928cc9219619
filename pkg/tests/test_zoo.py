import itertools
from fractions import Fraction

import numpy as np
import pytest

from markov_outliers.chain import stationary_exact, validate_chain
from markov_outliers.districting import (
    EXTREME_4X4,
    GridDistrictingChain,
    bundled_blocks,
    bundled_grid_chain,
    parse_block_table,
)
from markov_outliers.errors import ConfigError
from markov_outliers.oracle import exact_rho
from markov_outliers.significance import run_serial_test
from markov_outliers.zoo import make_cycle, make_iid, make_knn, make_path, random_reversible_chain, zoo_chain

from conftest import paths


def test_knn1_alternates():
    c = make_knn(1)
    assert c.transition == ((0, 1), (1, 0))
    assert c.label == (1, 2)


def test_knn3_regular():
    c = make_knn(3)
    assert c.n_states == 6
    assert set(stationary_exact(c)) == {Fraction(1, 6)}
    assert c.transition[0][3] == Fraction(1, 3) and c.transition[0][1] == 0
    assert exact_rho(c, 2, 1, 0).value == Fraction(1, 2)


def test_iid_two_labels_valid():
    c = make_iid([3, 8])
    assert validate_chain(c).ok
    assert c.transition[0] == c.transition[1]


def test_iid_trajectories_exchangeable():
    c = make_iid([1, 2, 3])
    k = 2
    law = dict(paths(c, k))
    for path, p in law.items():
        for perm in itertools.permutations(path):
            assert law[perm] == p


def test_iid_weighted():
    c = make_iid([1, 2], weights=[1, 3])
    assert stationary_exact(c) == (Fraction(1, 4), Fraction(3, 4))
    assert c.transition[0] == (Fraction(1, 4), Fraction(3, 4))


def test_path_and_cycle():
    assert validate_chain(make_path(5)).ok
    c = make_cycle(2)
    assert c.transition == ((0, 1), (1, 0))
    assert validate_chain(make_cycle(5)).ok


def test_random_chains_valid_and_reproducible():
    for seed in range(30):
        c = random_reversible_chain(5, seed)
        assert c.is_exact
        rep = validate_chain(c)
        assert rep.ok and rep.residuals["detailed_balance"] < 1e-12
        assert len(set(c.label)) == 5
        assert c == random_reversible_chain(5, seed)
    tied = random_reversible_chain(6, 0, labels="ties")
    assert len(set(tied.label)) < 6


def test_zoo_specs():
    assert zoo_chain("knn:2").n_states == 4
    assert zoo_chain("iid:5").label == (1, 2, 3, 4, 5)
    assert zoo_chain("random:4:9") == random_reversible_chain(4, 9)
    assert zoo_chain("grid2x2").D == 2
    for bad in ("nope:3", "knn", "knn:x"):
        with pytest.raises(ConfigError):
            zoo_chain(bad)


# -- districting ------------------------------------------------------------------------

def test_block_table_parsing():
    t = parse_block_table("cell,x,y,pop,votes_a,votes_b\na,0,0,5,3,2\nb,1,0,5,1,4\n")
    assert t.cells == ("a", "b") and t.pop == (5, 5)
    with pytest.raises(ConfigError):
        parse_block_table("id,x,y,pop,votes_a,votes_b\na,0,0,5,3,2\n")
    with pytest.raises(ConfigError):
        parse_block_table("cell,x,y,pop,votes_a,votes_b\na,0,0,5,3,2\nb,0,0,5,1,4\n")


def test_grid_2x2_exactly_reversible():
    g = bundled_grid_chain("2x2")
    chain = g.to_labeled_chain()
    assert chain.n_states == len(g.valid_states()) == 12
    rep = validate_chain(chain)
    assert rep.ok
    # uniform weights and exact rational rows: detailed balance means a symmetric matrix
    P = chain.transition
    for u in range(chain.n_states):
        assert sum(P[u]) == 1
        for v in range(chain.n_states):
            assert P[u][v] == P[v][u]


def test_grid_2x2_walk_matches_exact_chain():
    g = bundled_grid_chain("2x2")
    chain = g.to_labeled_chain()
    idx = {s: i for i, s in enumerate(g.valid_states())}
    rng = np.random.default_rng(1)
    x = g.initial
    counts = np.zeros((12, 12))
    for _ in range(60_000):
        y = g.step(x, rng)
        counts[idx[x], idx[y]] += 1
        x = y
    emp = counts / counts.sum(axis=1, keepdims=True)
    assert np.max(np.abs(emp - chain.P)) < 0.03


def test_disconnecting_move_rejected():
    blocks = parse_block_table(
        "cell,x,y,pop,votes_a,votes_b\n"
        + "".join(f"c{i},{i % 3},{i // 3},1,1,0\n" for i in range(9))
    )
    g = GridDistrictingChain(blocks, 2, 1.0, initial=(1, 1, 1, 2, 1, 2, 2, 2, 2))
    x = g.initial
    # cell 1 links cells 0 and 2 of district 1 along the top row
    y = (1, 2, 1, 2, 1, 2, 2, 2, 2)
    assert g.violation(y) == "district 1 is not contiguous"
    assert g.acceptance(x, 1, 2) == 0


def test_infeasible_parameters_named():
    with pytest.raises(ConfigError, match="infeasible"):
        GridDistrictingChain(bundled_blocks("2x2"), 2, 0.0, initial=(1, 1, 1, 2))
    with pytest.raises(ConfigError):
        GridDistrictingChain(bundled_blocks("2x2"), 5, 0.5)


@pytest.mark.slow
def test_moves_preserve_constraints():
    g = bundled_grid_chain("4x4")
    rng = np.random.default_rng(5)
    x = g.initial
    for _ in range(100_000):
        x = g.step(x, rng)
        assert g.violation(x) is None


def test_label_orientation():
    g = bundled_grid_chain("4x4")
    ext = g.parse_state(EXTREME_4X4)
    assert g.is_valid(ext)
    # low label = more extreme for party A
    assert g.label_of(ext) <= g.label_of(g.initial)
    flipped = bundled_grid_chain("4x4", negate=True)
    assert flipped.label_of(ext) == -g.label_of(ext)
    seats = bundled_grid_chain("4x4", label="seats")
    assert seats.label_of(ext) in {Fraction(-2), Fraction(-3, 2), Fraction(-1)}


def test_extreme_state_is_minimal():
    g = bundled_grid_chain("4x4")
    ext = g.parse_state(EXTREME_4X4)
    states = g.valid_states()
    assert len(states) == 676
    labels = [g.label_of(s) for s in states]
    assert min(labels) == g.label_of(ext)


def test_grid_serial_regression():
    g = bundled_grid_chain("4x4")
    rep = run_serial_test(g, g.parse_state(EXTREME_4X4), 10**4, 1)
    assert rep.observed["epsilon"] == "20/10001"
    assert rep.observed["xi"] == 5505
    assert rep.p_value <= 0.05
