import json
from fractions import Fraction

import numpy as np
import pytest

from markov_outliers.chain import (
    LabeledChain,
    build_from_edge_list,
    dumps_chain,
    from_dense,
    load_chain,
    loads_chain,
    stationary_distribution,
    stationary_exact,
    validate_chain,
)
from markov_outliers.errors import ConfigError, IsolatedVertexError
from markov_outliers.zoo import random_reversible_chain

K33 = [(a, b, 1) for a in range(3) for b in range(3, 6)]


def test_symmetric_two_state_is_valid():
    c = from_dense([[0.5, 0.5], [0.5, 0.5]], stationary=[1, 1])
    rep = validate_chain(c)
    assert rep.ok
    assert rep.residuals["detailed_balance"] == 0.0


def test_detailed_balance_violation_reports_residual():
    c = from_dense([[0, 1], [0.5, 0.5]], stationary=[1, 1])
    rep = validate_chain(c)
    assert not rep.ok
    (v,) = [v for v in rep.violations if v.check == "detailed_balance"]
    assert v.max_residual == pytest.approx(0.5)


def test_row_sum_violation():
    c = LabeledChain(((0.5, 0.4), (0.5, 0.5)), (1, 1), (0, 1))
    checks = {v.check for v in validate_chain(c).violations}
    assert "row_stochastic" in checks


def test_k33_walk_is_valid_and_uniform():
    c = build_from_edge_list(K33)
    assert validate_chain(c).ok
    for a in range(3):
        for b in range(3, 6):
            assert c.transition[a][b] == Fraction(1, 3)
    assert stationary_exact(c) == (Fraction(1, 6),) * 6


def test_triangle():
    c = build_from_edge_list([(0, 1, 1), (1, 2, 1), (0, 2, 1)])
    assert c.transition[0][1] == c.transition[0][2] == Fraction(1, 2)
    assert c.stationary_weight == (2, 2, 2)


def test_path_graph_degrees():
    c = build_from_edge_list([(0, 1, 1), (1, 2, 1)])
    assert c.stationary_weight == (1, 2, 1)
    assert c.transition[1][0] == c.transition[1][2] == Fraction(1, 2)
    np.testing.assert_allclose(stationary_distribution(c), [0.25, 0.5, 0.25])


def test_symmetric_two_state_stationary():
    c = from_dense([[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(stationary_distribution(c), [0.5, 0.5])


def test_four_state_fixed_point():
    c = random_reversible_chain(4, 11)
    pi = stationary_distribution(c)
    assert abs(pi.sum() - 1) < 1e-12
    assert np.max(np.abs(pi @ c.P - pi)) < 1e-10


def test_isolated_vertex_rejected():
    with pytest.raises(IsolatedVertexError) as err:
        build_from_edge_list([(0, 1, 1)], n_states=3)
    assert err.value.vertex == 2


@pytest.mark.parametrize("bad", [[(0, 1, 0)], [(0, 1, -1)], [(0, 1)], [(-1, 1, 1)]])
def test_bad_edges_rejected(bad):
    with pytest.raises(ConfigError):
        build_from_edge_list(bad)


def test_edge_order_does_not_matter():
    edges = [(0, 1, 2), (1, 2, 1), (2, 3, 3), (0, 3, 1), (1, 1, 1)]
    rev = [(v, u, w) for u, v, w in reversed(edges)]
    assert build_from_edge_list(edges, [4, 3, 2, 1]) == build_from_edge_list(rev, [4, 3, 2, 1])


def test_dense_round_trip_is_exact():
    c = from_dense([[0.25, 0.75], [0.375, 0.625]], labels=[1.5, -2], state_ids=["a", "b"])
    back = loads_chain(dumps_chain(c))
    assert back == c


def test_edge_round_trip():
    c = random_reversible_chain(5, 3)
    back = loads_chain(dumps_chain(c))
    assert back.edges == c.edges
    np.testing.assert_allclose(back.P, c.P, atol=1e-15)
    assert back.label == c.label


def test_document_rejects_unknown_fields(tmp_path):
    doc = {"states": [{"id": 0, "label": 1}], "matrix": [[1]], "extra": 1}
    with pytest.raises(ConfigError):
        loads_chain(json.dumps(doc))
    doc = {"states": [{"id": 0, "label": 1}], "matrix": [[1]], "edges": []}
    with pytest.raises(ConfigError):
        loads_chain(json.dumps(doc))
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"states": [{"id": "x", "label": "1/3"}], "matrix": [["1"]]}))
    c = load_chain(p)
    assert c.label == (Fraction(1, 3),) and c.state_ids == ("x",)


def test_rational_strings_stay_exact():
    doc = {"states": [{"id": 0, "label": 0}, {"id": 1, "label": 1}],
           "matrix": [["1/3", "2/3"], ["1/3", "2/3"]]}
    c = loads_chain(json.dumps(doc))
    assert c.is_exact
    assert stationary_exact(c) == (Fraction(1, 3), Fraction(2, 3))


def test_nonreversible_dense_flagged():
    c = from_dense([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    rep = validate_chain(c)
    assert not rep.ok


def test_walk_follows_positive_entries():
    c = random_reversible_chain(5, 8)
    g = np.random.default_rng(0)
    path = c.walk(0, 200, g)
    assert len(path) == 201
    for u, v in zip(path, path[1:]):
        assert c.transition[u][v] > 0
