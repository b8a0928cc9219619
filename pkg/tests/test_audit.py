import pytest

from markov_outliers.audit import CHECKS, audit_chain
from markov_outliers.chain import build_from_edge_list, from_dense
from markov_outliers.zoo import make_iid, make_knn, random_reversible_chain


def test_knn_full_audit():
    res = audit_chain(make_knn(3), k_max=3, tree_k_max=2, tree_m_max=3)
    assert res.ok
    assert set(res.summary()) == set(CHECKS)


def test_random_chain_full_audit():
    res = audit_chain(random_reversible_chain(4, 3), k_max=3, tree_k_max=2, tree_m_max=2)
    assert res.ok, [c.to_dict() for c in res.violations][:3]


def test_tied_chain_audit():
    res = audit_chain(random_reversible_chain(4, 8, labels="ties"), k_max=3, tree_k_max=2, tree_m_max=2)
    assert res.ok


def test_float_chain_audit():
    c = build_from_edge_list([(0, 1, 0.3), (1, 2, 0.7), (0, 2, 1.1), (2, 2, 0.2)], [0.5, -1.0, 2.0])
    res = audit_chain(c, k_max=2, checks=("sum", "interval", "two_path", "single", "key"))
    assert res.ok


def test_two_path_check_is_strict():
    res = audit_chain(make_iid([1, 2]), k_max=2, checks=("two_path",))
    assert all(c.relation == "<" for c in res.checks)
    assert res.ok


def test_violation_detected_on_nonreversible_chain():
    # the bounds need reversibility; a deterministic 3-cycle breaks the key and serial ones
    c = from_dense([[0, 1, 0], [0, 0, 1], [1, 0, 0]], labels=[0, 1, 2], stationary=[1, 1, 1])
    res = audit_chain(c, k_max=3, checks=("key", "serial"))
    assert not res.ok
    names = {v.name for v in res.violations}
    assert names == {"key", "serial"}


def test_unknown_check_rejected():
    with pytest.raises(ValueError):
        audit_chain(make_iid([1, 2]), checks=("bogus",))


def test_check_records_serialize():
    res = audit_chain(make_knn(2), k_max=1, checks=("single",))
    d = res.checks[0].to_dict()
    assert set(d) == {"name", "params", "lhs", "rhs", "relation", "passed"}
    assert isinstance(d["params"]["epsilon"], str)
