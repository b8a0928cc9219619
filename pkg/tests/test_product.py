import itertools
import json
import math
from fractions import Fraction

import pytest

from markov_outliers import oracle
from markov_outliers.audit import audit_product, audit_product_uniform_pivot
from markov_outliers.errors import BudgetExceeded, ConfigError, ValueExplosion
from markov_outliers.product import (
    ProductChain,
    RegionHistogram,
    brute_force_count,
    convolve_histograms,
    count_event,
    dump_histograms,
    epsilon_from_event,
    parse_histograms,
    rank_in_product,
    run_product_serial_test,
    run_product_two_path_test,
    run_product_uniform_pivot_test,
)
from markov_outliers.sampling import sample_trajectory_product
from markov_outliers.zoo import make_iid, make_knn, random_reversible_chain

F = Fraction


def _expanded_count(hists, delta):
    """Count by listing every individual outcome, not value classes."""
    outcomes = [[v for v, c in h.items() for _ in range(c)] for h in hists]
    return sum(1 for combo in itertools.product(*outcomes) if sum(combo) <= delta)


def test_prefix_sum_d1():
    ev = count_event([{1: 4, 2: 5, 3: 6}], 2)
    assert (ev.count, ev.total) == (9, 15)


def test_two_region_example():
    h = {1: 2, 2: 3, 3: 5}
    ev = count_event([h, h], 4)
    assert (ev.count, ev.total) == (45, 100)
    assert epsilon_from_event(ev) == F(9, 20)
    assert _expanded_count([h, h], 4) == 45


def test_single_value_regions():
    ev = count_event([{7: 3}] * 4, 28)
    assert ev.count == ev.total == 81
    assert ev.epsilon == 1


def test_delta_below_minimum():
    ev = count_event([{2: 1, 5: 2}, {1: 3}], 2)
    assert ev.count == 0 and ev.epsilon == 0


def test_unique_minimum_gives_one_over_L_to_the_d():
    L, d = 6, 3
    h = {0: 1, 1: 2, 2: 3}
    assert sum(h.values()) == L
    ev = count_event([h] * d, 0)
    assert ev.epsilon == F(1, L**d)


def test_brute_force_agreement_small():
    hs = [{-1: 2, 0: 1, 3: 4}, {F(1, 2): 3, 2: 1}, {0: 5, 1: 1, 2: 2}]
    for delta in [-2, -1, F(1, 2), 1, 2, 3, 5, 9]:
        ev = count_event(hs, delta)
        assert ev.count == brute_force_count(hs, delta).count == _expanded_count(hs, delta)


def test_pairing_order_irrelevant():
    hs = [{0: 1, 2: 3}, {1: 2, 3: 1}, {0: 4, 5: 1}, {2: 2, 4: 2}, {1: 1}]
    base = count_event(hs, 7).count
    for perm in itertools.permutations(range(5)):
        assert count_event(hs, 7, pairing=perm).count == base


def test_full_distribution_without_delta():
    dist = convolve_histograms([RegionHistogram({0: 1, 1: 1})] * 3)
    assert dist == {0: 1, 1: 3, 2: 3, 3: 1}


def test_value_explosion_refused():
    hs = [{i: 1 for i in range(0, 1000, 1)}, {i * 1000: 1 for i in range(1000)}]
    with pytest.raises(ValueExplosion) as err:
        count_event(hs, 10**9, max_values=1000)
    assert "binning" in str(err.value)


def test_histogram_validation():
    with pytest.raises(ConfigError):
        RegionHistogram({1: -1})
    with pytest.raises(ConfigError):
        RegionHistogram({1: 0})
    with pytest.raises(ConfigError):
        parse_histograms({"a": {"x": 1}})


def test_histogram_round_trip():
    hs = parse_histograms({"north": {"1": 2, "3/2": 4}, "south": {"0": 1, "-2": 5}})
    back = parse_histograms(json.loads(dump_histograms(hs)))
    assert [h.counts for h in back] == [h.counts for h in hs]
    assert [h.region for h in back] == ["north", "south"]


def test_float_labels_are_exact_keys():
    h = RegionHistogram({0.1: 1, 0.2: 1})
    ev = count_event([h, h], 0.30000000000000004)
    assert ev.count == brute_force_count([h, h], 0.30000000000000004).count


def test_sum_fast_path_matches_explicit_labels():
    a, b = random_reversible_chain(4, 1), random_reversible_chain(3, 2)
    fast = ProductChain((a, b))
    slow = ProductChain((a, b), lambda st: a.label_of(st[0]) + b.label_of(st[1]))
    for i in range(40):
        s = sample_trajectory_product([a, b], [0, 1], [3, 2], rng=5, index=i)
        o1 = rank_in_product(fast, s, "product-serial")
        o2 = rank_in_product(slow, s, "product-serial")
        assert (o1.count_leq, o1.n_total) == (o2.count_leq, o2.n_total)


def test_explicit_labels_respect_budget():
    a = random_reversible_chain(3, 1)
    p = ProductChain((a, a), {(i, j): i * j for i in range(3) for j in range(3)})
    s = sample_trajectory_product([a, a], [0, 0], [3, 3], rng=0)
    with pytest.raises(BudgetExceeded):
        rank_in_product(p, s, "product-serial", budget=10)


def test_serial_product_k0():
    a = random_reversible_chain(3, 1)
    rep = run_product_serial_test(ProductChain((a, a)), (0, 1), 0, 3)
    assert rep.observed["epsilon"] == "1" and rep.p_value == 1.0


def test_serial_product_d1_shape():
    a = random_reversible_chain(4, 2)
    rep = run_product_serial_test(ProductChain((a,)), (1,), 5, 3)
    assert rep.observed["n_total"] == 6 and rep.bound_formula == "eps"
    assert rep.recompute() == rep.p_value


def test_two_path_product_penalty():
    a = make_knn(3)
    rep = run_product_two_path_test(ProductChain((a, a)), (0, 3), 1, 4, epsilon=F(1, 9))
    assert rep.params["d"] == 2 and rep.observed["n_total"] == 9
    assert rep.nominal["p_value"] == pytest.approx(4 / 9)
    assert rep.p_value == min(1.0, 4 * float(F(rep.observed["epsilon"])))


def test_two_path_product_d1_matches_two_path_bound():
    a = random_reversible_chain(4, 6)
    rep = run_product_two_path_test(ProductChain((a,)), (0,), 2, 1)
    assert rep.p_value == min(1.0, 2 * float(F(rep.observed["epsilon"])))


def test_uniform_pivot_single_sample():
    a = random_reversible_chain(3, 3)
    rep = run_product_uniform_pivot_test(ProductChain((a, a)), (0, 2), (2, 1), F(1, 2), 1, 1, 9)
    eps = F(rep.observed["epsilon"])
    assert rep.p_value == pytest.approx(min(1.0, float(eps) * 2))
    rep = run_product_uniform_pivot_test(ProductChain((a, a)), (0, 2), (2, 1), 1, 5, 3, 9)
    from markov_outliers.significance import binomial_tail
    assert rep.p_value == binomial_tail(5, 3, float(F(rep.observed["epsilon"])))


def test_uniform_pivot_workers_identical():
    a = random_reversible_chain(3, 3)
    p = ProductChain((a, a))
    r1 = run_product_uniform_pivot_test(p, (0, 2), (2, 2), F(1, 2), 6, 3, 9, workers=1)
    r2 = run_product_uniform_pivot_test(p, (0, 2), (2, 2), F(1, 2), 6, 3, 9, workers=2)
    assert r1.to_json() == r2.to_json()


def test_product_argument_checks():
    a = random_reversible_chain(3, 3)
    with pytest.raises(ConfigError):
        run_product_serial_test(ProductChain((a, a)), (0,), 1, 0)
    with pytest.raises(ConfigError):
        run_product_uniform_pivot_test(ProductChain((a, a)), (0, 0), (1,), 1, 2, 1, 0)
    with pytest.raises(ConfigError):
        ProductChain(())


# -- exact product quantities ---------------------------------------------------------

def test_product_rho_d1_is_rho():
    c = random_reversible_chain(4, 5)
    for k, j, l in [(2, 1, 0), (3, 0, 2), (2, 2, 1)]:
        assert oracle.exact_product_rho([c], (k,), (j,), l).value == oracle.exact_rho(c, k, j, l).value


def test_product_rho_sum_iid():
    a, b = make_iid([0, 1]), make_iid([0, 2])
    table = oracle.product_rho_table([a, b], (1, 1))
    assert len(table) == 4
    for l in range(4):
        assert sum(sum(law[: l + 1]) for law in table.values()) <= l + 1


def test_knn_product_two_path():
    a = make_knn(3)
    v = oracle.exact_product_two_path_probability([a, a], 1, F(1, 9)).value
    assert v <= F(4, 9)


def test_product_serial_exact_bound():
    a, b = random_reversible_chain(3, 7), make_knn(2)
    for k in (1, 2):
        n = (k + 1) ** 2
        for i in range(1, n + 1):
            assert oracle.exact_product_serial_probability([a, b], k, F(i, n)).value <= F(i, n)


def test_audit_product_passes():
    res = audit_product([random_reversible_chain(3, 1), random_reversible_chain(3, 2)])
    assert res.ok and res.checks
    assert {c.name for c in res.checks} == {"product_serial", "product_two_path", "product_sum", "product_interval"}


def test_product_uniform_pivot_claim():
    p = ProductChain((random_reversible_chain(3, 4), make_iid([0, 1])))
    res = audit_product_uniform_pivot(p, (1, 1), [F(1, 4), F(1, 2)])
    assert res.ok and res.checks
