import json
import math
from fractions import Fraction

import numpy as np
import pytest

from markov_outliers.errors import ConfigError, ShapeMismatch
from markov_outliers.significance import (
    binomial_tail,
    chernoff_tail,
    evaluate_bound,
    observe_outlier,
    p_parallel,
    p_serial,
    p_single_trajectory,
    p_star_split,
    p_two_paths,
    report_from_dict,
    run_geometric_outlier_test,
    run_outlier_test,
    run_parallel_test,
    run_serial_test,
    run_single_trajectory_test,
    run_star_split_test,
    run_two_path_test,
    select_epsilon_t,
)
from markov_outliers.zoo import make_iid, make_knn, random_reversible_chain


def test_observe_counts_ties_and_self():
    o = observe_outlier(5, [5, 3, 7, 9, 2])
    assert (o.count_leq, o.n_total, o.epsilon_obs) == (3, 5, Fraction(3, 5))
    assert o.is_outlier(Fraction(3, 5)) and not o.is_outlier(Fraction(1, 2))


def test_observe_unique_minimum():
    assert observe_outlier(0, [0, 1, 2, 3]).epsilon_obs == Fraction(1, 4)


def test_observe_all_equal():
    assert observe_outlier(1, [1, 1, 1, 1]).epsilon_obs == 1


def test_observe_requires_pivot():
    with pytest.raises(ConfigError):
        observe_outlier(0, [1, 2])
    with pytest.raises(ConfigError):
        observe_outlier(0, [])


def test_observe_tie_break_range():
    g = np.random.default_rng(0)
    counts = {observe_outlier(1, [1, 1, 1, 0], tie_break=g).count_leq for _ in range(200)}
    assert counts == {2, 3, 4}


@pytest.mark.parametrize("eps,expected", [(0.02, 0.2), (0.5, 1.0), (1 / (2 * 10**6), 1e-3)])
def test_single_trajectory_bound(eps, expected):
    assert p_single_trajectory(eps) == pytest.approx(expected, rel=1e-12)


def test_serial_and_parallel_identity():
    assert p_serial(0.01) == 0.01
    assert p_serial(1) == 1.0
    assert p_parallel(Fraction(1, 2)) == 0.5
    assert p_star_split(Fraction(1, 7)) == pytest.approx(1 / 7)


def test_two_path_bound():
    assert p_two_paths(Fraction(1, 20001)) == pytest.approx(2 / 20001)
    assert p_two_paths(Fraction(1, 3)) == pytest.approx(2 / 3)
    assert p_two_paths(0.6) == 1.0


def test_shape_mismatch_refused():
    obs = observe_outlier(0, [0, 1, 2], shape="two-path")
    with pytest.raises(ShapeMismatch) as err:
        p_serial(obs)
    assert err.value.expected == "serial"
    assert p_two_paths(obs) == pytest.approx(2 / 3)


def test_epsilon_range_checked():
    with pytest.raises(ConfigError):
        p_serial(0)
    with pytest.raises(ConfigError):
        p_serial(1.5)


def test_binomial_tail_values():
    assert binomial_tail(7, 0, 0.3) == 1.0
    assert binomial_tail(2, 2, 0.1) == pytest.approx(0.01)
    assert binomial_tail(10, 10, 0.2) == pytest.approx(1.024e-7)
    assert binomial_tail(5, 3, 0.0) == 0.0


def test_binomial_tail_matches_direct_sum():
    for m, K, q in [(12, 4, 0.3), (40, 30, 0.55), (7, 1, 0.01)]:
        direct = math.fsum(math.comb(m, j) * q**j * (1 - q) ** (m - j) for j in range(K, m + 1))
        assert binomial_tail(m, K, q) == pytest.approx(direct, rel=1e-10)


def test_binomial_tail_large_m_is_stable():
    v = binomial_tail(10**6, 1000, 1e-3)
    assert 0.4 < v < 0.6
    assert binomial_tail(10**6, 2000, 1e-3) < 1e-100


def test_chernoff_branches():
    # r/3 branch when the quadratic term is larger
    assert chernoff_tail(1, 0.01, 1.0, 3.0) == pytest.approx(math.exp(-1.0))
    m, eps, a, r = 100, 1e-4, 1e-2, 30.0
    quad = r * r * math.sqrt(a / (2 * eps)) / (3 * m)
    assert chernoff_tail(m, eps, a, r) == pytest.approx(math.exp(-min(quad, r / 3)))
    geo = r * r * math.sqrt(a / eps) / (3 * m)
    assert chernoff_tail(m, eps, a, r, "geometric") == pytest.approx(math.exp(-min(geo, r / 3)))
    # both forms bound the exact tail at rho = m q + r
    q = math.sqrt(2 * eps / a)
    assert binomial_tail(m, math.ceil(m * q + r), q) <= chernoff_tail(m, eps, a, r)


def test_chernoff_refuses_vacuous():
    with pytest.raises(ConfigError):
        chernoff_tail(10, 0.1, 0.5, 0.0)
    assert chernoff_tail(10, 0.1, 0.5, 1e-9) <= 1.0


def test_select_epsilon_t():
    assert select_epsilon_t([0.3, 0.1, 0.2], 2).value == Fraction(1, 5)
    assert select_epsilon_t([0.3, 0.1, 0.2], 3).value == Fraction(3, 10)
    with pytest.raises(ConfigError):
        select_epsilon_t([0.3], 2)
    with pytest.raises(ConfigError):
        select_epsilon_t([0.3], 0)


def test_evaluate_bound_unknown():
    with pytest.raises(ConfigError):
        evaluate_bound("nope", {}, {"epsilon": "1/2"})


def _check_report(rep):
    assert 0.0 <= rep.p_value <= 1.0
    assert rep.recompute() == rep.p_value
    d = json.loads(rep.to_json())
    assert report_from_dict(d).recompute() == rep.p_value


def test_single_drivers_are_recomputable():
    c = random_reversible_chain(5, 1)
    for rep in [
        run_single_trajectory_test(c, 0, 6, 1),
        run_serial_test(c, 0, 6, 1, epsilon=Fraction(1, 7)),
        run_two_path_test(c, 0, 6, 1),
        run_parallel_test(c, 0, 3, 4, 1),
        run_star_split_test(c, 0, 3, 2, 1),
    ]:
        _check_report(rep)


def test_knn_two_path_report():
    rep = run_two_path_test(make_knn(3), 0, 1, 7, epsilon="1/3")
    assert rep.nominal["p_value"] == pytest.approx(2 / 3)
    assert rep.bound_formula == "two_eps"


def test_outlier_all_trajectories_closed_form():
    c = random_reversible_chain(6, 2)
    rep = run_outlier_test(c, 0, 20, 10, 10, Fraction(1, 2), 3)
    eps = Fraction(rep.observed["epsilon"])
    assert eps == max(Fraction(e) for e in rep.observed["epsilons"])
    q = min(1.0, math.sqrt(2 * float(eps) / 0.5))
    assert rep.p_value == pytest.approx(q**10, rel=1e-12)
    _check_report(rep)


def test_outlier_formula_example():
    # m = t = 10, eps = 1e-4, alpha = 1e-2
    p = evaluate_bound("binomial_tail_sqrt_2eps_over_alpha", {"m": 10, "t": 10, "alpha": "1/100"},
                       {"epsilon": "1/10000"})
    assert p == pytest.approx(0.02**5, rel=1e-10)
    p = evaluate_bound("binomial_tail_sqrt_eps_over_alpha", {"m": 10, "t": 10, "alpha": "1/100"},
                       {"epsilon": "1/10000"})
    assert p == pytest.approx(1e-10, rel=1e-10)


def test_outlier_clamp():
    p = evaluate_bound("binomial_tail_sqrt_2eps_over_alpha", {"m": 4, "t": 2, "alpha": "1/10"},
                       {"epsilon": "1/10"})
    assert p == 1.0
    p = evaluate_bound("binomial_tail_sqrt_eps_over_alpha", {"m": 4, "t": 2, "alpha": "1/10"},
                       {"epsilon": "1/5"})
    assert p == 1.0


def test_outlier_argument_checks():
    c = make_iid([1, 2])
    with pytest.raises(ConfigError):
        run_outlier_test(c, 0, 3, 4, 5, 0.5, 0)
    with pytest.raises(ConfigError):
        run_outlier_test(c, 0, 3, 4, 2, 0, 0)
    with pytest.raises(ConfigError):
        run_outlier_test(c, 0, 3, 4, 2, 1.5, 0)


def test_geometric_all_trajectories():
    c = random_reversible_chain(5, 4)
    rep = run_geometric_outlier_test(c, 1, 8.0, 6, 6, 1, 2)
    eps = float(Fraction(rep.observed["epsilon"]))
    assert rep.p_value == pytest.approx(min(1.0, math.sqrt(eps)) ** 6, rel=1e-12)
    _check_report(rep)


def test_geometric_flags_truncation():
    c = random_reversible_chain(3, 4)
    rep = run_geometric_outlier_test(c, 0, 100.0, 5, 1, 1, 0, cap=3)
    assert rep.truncation_flags
    assert all("capped" in f for f in rep.truncation_flags)


def test_workers_do_not_change_reports():
    c = random_reversible_chain(5, 9)
    a = run_outlier_test(c, 0, 10, 8, 4, 0.5, 11, workers=1).to_json()
    b = run_outlier_test(c, 0, 10, 8, 4, 0.5, 11, workers=2).to_json()
    assert a == b


def test_star_split_comparison_size():
    c = random_reversible_chain(4, 5)
    for i in range(10):
        rep = run_star_split_test(c, 0, 3, 3, i)
        assert rep.observed["n_total"] == 9
