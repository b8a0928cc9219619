"""Outlier statistics, p-value bounds, and the test drivers that tie them together.

A pivot label ``a0`` is an eps-outlier among ``a0..ak`` when
``#{i : a_i <= a0} <= eps * (k + 1)``; ties count against the pivot and the
pivot counts itself. Observed epsilons are exact rationals
``count_leq / n_total``; bounds are evaluated in floating point from them.

Every driver returns a :class:`SignificanceReport` whose ``p_value`` is
produced by :func:`evaluate_bound` from the recorded formula, parameters and
observations, so a stored report can be re-checked bit for bit.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .chain import as_fraction
from .errors import ConfigError, ShapeMismatch
from .sampling import (
    GEOMETRIC_CAP,
    RngSeed,
    as_seed,
    sample_geometric_trajectory,
    sample_parallel,
    sample_serial,
    sample_single,
    sample_star_split,
    sample_trajectory,
    sample_two_paths,
)

SHAPES = ("single", "serial", "two-path", "parallel", "star-split", "geometric", "product-serial",
          "product-two-path", "product-uniform")


@dataclass(frozen=True)
class OutlierObservation:
    pivot_label: Any
    comparison_labels: tuple
    count_leq: int
    n_total: int
    shape: str | None = None

    @property
    def epsilon_obs(self) -> Fraction:
        return Fraction(self.count_leq, self.n_total)

    def is_outlier(self, epsilon) -> bool:
        """Exact test of ``count_leq <= eps * n_total``."""
        return self.count_leq <= as_fraction(epsilon) * self.n_total


def observe_outlier(pivot_label, comparison_labels: Sequence, shape: str | None = None,
                    tie_break: np.random.Generator | None = None) -> OutlierObservation:
    """Rank the pivot's label within a comparison multiset that contains it.

    With ``tie_break`` set, the pivot takes a uniformly random place among the
    labels equal to it instead of the last one. That is for studies only; the
    bounds assume the default.
    """
    labels = tuple(comparison_labels)
    if not labels:
        raise ConfigError("comparison set is empty")
    n_eq = sum(1 for a in labels if a == pivot_label)
    if n_eq == 0:
        raise ConfigError("comparison set must include the pivot's own label")
    n_less = sum(1 for a in labels if a < pivot_label)
    if tie_break is None:
        count = n_less + n_eq
    else:
        count = n_less + int(tie_break.integers(1, n_eq + 1))
    return OutlierObservation(pivot_label, labels, count, len(labels), shape)


def observe_sample(chain, sample) -> OutlierObservation:
    """Observation for any sampler output exposing ``comparison_states()``."""
    states = sample.comparison_states()
    return observe_outlier(chain.label_of(sample.sigma0), [chain.label_of(s) for s in states], sample.shape)


def _eps_of(x, expected_shape: str) -> Fraction:
    if isinstance(x, OutlierObservation):
        if x.shape is not None and x.shape != expected_shape:
            raise ShapeMismatch(expected_shape, x.shape)
        return x.epsilon_obs
    eps = as_fraction(x)
    if not 0 < eps <= 1:
        raise ConfigError(f"epsilon must lie in (0, 1], got {eps}")
    return eps


def p_single_trajectory(epsilon) -> float:
    """``min(1, sqrt(2 eps))`` for a single trajectory from the pivot."""
    return min(1.0, math.sqrt(2.0 * float(_eps_of(epsilon, "single"))))


def p_serial(epsilon) -> float:
    return float(_eps_of(epsilon, "serial"))


def p_two_paths(epsilon) -> float:
    """``min(1, 2 eps)``. The proven bound is strict; the clamp reports it non-strictly."""
    return min(1.0, 2.0 * float(_eps_of(epsilon, "two-path")))


def p_parallel(epsilon) -> float:
    return float(_eps_of(epsilon, "parallel"))


def p_star_split(epsilon) -> float:
    return float(_eps_of(epsilon, "star-split"))


def binomial_tail(m: int, K: int, q: float) -> float:
    """``sum_{j=K}^{m} C(m, j) q^j (1-q)^(m-j)``, accumulated in log space."""
    if not 0 <= K <= m:
        raise ConfigError(f"need 0 <= K <= m, got K={K}, m={m}")
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"q must lie in [0, 1], got {q}")
    if K == 0 or q == 1.0:
        return 1.0
    if q == 0.0:
        return 0.0
    if K == m:
        return q**m
    ks = np.arange(K, m + 1, dtype=float)
    logpmf = gammaln(m + 1.0) - gammaln(ks + 1.0) - gammaln(m - ks + 1.0) + ks * math.log(q) + (m - ks) * math.log1p(-q)
    return min(1.0, float(np.exp(logsumexp(logpmf))))


def chernoff_tail(m: int, epsilon, alpha, r: float, variant: str = "two-path") -> float:
    """``exp(-min(r^2 sqrt(alpha/c eps) / 3m, r/3))`` with c = 2 (two-path) or 1 (geometric)."""
    if not r > 0:
        raise ConfigError(f"r must be positive for a non-vacuous bound, got {r}")
    eps, a = float(as_fraction(epsilon)), float(as_fraction(alpha))
    if variant == "two-path":
        scale = math.sqrt(a / (2.0 * eps))
    elif variant == "geometric":
        scale = math.sqrt(a / eps)
    else:
        raise ConfigError(f"unknown Chernoff variant {variant!r}")
    return min(1.0, math.exp(-min(r * r * scale / (3.0 * m), r / 3.0)))


@dataclass(frozen=True)
class EpsilonSelection:
    value: Fraction
    t: int
    m: int
    certificate: str


def select_epsilon_t(epsilon_list: Sequence, t: int) -> EpsilonSelection:
    """The t-th smallest epsilon (1-based).

    ``t`` must be fixed before the trajectories are drawn; the hypotheses
    indexed by the t-th order statistic are nested, which is what makes a
    single fixed ``t`` need no multiplicity correction.
    """
    eps = sorted(as_fraction(e) for e in epsilon_list)
    m = len(eps)
    if isinstance(t, bool) or not isinstance(t, (int, np.integer)) or not 1 <= t <= m:
        raise ConfigError(f"t must satisfy 1 <= t <= m = {m}, got {t!r}")
    return EpsilonSelection(eps[t - 1], int(t), m,
                            f"t={int(t)} fixed before sampling; nested order-statistic hypotheses")


# -- reports -------------------------------------------------------------------

def _frac_str(x: Fraction) -> str:
    return str(Fraction(x))


def _bound_sqrt_2eps(p, o):
    return min(1.0, math.sqrt(2.0 * float(Fraction(o["epsilon"]))))


def _bound_eps(p, o):
    return float(Fraction(o["epsilon"]))


def _bound_two_eps(p, o):
    return min(1.0, 2.0 * float(Fraction(o["epsilon"])))


def _bound_two_pow_d_eps(p, o):
    return min(1.0, float(2 ** int(p["d"])) * float(Fraction(o["epsilon"])))


def _q_sqrt(c: float):
    def q(p, o):
        e, a = float(Fraction(o["epsilon"])), float(Fraction(p["alpha"]))
        return min(1.0, math.sqrt(c * e / a))
    return q


def _q_linear(p, o):
    return min(1.0, float(Fraction(o["epsilon"])) / float(Fraction(p["alpha"])))


def _tail(qfun):
    def bound(p, o):
        return binomial_tail(int(p["m"]), int(p["t"]), qfun(p, o))
    return bound


BOUNDS: dict[str, Callable[[dict, dict], float]] = {
    "sqrt_2eps": _bound_sqrt_2eps,
    "eps": _bound_eps,
    "two_eps": _bound_two_eps,
    "two_pow_d_eps": _bound_two_pow_d_eps,
    "binomial_tail_sqrt_2eps_over_alpha": _tail(_q_sqrt(2.0)),
    "binomial_tail_sqrt_eps_over_alpha": _tail(_q_sqrt(1.0)),
    "binomial_tail_eps_over_alpha": _tail(_q_linear),
}


def evaluate_bound(formula: str, params: dict, observed: dict) -> float:
    try:
        fn = BOUNDS[formula]
    except KeyError:
        raise ConfigError(f"unknown bound formula {formula!r}") from None
    return fn(params, observed)


@dataclass
class SignificanceReport:
    test: str
    params: dict
    observed: dict
    p_value: float
    bound_formula: str
    seed: dict
    truncation_flags: list = field(default_factory=list)
    nominal: dict | None = None
    # comparison labels and pivot for CSV / figure side outputs; never serialized
    trace: dict | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = {
            "test": self.test,
            "params": self.params,
            "observed": self.observed,
            "p_value": self.p_value,
            "bound_formula": self.bound_formula,
            "seed": self.seed,
            "truncation_flags": list(self.truncation_flags),
        }
        if self.nominal is not None:
            d["nominal"] = self.nominal
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def recompute(self) -> float:
        return evaluate_bound(self.bound_formula, self.params, self.observed)


def report_from_dict(d: dict) -> SignificanceReport:
    return SignificanceReport(
        test=d["test"], params=d["params"], observed=d["observed"], p_value=d["p_value"],
        bound_formula=d["bound_formula"], seed=d["seed"], truncation_flags=d.get("truncation_flags", []),
        nominal=d.get("nominal"),
    )


def _state_repr(chain, s):
    describe = getattr(chain, "describe_state", None)
    if describe is not None:
        return describe(s)
    ids = getattr(chain, "state_ids", None)
    if ids is not None:
        return ids[s]
    return s


def _single_report(chain, test: str, formula: str, obs: OutlierObservation, params: dict, seed: RngSeed,
                   epsilon=None, extra_observed: dict | None = None) -> SignificanceReport:
    observed = {"epsilon": _frac_str(obs.epsilon_obs), "count_leq": obs.count_leq, "n_total": obs.n_total}
    if extra_observed:
        observed.update(extra_observed)
    nominal = None
    if epsilon is not None:
        eps = as_fraction(epsilon)
        if not 0 < eps <= 1:
            raise ConfigError(f"epsilon must lie in (0, 1], got {eps}")
        nominal = {
            "epsilon": _frac_str(eps),
            "is_outlier": obs.is_outlier(eps),
            "p_value": evaluate_bound(formula, params, {"epsilon": _frac_str(eps)}),
        }
    return SignificanceReport(
        test=test, params=params, observed=observed,
        p_value=evaluate_bound(formula, params, observed), bound_formula=formula,
        seed=seed.to_dict(), nominal=nominal,
        trace={"pivot_label": obs.pivot_label, "comparison_labels": list(obs.comparison_labels)},
    )


def run_single_trajectory_test(chain, sigma0, k: int, rng, epsilon=None) -> SignificanceReport:
    seed = as_seed(rng)
    obs = observe_sample(chain, sample_single(chain, sigma0, k, seed))
    return _single_report(chain, "single", "sqrt_2eps", obs,
                          {"k": k, "sigma0": _state_repr(chain, sigma0)}, seed, epsilon)


def run_serial_test(chain, sigma0, k: int, rng, epsilon=None) -> SignificanceReport:
    seed = as_seed(rng)
    sample = sample_serial(chain, sigma0, k, seed)
    obs = observe_sample(chain, sample)
    return _single_report(chain, "serial", "eps", obs, {"k": k, "sigma0": _state_repr(chain, sigma0)},
                          seed, epsilon, {"xi": sample.xi})


def run_two_path_test(chain, sigma0, k: int, rng, epsilon=None) -> SignificanceReport:
    seed = as_seed(rng)
    obs = observe_sample(chain, sample_two_paths(chain, sigma0, k, seed))
    return _single_report(chain, "two-path", "two_eps", obs, {"k": k, "sigma0": _state_repr(chain, sigma0)},
                          seed, epsilon)


def run_parallel_test(chain, sigma0, k: int, m: int, rng, epsilon=None) -> SignificanceReport:
    seed = as_seed(rng)
    obs = observe_sample(chain, sample_parallel(chain, sigma0, k, m, seed))
    return _single_report(chain, "parallel", "eps", obs,
                          {"k": k, "m": m, "sigma0": _state_repr(chain, sigma0)}, seed, epsilon)


def run_star_split_test(chain, sigma0, k: int, m: int, rng, epsilon=None) -> SignificanceReport:
    seed = as_seed(rng)
    sample = sample_star_split(chain, sigma0, k, m, seed)
    obs = observe_sample(chain, sample)
    return _single_report(chain, "star-split", "eps", obs,
                          {"k": k, "m": m, "sigma0": _state_repr(chain, sigma0)}, seed, epsilon, {"xi": sample.xi})


# -- multi-trajectory (eps, alpha) tests -----------------------------------------

def _fixed_epsilon(chain, sigma0, k, seed, index):
    traj = sample_trajectory(chain, sigma0, k, seed, index)
    obs = observe_outlier(chain.label_of(sigma0), [chain.label_of(s) for s in traj.states], "single")
    return obs.epsilon_obs, None


def _geometric_epsilon(chain, sigma0, mu, seed, index, cap):
    sample = sample_geometric_trajectory(chain, sigma0, mu, seed, index, cap)
    obs = observe_sample(chain, sample)
    flag = None
    if sample.length.truncated:
        flag = f"trajectory {index}: length capped at {cap}"
    return obs.epsilon_obs, flag


def _call(args):
    fn, rest = args
    return fn(*rest)


def fan_out(fn, arg_tuples: list[tuple], workers: int | None = 1) -> list:
    """``[fn(*a) for a in arg_tuples]``, optionally across processes; order is preserved."""
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(arg_tuples) <= 1:
        return [fn(*a) for a in arg_tuples]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_call, [(fn, a) for a in arg_tuples], chunksize=max(1, len(arg_tuples) // (4 * workers))))


def _check_m_t_alpha(m, t, alpha) -> Fraction:
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or m < 1:
        raise ConfigError(f"m must be a positive integer, got {m!r}")
    if isinstance(t, bool) or not isinstance(t, (int, np.integer)) or not 1 <= t <= m:
        raise ConfigError(f"t must satisfy 1 <= t <= m = {m}, got {t!r}")
    a = as_fraction(alpha)
    if not 0 < a <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {a}")
    return a


def _multi_report(test, formula, variant, c, epsilons, t, m, params, seed, flags, extra=None):
    sel = select_epsilon_t(epsilons, t)
    observed = {
        "epsilons": [_frac_str(e) for e in epsilons],
        "epsilon": _frac_str(sel.value),
        "rho": t,
        "t_fixed_in_advance": True,
    }
    p_value = evaluate_bound(formula, params, observed)
    a = float(Fraction(params["alpha"]))
    e = float(sel.value)
    r = t - m * math.sqrt(c * e / a)
    observed["r"] = r
    observed["chernoff"] = chernoff_tail(m, sel.value, params["alpha"], r, variant) if r > 0 else None
    if extra:
        observed.update(extra)
    return SignificanceReport(test, params, observed, p_value, formula, seed.to_dict(), flags,
                              trace={"epsilons": [float(x) for x in epsilons]})


def run_outlier_test(chain, sigma0, k: int, m: int, t: int, alpha, rng, workers: int | None = 1) -> SignificanceReport:
    """Test the hypothesis that sigma0 is an (eps, alpha)-outlier.

    Draws ``m`` independent length-``k`` walks from ``sigma0``, records the
    smallest eps on each for which sigma0 is an eps-outlier, takes the
    t-th smallest as eps, and bounds ``Pr[rho >= t]`` by the binomial tail
    with ``q = min(1, sqrt(2 eps / alpha))``. The Chernoff form is reported
    next to it when it is non-vacuous.
    """
    a = _check_m_t_alpha(m, t, alpha)
    seed = as_seed(rng)
    eps = [e for e, _ in fan_out(_fixed_epsilon, [(chain, sigma0, k, seed, i) for i in range(m)], workers)]
    params = {"k": k, "m": m, "t": t, "alpha": _frac_str(a), "sigma0": _state_repr(chain, sigma0)}
    return _multi_report("outlier", "binomial_tail_sqrt_2eps_over_alpha", "two-path", 2.0, eps, t, m, params,
                         seed, [])


def run_geometric_outlier_test(chain, sigma0, mu: float, m: int, t: int, alpha, rng, workers: int | None = 1,
                               cap: int = GEOMETRIC_CAP) -> SignificanceReport:
    """As :func:`run_outlier_test` with geometric lengths of mean ``mu`` and ``q = sqrt(eps/alpha)``."""
    a = _check_m_t_alpha(m, t, alpha)
    if not mu > 0:
        raise ConfigError(f"mu must be positive, got {mu!r}")
    seed = as_seed(rng)
    out = fan_out(_geometric_epsilon, [(chain, sigma0, mu, seed, i, cap) for i in range(m)], workers)
    eps = [e for e, _ in out]
    flags = [f for _, f in out if f]
    params = {"mu": mu, "m": m, "t": t, "alpha": _frac_str(a), "sigma0": _state_repr(chain, sigma0)}
    return _multi_report("geometric", "binomial_tail_sqrt_eps_over_alpha", "geometric", 1.0, eps, t, m, params,
                         seed, flags)
