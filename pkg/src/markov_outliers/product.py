"""Product-space tests and exact counting of low-sum outcome tuples.

A :class:`ProductChain` runs ``d`` component chains side by side. Its joint
label is either the sum of component labels or an explicit mapping on state
tuples. With the sum, ranking the pivot inside a trajectory product only
needs each component's label histogram: the number of product elements with
joint label ``<= s`` is :func:`count_event` of those histograms at ``s``.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .chain import LabeledChain, as_fraction
from .errors import BudgetExceeded, ConfigError, ValueExplosion
from .sampling import TrajectoryProductSample, as_seed, sample_trajectory_product
from .significance import (
    OutlierObservation,
    SignificanceReport,
    _check_m_t_alpha,
    _frac_str,
    _state_repr,
    evaluate_bound,
    fan_out,
    select_epsilon_t,
)

MAX_DISTINCT_VALUES = 2_000_000
ENUMERATION_BUDGET = 10**7


def exact_key(x):
    """Exact value for use as a histogram key: ints stay ints, floats become their exact dyadic."""
    if isinstance(x, bool):
        raise ConfigError(f"not a number: {x!r}")
    if isinstance(x, int):
        return x
    if isinstance(x, Rational):
        f = Fraction(x.numerator, x.denominator)
        return f.numerator if f.denominator == 1 else f
    f = Fraction(float(x))
    return f.numerator if f.denominator == 1 else f


@dataclass(frozen=True)
class ProductChain:
    components: tuple
    joint_label: Any = "sum"  # "sum", a mapping on state tuples, or a callable

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ConfigError("a product chain needs at least one component")
        jl = self.joint_label
        if not (jl == "sum" or callable(jl) or isinstance(jl, Mapping)):
            raise ConfigError("joint_label must be 'sum', a mapping on state tuples, or a callable")

    @property
    def d(self) -> int:
        return len(self.components)

    @property
    def is_sum(self) -> bool:
        return isinstance(self.joint_label, str)

    def label_of(self, states: Sequence):
        if len(states) != self.d:
            raise ConfigError(f"expected a {self.d}-tuple of states, got {tuple(states)}")
        if self.is_sum:
            return sum(exact_key(c.label_of(s)) for c, s in zip(self.components, states))
        if callable(self.joint_label):
            return self.joint_label(tuple(states))
        try:
            return self.joint_label[tuple(states)]
        except KeyError:
            raise ConfigError(f"no joint label for state tuple {tuple(states)}") from None


@dataclass(frozen=True)
class RegionHistogram:
    """value -> number of outcomes of one component achieving it."""

    counts: Mapping
    region: Any = None

    def __post_init__(self):
        clean = {}
        for v, c in dict(self.counts).items():
            if isinstance(c, bool) or not isinstance(c, int) or c < 0:
                raise ConfigError(f"count for value {v!r} must be a nonnegative integer, got {c!r}")
            if c:
                key = exact_key(v)
                clean[key] = clean.get(key, 0) + c
        if not clean:
            raise ConfigError(f"histogram {self.region!r} has zero total count")
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def min_value(self):
        return next(iter(self.counts))


@dataclass(frozen=True)
class EventCount:
    delta: Any
    count: int
    total: int

    @property
    def epsilon(self) -> Fraction:
        return Fraction(self.count, self.total)

    def to_dict(self) -> dict:
        return {"delta": _num_str(self.delta), "count": self.count, "total": self.total,
                "epsilon": _frac_str(self.epsilon)}


def _num_str(x) -> str:
    return str(x) if not isinstance(x, float) else repr(x)


def _convolve(a: dict, b: dict, limit, max_values: int) -> dict:
    """Sum distribution of two count dicts, dropping sums above ``limit``."""
    out: dict = {}
    work = len(a) * len(b)
    if work > max_values * 64:
        raise ValueExplosion(work, max_values * 64)
    b_min = next(iter(b))
    for va, ca in a.items():
        if va + b_min > limit:
            break
        for vb, cb in b.items():
            s = va + vb
            if s > limit:
                break
            out[s] = out.get(s, 0) + ca * cb
    if len(out) > max_values:
        raise ValueExplosion(len(out), max_values)
    return dict(sorted(out.items()))


def convolve_histograms(histograms: Sequence[RegionHistogram], delta=None,
                        max_values: int = MAX_DISTINCT_VALUES, pairing: Sequence[int] | None = None) -> dict:
    """Sum distribution over all outcome tuples via a balanced pairwise tree.

    With ``delta`` given, partial sums that cannot stay ``<= delta`` even
    with every remaining region at its minimum are dropped, so the result is
    exact for every value ``<= delta``. ``pairing`` reorders the leaves
    (used to check that the combination order does not matter).
    """
    if not histograms:
        raise ConfigError("need at least one histogram")
    hs = [h if isinstance(h, RegionHistogram) else RegionHistogram(h) for h in histograms]
    if pairing is not None:
        hs = [hs[i] for i in pairing]
    total_min = sum(h.min_value for h in hs)
    nodes = [(dict(h.counts), h.min_value) for h in hs]
    d = exact_key(delta) if delta is not None else None

    def limit(node_min):
        return math.inf if d is None else d - (total_min - node_min)

    nodes = [({v: c for v, c in cnt.items() if v <= limit(mn)}, mn) for cnt, mn in nodes]
    while len(nodes) > 1:
        nxt = []
        for i in range(0, len(nodes) - 1, 2):
            (a, ma), (b, mb) = nodes[i], nodes[i + 1]
            mn = ma + mb
            if not a or not b:
                nxt.append(({}, mn))
            else:
                nxt.append((_convolve(a, b, limit(mn), max_values), mn))
        if len(nodes) % 2:
            nxt.append(nodes[-1])
        nodes = nxt
    return nodes[0][0]


def count_event(histograms: Sequence, delta, max_values: int = MAX_DISTINCT_VALUES,
                pairing: Sequence[int] | None = None) -> EventCount:
    """Exact number of outcome tuples whose summed values are ``<= delta``."""
    hs = [h if isinstance(h, RegionHistogram) else RegionHistogram(h) for h in histograms]
    dist = convolve_histograms(hs, delta, max_values, pairing)
    dk = exact_key(delta)
    count = sum(c for v, c in dist.items() if v <= dk)
    total = math.prod(h.total for h in hs)
    return EventCount(delta, count, total)


def brute_force_count(histograms: Sequence, delta) -> EventCount:
    """Reference count by walking every value tuple (weighted by multiplicities)."""
    hs = [h if isinstance(h, RegionHistogram) else RegionHistogram(h) for h in histograms]
    dk = exact_key(delta)
    count = 0
    for combo in itertools.product(*(list(h.counts.items()) for h in hs)):
        if sum(v for v, _ in combo) <= dk:
            count += math.prod(c for _, c in combo)
    return EventCount(delta, count, math.prod(h.total for h in hs))


def epsilon_from_event(event: EventCount) -> Fraction:
    """``|E(delta)| / prod L_i``: the epsilon to feed the product tests
    (p = eps for the serial product test, ``2^d eps`` for the two-path one)."""
    if event.total <= 0:
        raise ConfigError("event total must be positive")
    return event.epsilon


def _parse_value(key: str):
    s = str(key).strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        f = Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"histogram value {key!r} is not a number") from None
    return f.numerator if f.denominator == 1 else f


def parse_histograms(doc: Mapping) -> list[RegionHistogram]:
    """``{region_id: {value: count}}`` -> histograms in document order."""
    if not isinstance(doc, Mapping) or not doc:
        raise ConfigError("histogram document must be a nonempty object of region -> {value: count}")
    out = []
    for region, counts in doc.items():
        if not isinstance(counts, Mapping):
            raise ConfigError(f"region {region!r}: expected an object of value -> count")
        out.append(RegionHistogram({_parse_value(v): c for v, c in counts.items()}, region))
    return out


def load_histograms(path: str | Path) -> list[RegionHistogram]:
    with open(path, encoding="utf-8") as fh:
        return parse_histograms(json.load(fh))


def dump_histograms(histograms: Sequence[RegionHistogram]) -> str:
    doc = {str(h.region if h.region is not None else i): {_num_str(v): c for v, c in h.counts.items()}
           for i, h in enumerate(histograms)}
    return json.dumps(doc, indent=2) + "\n"


# -- ranking inside a trajectory product ------------------------------------------

def rank_in_product(product: ProductChain, sample: TrajectoryProductSample, shape: str,
                    budget: int = ENUMERATION_BUDGET) -> OutlierObservation:
    """Observation for the pivot tuple among every element of the trajectory product."""
    trajs = [t.states for t in sample.trajectories]
    n_total = math.prod(len(t) for t in trajs)
    pivot = sample.sigma0
    a0 = product.label_of(pivot)
    if product.is_sum:
        hists = [RegionHistogram(Counter(exact_key(c.label_of(s)) for s in t))
                 for c, t in zip(product.components, trajs)]
        count = count_event(hists, a0).count
        return OutlierObservation(a0, (), count, n_total, shape)
    if n_total > budget:
        raise BudgetExceeded(n_total, budget, "explicit joint-label enumeration")
    labels = tuple(product.label_of(tup) for tup in itertools.product(*trajs))
    count = sum(1 for a in labels if a <= a0)
    return OutlierObservation(a0, labels, count, n_total, shape)


def _check_product(product, sigma0):
    if not isinstance(product, ProductChain):
        product = ProductChain(tuple(product))
    if len(sigma0) != product.d:
        raise ConfigError(f"sigma0 has {len(sigma0)} entries for a {product.d}-component product")
    return product


def _sigma_repr(product, sigma0):
    return [_state_repr(c, s) for c, s in zip(product.components, sigma0)]


def _product_report(product, test, formula, obs, params, seed, epsilon=None):
    observed = {"epsilon": _frac_str(obs.epsilon_obs), "count_leq": obs.count_leq, "n_total": obs.n_total}
    nominal = None
    if epsilon is not None:
        eps = as_fraction(epsilon)
        if not 0 < eps <= 1:
            raise ConfigError(f"epsilon must lie in (0, 1], got {eps}")
        nominal = {"epsilon": _frac_str(eps), "is_outlier": obs.is_outlier(eps),
                   "p_value": evaluate_bound(formula, params, {"epsilon": _frac_str(eps)})}
    return SignificanceReport(test, params, observed, evaluate_bound(formula, params, observed), formula,
                              seed.to_dict(), nominal=nominal, trace={"pivot_label": obs.pivot_label})


def run_product_serial_test(product, sigma0: Sequence, k: int, rng, epsilon=None) -> SignificanceReport:
    """Each component gets a uniform split in ``{0..k}``; p = observed eps over ``(k+1)^d`` elements."""
    product = _check_product(product, sigma0)
    seed = as_seed(rng)
    sample = sample_trajectory_product(product.components, sigma0, (k,) * product.d, "uniform", seed)
    obs = rank_in_product(product, sample, "product-serial")
    params = {"k": k, "d": product.d, "sigma0": _sigma_repr(product, sigma0)}
    rep = _product_report(product, "product-serial", "eps", obs, params, seed, epsilon)
    rep.observed["pivots"] = list(sample.pivots)
    return rep


def run_product_two_path_test(product, sigma0: Sequence, k: int, rng, epsilon=None) -> SignificanceReport:
    """Two walks of length k per component; p = ``min(1, 2^d eps)`` over ``(2k+1)^d`` elements."""
    product = _check_product(product, sigma0)
    seed = as_seed(rng)
    sample = sample_trajectory_product(product.components, sigma0, (2 * k,) * product.d, (k,) * product.d, seed)
    obs = rank_in_product(product, sample, "product-two-path")
    params = {"k": k, "d": product.d, "sigma0": _sigma_repr(product, sigma0)}
    return _product_report(product, "product-two-path", "two_pow_d_eps", obs, params, seed, epsilon)


def _uniform_pivot_epsilon(product, sigma0, k, seed, index):
    sample = sample_trajectory_product(product.components, sigma0, k, "uniform", seed, index)
    return rank_in_product(product, sample, "product-uniform").epsilon_obs


def run_product_uniform_pivot_test(product, sigma0: Sequence, k: Sequence[int], alpha, m: int, t: int, rng,
                                   workers: int | None = 1) -> SignificanceReport:
    """Product-space (eps, alpha) test: ``m`` uniform-pivot trajectory products
    through sigma0, eps = t-th smallest observed eps, ``q = min(1, eps/alpha)``."""
    product = _check_product(product, sigma0)
    a = _check_m_t_alpha(m, t, alpha)
    k = tuple(int(x) for x in k)
    if len(k) != product.d:
        raise ConfigError(f"k needs {product.d} entries, got {len(k)}")
    seed = as_seed(rng)
    eps = fan_out(_uniform_pivot_epsilon, [(product, tuple(sigma0), k, seed, i) for i in range(m)], workers)
    sel = select_epsilon_t(eps, t)
    params = {"k": list(k), "d": product.d, "m": m, "t": t, "alpha": _frac_str(a),
              "sigma0": _sigma_repr(product, sigma0)}
    observed = {"epsilons": [_frac_str(e) for e in eps], "epsilon": _frac_str(sel.value), "rho": t,
                "t_fixed_in_advance": True}
    formula = "binomial_tail_eps_over_alpha"
    return SignificanceReport("product-uniform", params, observed, evaluate_bound(formula, params, observed),
                              formula, seed.to_dict(), trace={"epsilons": [float(e) for e in eps]})
