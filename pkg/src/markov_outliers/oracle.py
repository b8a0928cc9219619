"""Exact probabilities for the outlier events on small explicit chains.

All computations run over rationals when the chain is exact (see
:attr:`LabeledChain.is_exact`) and over floats otherwise, in which case
results carry a crude absolute error bound.

Main routes:

* trajectories: forward/backward messages over (position, state, count of
  labels <= threshold). This uses only the forward kernel and ``pi``; it does
  not assume reversibility.
* trees: messages passed toward the pivot vertex, with the pivot drawn from
  ``pi`` and every edge stepped with ``P``. For test procedures that grow
  outward from the pivot this is exactly the sampling law; for arbitrary
  trees it is the stationary tree projection of a reversible chain.
* brute force: full enumeration of paths or tree assignments, kept as an
  independent check on the message passing.

Work is estimated up front and compared with a budget (default ``1e8``
elementary operations, overridable through ``MARKOV_OUTLIERS_BUDGET``).
"""

from __future__ import annotations

import itertools
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Sequence

import numpy as np

from .chain import LabeledChain, as_fraction, stationary_exact
from .errors import BudgetExceeded, ConfigError

DEFAULT_BUDGET = 10**8
BUDGET_ENV = "MARKOV_OUTLIERS_BUDGET"
FLOAT_EPS = 2.0**-52


def default_budget() -> float:
    raw = os.environ.get(BUDGET_ENV)
    if raw:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{BUDGET_ENV}={raw!r} is not a number") from None
    return DEFAULT_BUDGET


def _check_budget(work: float, budget: float | None, what: str):
    limit = default_budget() if budget is None else budget
    if work > limit:
        raise BudgetExceeded(work, limit, what)


@dataclass(frozen=True)
class ExactProbability:
    value: Fraction | float
    description: str
    exact: bool = True
    error_bound: float = 0.0

    def __float__(self):
        return float(self.value)


def ell_for(epsilon, n_total: int) -> int:
    """Largest ``l`` such that eps-outlier among ``n_total`` means l-small."""
    return math.floor(as_fraction(epsilon) * n_total) - 1


class _Nums:
    """Chain entries in one arithmetic (Fraction or float)."""

    def __init__(self, chain: LabeledChain):
        self.chain = chain
        self.exact = chain.is_exact
        conv = Fraction if self.exact else float
        self.n = chain.n_states
        self.P = [[conv(x) for x in row] for row in chain.transition]
        self.pi = list(stationary_exact(chain))
        self.labels = list(chain.label)
        self.zero = conv(0)
        self.one = conv(1)
        self.succ = [[v for v in range(self.n) if self.P[u][v] != 0] for u in range(self.n)]

    def result(self, value, description: str, work: float) -> ExactProbability:
        if self.exact:
            return ExactProbability(value, description, True, 0.0)
        return ExactProbability(float(value), description, False, work * FLOAT_EPS)


def _nums(chain) -> _Nums:
    return chain if isinstance(chain, _Nums) else _Nums(chain)


def _add_conv(out, a, b, cap):
    for i, x in enumerate(a):
        if x == 0:
            continue
        for j, y in enumerate(b):
            if y == 0:
                continue
            out[min(i + j, cap)] += x * y


def _conv(a, b, cap, zero):
    out = [zero] * (cap + 1)
    _add_conv(out, a, b, cap)
    return out


# -- trajectories -----------------------------------------------------------------

def _forward(nm: _Nums, init, k: int, thr, cap: int):
    """``alpha[t][u][c] = Pr[X_t = u, #{i < t : label(X_i) <= thr} = c]``."""
    zero = nm.zero
    alpha = [[[zero] * (cap + 1) for _ in range(nm.n)]]
    for u in range(nm.n):
        alpha[0][u][0] = init[u]
    for t in range(1, k + 1):
        prev = alpha[-1]
        cur = [[zero] * (cap + 1) for _ in range(nm.n)]
        for u in range(nm.n):
            row = prev[u]
            if not any(row):
                continue
            shift = 1 if nm.labels[u] <= thr else 0
            for v in nm.succ[u]:
                p = nm.P[u][v]
                dst = cur[v]
                for c, x in enumerate(row):
                    if x:
                        dst[min(c + shift, cap)] += x * p
        alpha.append(cur)
    return alpha


def _backward(nm: _Nums, k: int, thr, cap: int):
    """``beta[t][u][c] = Pr[#{i > t : label(X_i) <= thr} = c | X_t = u]`` for a length-k walk."""
    zero = nm.zero
    beta = [None] * (k + 1)
    last = [[zero] * (cap + 1) for _ in range(nm.n)]
    for u in range(nm.n):
        last[u][0] = nm.one
    beta[k] = last
    for t in range(k - 1, -1, -1):
        nxt = beta[t + 1]
        cur = [[zero] * (cap + 1) for _ in range(nm.n)]
        for u in range(nm.n):
            dst = cur[u]
            for v in nm.succ[u]:
                p = nm.P[u][v]
                shift = 1 if nm.labels[v] <= thr else 0
                for c, x in enumerate(nxt[v]):
                    if x:
                        dst[min(c + shift, cap)] += x * p
        beta[t] = cur
    return beta


def _path_work(nm: _Nums, k: int) -> float:
    return float(len(set(nm.labels))) * 2 * (k + 1) * nm.n * nm.n * (k + 2)


def count_law_table(chain, k: int, budget: float | None = None) -> list[list]:
    """``table[j][c] = Pr[exactly c indices i != j have label(X_i) <= label(X_j)]``
    for a stationary trajectory ``X_0..X_k``."""
    nm = _nums(chain)
    _check_budget(_path_work(nm, k), budget, f"rank table for k={k}")
    cap = k
    table = [[nm.zero] * (cap + 1) for _ in range(k + 1)]
    by_label = defaultdict(list)
    for s in range(nm.n):
        by_label[nm.labels[s]].append(s)
    for thr, states in by_label.items():
        alpha = _forward(nm, nm.pi, k, thr, cap)
        beta = _backward(nm, k, thr, cap)
        for j in range(k + 1):
            for s in states:
                _add_conv(table[j], alpha[j][s], beta[j][s], cap)
    return table


def _rho_from_table(table, j, l, zero):
    return sum(table[j][: max(0, l + 1)], zero)


def exact_rho(chain, k: int, j: int, l: int, method: str = "dp", budget: float | None = None) -> ExactProbability:
    """Probability that ``label(X_j)`` is l-small among ``label(X_0..X_k)``, stationary start."""
    if not 0 <= j <= k:
        raise ConfigError(f"need 0 <= j <= k, got j={j}, k={k}")
    nm = _nums(chain)
    desc = f"rho^{k}_{{{j},{l}}}"
    if method == "enumerate":
        return _enumerate_rho(nm, k, j, l, budget)
    if method != "dp":
        raise ConfigError(f"unknown method {method!r}")
    table = count_law_table(nm, k, budget)
    return nm.result(_rho_from_table(table, j, l, nm.zero), desc, _path_work(nm, k))


def rho_matrix(chain, k: int, budget: float | None = None) -> list[list]:
    """``M[j][l] = rho^k_{j,l}`` for all ``0 <= j, l <= k`` from a single table."""
    nm = _nums(chain)
    table = count_law_table(nm, k, budget)
    out = []
    for j in range(k + 1):
        acc, row = nm.zero, []
        for c in range(k + 1):
            acc = acc + table[j][c]
            row.append(acc)
        out.append(row)
    return out


def _paths(nm: _Nums, k: int):
    """All positive-probability paths of length k under stationary start: (prob, states)."""
    frontier = [(nm.pi[s], (s,)) for s in range(nm.n) if nm.pi[s] != 0]
    for _ in range(k):
        frontier = [(p * nm.P[path[-1]][v], path + (v,)) for p, path in frontier for v in nm.succ[path[-1]]]
    return frontier


def _enumerate_rho(nm: _Nums, k, j, l, budget) -> ExactProbability:
    work = float(nm.n) ** (k + 1) * (k + 1)
    _check_budget(work, budget, f"path enumeration for k={k}")
    total = nm.zero
    for p, path in _paths(nm, k):
        a = nm.labels[path[j]]
        others = sum(1 for i, s in enumerate(path) if i != j and nm.labels[s] <= a)
        if others <= l:
            total += p
    return nm.result(total, f"rho^{k}_{{{j},{l}}} (enumerated)", work)


def _conditional_law(nm: _Nums, sigma: int, k: int, j: int, cap: int):
    """Law of ``#{i != j : label(X_i) <= label(sigma)}`` given ``X_j = sigma``."""
    if nm.pi[sigma] == 0:
        raise ConfigError(f"state {sigma} has zero stationary weight; cannot condition on it")
    thr = nm.labels[sigma]
    beta = _backward(nm, k, thr, cap)
    if j == 0:
        return list(beta[0][sigma])
    alpha = _forward(nm, nm.pi, k, thr, cap)
    joint = _conv(alpha[j][sigma], beta[j][sigma], cap, nm.zero)
    return [x / nm.pi[sigma] for x in joint]


def exact_p_conditional(chain, sigma: int, k: int, epsilon, j: int = 0,
                        budget: float | None = None) -> ExactProbability:
    """Probability that ``label(sigma)`` is an eps-outlier on a length-k trajectory
    through ``sigma`` at position ``j`` (``j = 0``: a walk started at sigma)."""
    nm = _nums(chain)
    if not 0 <= j <= k:
        raise ConfigError(f"need 0 <= j <= k, got j={j}, k={k}")
    _check_budget(_path_work(nm, k), budget, f"conditional law for k={k}")
    l = ell_for(epsilon, k + 1)
    law = _conditional_law(nm, sigma, k, j, k)
    return nm.result(sum(law[: max(0, l + 1)], nm.zero), f"p^{k}_{{{j},eps}}({sigma}), eps={as_fraction(epsilon)}",
                     _path_work(nm, k))


def exact_p_single(chain, k: int, epsilon, budget=None) -> ExactProbability:
    """``p^k_{0,eps}``: stationary start is an eps-outlier on its own length-k trajectory."""
    nm = _nums(chain)
    r = exact_rho(nm, k, 0, ell_for(epsilon, k + 1), budget=budget)
    return ExactProbability(r.value, f"p^{k}_{{0,eps}}, eps={as_fraction(epsilon)}", r.exact, r.error_bound)


def exact_p_two_path(chain, k: int, epsilon, budget=None) -> ExactProbability:
    """``p^{2k}_{k,eps}``, the two-path test's rejection probability under stationarity."""
    nm = _nums(chain)
    r = exact_rho(nm, 2 * k, k, ell_for(epsilon, 2 * k + 1), budget=budget)
    return ExactProbability(r.value, f"p^{2 * k}_{{{k},eps}}, eps={as_fraction(epsilon)}", r.exact, r.error_bound)


def geometric_pmf(mu, t: int, exact: bool = True):
    p = 1 / (as_fraction(mu) + 1) if exact else 1.0 / (float(mu) + 1.0)
    return p * (1 - p) ** t


def exact_p_geometric(chain, sigma: int, mu, epsilon, tol: float = 1e-12,
                      budget: float | None = None) -> ExactProbability:
    """``p^mu_{0,eps}(sigma)``: length ``k ~ Geometric(mean mu)`` on {0, 1, ...}.

    The series is cut once the remaining length mass is below ``tol``; the
    returned value is a lower bound within ``error_bound`` of the truth.
    """
    nm = _nums(chain)
    q = 1 - 1 / (as_fraction(mu) + 1)
    T = 0
    while float(q) ** (T + 1) > tol:
        T += 1
    _check_budget(sum(_path_work(nm, t) for t in range(T + 1)), budget, "geometric-length series")
    total = nm.zero
    for t in range(T + 1):
        l = ell_for(epsilon, t + 1)
        if l < 0:
            continue
        law = _conditional_law(nm, sigma, t, 0, t)
        w = geometric_pmf(mu, t, nm.exact)
        total += (w if nm.exact else float(w)) * sum(law[: l + 1], nm.zero)
    tail = float(q) ** (T + 1)
    if nm.exact:
        return ExactProbability(total, f"p^mu_{{0,eps}}({sigma}) truncated at k={T}", True, tail)
    return ExactProbability(float(total), f"p^mu_{{0,eps}}({sigma}) truncated at k={T}", False, tail + 1e-12)


@dataclass
class Certification:
    status: str  # "outlier" | "non-outlier"
    sigma0: int
    p_sigma0: Any
    mass_at_least: Any  # Pr_{sigma ~ pi}[p(sigma) >= p(sigma0)]
    p_values: list
    epsilon: Fraction
    alpha: Fraction

    @property
    def non_outlier(self) -> bool:
        return self.status == "non-outlier"


def _ge(a, b, exact: bool) -> bool:
    if exact:
        return a >= b
    return a >= b - 1e-12 * max(1.0, abs(b))


def certify_from_values(p_values: Sequence, pi: Sequence, sigma0: int, epsilon, alpha, exact: bool) -> Certification:
    alpha = as_fraction(alpha)
    p0 = p_values[sigma0]
    mass = sum((w for p, w in zip(p_values, pi) if _ge(p, p0, exact)), Fraction(0) if exact else 0.0)
    ok = mass >= alpha if exact else mass >= float(alpha) - 1e-12
    return Certification("non-outlier" if ok else "outlier", sigma0, p0, mass, list(p_values),
                         as_fraction(epsilon), alpha)


def certify_eps_alpha(chain, sigma0: int, k: int, epsilon, alpha, budget: float | None = None) -> Certification:
    """Decide whether sigma0 is an (eps, alpha)-outlier with respect to length k.

    sigma0 is certified a non-outlier when ``Pr_{sigma~pi}[p(sigma) >= p(sigma0)] >= alpha``
    with ``p = p^k_{0,eps}``; that is the inequality the significance claim
    rests on. Zero-weight states get ``p = None`` and are ignored.
    """
    nm = _nums(chain)
    _check_budget(_path_work(nm, k) * nm.n, budget, "per-state conditional laws")
    ps = []
    for s in range(nm.n):
        ps.append(exact_p_conditional(nm, s, k, epsilon, budget=budget).value if nm.pi[s] != 0 else None)
    if ps[sigma0] is None:
        raise ConfigError(f"state {sigma0} has zero stationary weight")
    vals = [p if p is not None else ps[sigma0] - 1 for p in ps]
    return certify_from_values(vals, nm.pi, sigma0, epsilon, alpha, nm.exact)


def certify_eps_alpha_geometric(chain, sigma0: int, mu, epsilon, alpha, tol: float = 1e-12,
                                budget: float | None = None) -> Certification:
    """Geometric-length analogue of :func:`certify_eps_alpha` (values truncated at ``tol``)."""
    nm = _nums(chain)
    ps = [exact_p_geometric(nm, s, mu, epsilon, tol, budget).value for s in range(nm.n)]
    return certify_from_values(ps, nm.pi, sigma0, epsilon, alpha, nm.exact)


# -- trees --------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeShape:
    """Undirected tree with a comparison subset and a pivot in it.

    ``root`` is only used by brute-force enumeration, which draws the root
    from pi and steps outward; message passing always roots at the pivot.
    """

    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    comparison: frozenset
    pivot: int
    root: int = 0

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))
        object.__setattr__(self, "comparison", frozenset(self.comparison))
        n = self.n_vertices
        if n < 1 or len(self.edges) != n - 1:
            raise ConfigError(f"a tree on {n} vertices needs {n - 1} edges, got {len(self.edges)}")
        adj = self.adjacency
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != n:
            raise ConfigError("edges do not form a connected tree")
        if self.pivot not in self.comparison:
            raise ConfigError("pivot must belong to the comparison set")
        if not self.comparison <= set(range(n)) or not 0 <= self.root < n:
            raise ConfigError("comparison set and root must be tree vertices")

    @property
    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for u, v in self.edges:
            if not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices) or u == v:
                raise ConfigError(f"bad tree edge ({u}, {v})")
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def with_pivot(self, pivot: int) -> "TreeShape":
        return TreeShape(self.n_vertices, self.edges, self.comparison, pivot, self.root)


def path_tree(k: int, j: int) -> TreeShape:
    """Path ``0 - 1 - ... - k``, comparing all vertices, pivot ``j``."""
    return TreeShape(k + 1, tuple((i, i + 1) for i in range(k)), frozenset(range(k + 1)), j)


def _add_leg(edges: list, start: int, length: int, next_id: int) -> tuple[list[int], int]:
    ids, prev = [], start
    for _ in range(length):
        edges.append((prev, next_id))
        ids.append(next_id)
        prev = next_id
        next_id += 1
    return ids, next_id


def star_tree(m: int, k: int, comparison: str = "leaves") -> tuple[TreeShape, list[list[int]]]:
    """``m`` legs of length ``k`` joined at center 0.

    ``comparison="leaves"`` compares leg ends (the parallel-test tree);
    ``"all-but-center"`` compares every vertex but the center (the star-split
    tree). Returns the shape (pivot = end of leg 1) and the leg vertex lists,
    where ``legs[s][j-1]`` is the vertex at distance j on leg s.
    """
    edges: list = []
    legs, nid = [], 1
    for _ in range(m):
        ids, nid = _add_leg(edges, 0, k, nid)
        legs.append(ids)
    if comparison == "leaves":
        S = frozenset(leg[-1] for leg in legs)
    elif comparison == "all-but-center":
        S = frozenset(range(1, nid))
    else:
        raise ConfigError(f"unknown comparison set {comparison!r}")
    return TreeShape(nid, tuple(edges), S, legs[0][-1]), legs


def star_split_procedure_tree(k: int, m: int, xi: int) -> TreeShape:
    """The star-split sample for a fixed split: pivot 0 is sigma0, vertices
    ``1..xi`` are ``X_1..X_xi``, then ``Y`` from 0, then ``m-1`` branches of
    length k from ``X_xi``. Compares everything except ``X_xi``."""
    if not 1 <= xi <= k:
        raise ConfigError(f"split must lie in 1..k, got {xi}")
    edges: list = []
    _, nid = _add_leg(edges, 0, xi, 1)
    _, nid = _add_leg(edges, 0, k - xi, nid)
    for _ in range(m - 1):
        _, nid = _add_leg(edges, xi, k, nid)
    return TreeShape(nid, tuple(edges), frozenset(range(nid)) - {xi}, 0)


def parallel_procedure_tree(k: int, m: int) -> TreeShape:
    """sigma0 = 0, stem ``1..k``, then ``m-1`` branches of length k from ``X_k``;
    compares sigma0 with the branch ends."""
    edges: list = []
    stem, nid = _add_leg(edges, 0, k, 1)
    hub = stem[-1] if stem else 0
    ends = []
    for _ in range(m - 1):
        ids, nid = _add_leg(edges, hub, k, nid)
        ends.append(ids[-1] if ids else hub)
    return TreeShape(nid, tuple(edges), frozenset([0, *ends]), 0)


def serial_procedure_tree(k: int, xi: int) -> TreeShape:
    """Path with sigma0 at position ``xi``: ``Y_xi..Y_1, sigma0, Z_1..Z_{k-xi}``."""
    return path_tree(k, xi)


def _tree_work(nm: _Nums, tree: TreeShape, cap: int) -> float:
    return float(len(set(nm.labels))) * tree.n_vertices * nm.n * (nm.n * (cap + 1) + (cap + 1) ** 2)


def tree_count_law(chain, tree: TreeShape, cap: int | None = None, budget: float | None = None) -> list:
    """Law of ``#{w in S, w != v : label(X_w) <= label(X_v)}`` (saturating at ``cap``)."""
    nm = _nums(chain)
    if cap is None:
        cap = max(0, len(tree.comparison) - 1)
    _check_budget(_tree_work(nm, tree, cap), budget, f"tree messages on {tree.n_vertices} vertices")
    adj = tree.adjacency
    v0 = tree.pivot
    parent = {v0: None}
    order = [v0]
    for u in order:
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                order.append(w)
    children = {u: [w for w in adj[u] if parent.get(w) == u] for u in order}
    zero, one = nm.zero, nm.one
    law = [zero] * (cap + 1)
    by_label = defaultdict(list)
    for s in range(nm.n):
        by_label[nm.labels[s]].append(s)
    for thr, pivots in by_label.items():
        msg: dict[int, list] = {}
        for c in reversed(order[1:]):
            inner = []
            inS = c in tree.comparison
            for w in range(nm.n):
                vec = [zero] * (cap + 1)
                vec[min(1, cap) if inS and nm.labels[w] <= thr else 0] = one
                for g in children[c]:
                    vec = _conv(vec, msg[g][w], cap, zero)
                inner.append(vec)
            out = []
            for u in range(nm.n):
                acc = [zero] * (cap + 1)
                for w in nm.succ[u]:
                    p = nm.P[u][w]
                    for i, x in enumerate(inner[w]):
                        if x:
                            acc[i] += p * x
                out.append(acc)
            msg[c] = out
        for s in pivots:
            if nm.pi[s] == 0:
                continue
            vec = [zero] * (cap + 1)
            vec[0] = one
            for g in children[v0]:
                vec = _conv(vec, msg[g][s], cap, zero)
            for i, x in enumerate(vec):
                law[i] += nm.pi[s] * x
    return law


def exact_tree_rho(chain, tree: TreeShape, l: int, method: str = "dp", budget: float | None = None) -> ExactProbability:
    """Probability that the pivot's label is l-small among the comparison vertices
    of a stationary tree projection."""
    nm = _nums(chain)
    if method == "enumerate":
        return _enumerate_tree_rho(nm, tree, l, budget)
    if method != "dp":
        raise ConfigError(f"unknown method {method!r}")
    cap = max(0, l + 1)
    law = tree_count_law(nm, tree, cap, budget)
    value = sum(law[: l + 1], nm.zero) if l >= 0 else nm.zero
    return nm.result(value, f"rho^{{T,S}}_{{{tree.pivot},{l}}}", _tree_work(nm, tree, cap))


def _enumerate_tree_rho(nm: _Nums, tree: TreeShape, l: int, budget) -> ExactProbability:
    work = float(nm.n) ** tree.n_vertices * tree.n_vertices
    _check_budget(work, budget, f"tree enumeration on {tree.n_vertices} vertices")
    adj = tree.adjacency
    parent = {tree.root: None}
    order = [tree.root]
    for u in order:
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                order.append(w)
    S = sorted(tree.comparison)
    total = nm.zero
    frontier = [(nm.pi[s], {tree.root: s}) for s in range(nm.n) if nm.pi[s] != 0]
    for u in order[1:]:
        par = parent[u]
        frontier = [(p * nm.P[a[par]][x], {**a, u: x}) for p, a in frontier for x in nm.succ[a[par]]]
    for p, a in frontier:
        lab = nm.labels[a[tree.pivot]]
        others = sum(1 for w in S if w != tree.pivot and nm.labels[a[w]] <= lab)
        if others <= l:
            total += p
    return nm.result(total, f"rho^{{T,S}}_{{{tree.pivot},{l}}} (enumerated)", work)


def exact_serial_probability(chain, k: int, epsilon, budget=None) -> ExactProbability:
    """Rejection probability of the serial test at level eps, sigma0 ~ pi."""
    nm = _nums(chain)
    l = ell_for(epsilon, k + 1)
    if l < 0:
        return nm.result(nm.zero, "serial", 0)
    total = nm.zero
    for xi in range(k + 1):
        total += exact_tree_rho(nm, serial_procedure_tree(k, xi), l, budget=budget).value
    val = total / (k + 1) if nm.exact else total / (k + 1.0)
    return nm.result(val, f"serial test, k={k}, eps={as_fraction(epsilon)}", _path_work(nm, k) * (k + 1))


def exact_parallel_probability(chain, k: int, m: int, epsilon, budget=None) -> ExactProbability:
    nm = _nums(chain)
    l = ell_for(epsilon, m)
    tree = parallel_procedure_tree(k, m)
    if l < 0:
        return nm.result(nm.zero, "parallel", 0)
    r = exact_tree_rho(nm, tree, l, budget=budget)
    return ExactProbability(r.value, f"parallel test, k={k}, m={m}, eps={as_fraction(epsilon)}", r.exact, r.error_bound)


def exact_star_split_probability(chain, k: int, m: int, epsilon, budget=None) -> ExactProbability:
    """Rejection probability of the star-split test, averaging over the split xi in 1..k."""
    nm = _nums(chain)
    l = ell_for(epsilon, m * k)
    if l < 0:
        return nm.result(nm.zero, "star-split", 0)
    total = nm.zero
    err = 0.0
    for xi in range(1, k + 1):
        r = exact_tree_rho(nm, star_split_procedure_tree(k, m, xi), l, budget=budget)
        total += r.value
        err += r.error_bound
    val = total / k if nm.exact else total / float(k)
    return ExactProbability(val, f"star-split test, k={k}, m={m}, eps={as_fraction(epsilon)}", nm.exact, err)


@dataclass
class StarSplitProofCheck:
    """Quantities on the m-leg star with every non-center vertex compared."""

    per_distance: list  # rho^{T,S}_{v^1_j, l}, j = 1..k
    per_leg: list  # per_leg[s][j-1] = rho^{T,S}_{v^s_j, l}
    tree_sum: Any  # sum over all w in S
    l: int

    @property
    def leg_average(self):
        return sum(self.per_distance) / len(self.per_distance)


def star_split_proof_check(chain, k: int, m: int, l: int, budget=None) -> StarSplitProofCheck:
    nm = _nums(chain)
    tree, legs = star_tree(m, k, "all-but-center")
    per_leg = [[exact_tree_rho(nm, tree.with_pivot(v), l, budget=budget).value for v in leg] for leg in legs]
    tree_sum = sum((x for leg in per_leg for x in leg), nm.zero)
    return StarSplitProofCheck(per_leg[0], per_leg, tree_sum, l)


# -- random tie-breaking ----------------------------------------------------------
#
# With ties broken at random the pivot takes a uniform place among the labels
# equal to its own. Then it is l-small with probability
# clamp((l + 1 - L) / (E + 1), 0, 1), where L counts other labels strictly
# below it and E counts other labels equal to it. The laws below are over (L, E)
# with L saturating at l + 1.

TIES = ("leq", "random")


def _check_ties(ties: str):
    if ties not in TIES:
        raise ConfigError(f"ties must be one of {TIES}, got {ties!r}")


def _tie_step(label, thr) -> tuple[int, int]:
    return (1, 0) if label < thr else (0, 1) if label == thr else (0, 0)


def _shift_law(law: dict, s: tuple[int, int], capL: int, p, out: dict):
    for (L, E), x in law.items():
        key = (min(L + s[0], capL), E + s[1])
        out[key] = out.get(key, 0) + x * p


def _conv_law(a: dict, b: dict, capL: int) -> dict:
    out: dict = {}
    for (l1, e1), x in a.items():
        for (l2, e2), y in b.items():
            key = (min(l1 + l2, capL), e1 + e2)
            out[key] = out.get(key, 0) + x * y
    return out


def _tie_probability(law: dict, l: int, nm: _Nums):
    total = nm.zero
    for (L, E), x in law.items():
        if L <= l:
            frac = Fraction(l + 1 - L, E + 1) if nm.exact else (l + 1 - L) / (E + 1)
            total += x * min(nm.one, frac)
    return total


def _tree_tie_law(nm: _Nums, tree: TreeShape, l: int, budget) -> dict:
    capL = l + 1
    _check_budget(_tree_work(nm, tree, len(tree.comparison)) * (capL + 1), budget,
                  f"tie-broken tree messages on {tree.n_vertices} vertices")
    adj = tree.adjacency
    v0 = tree.pivot
    parent = {v0: None}
    order = [v0]
    for u in order:
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                order.append(w)
    children = {u: [w for w in adj[u] if parent.get(w) == u] for u in order}
    total: dict = {}
    for thr in sorted(set(nm.labels)):
        msg: dict = {}
        for c in reversed(order[1:]):
            inner = []
            for w in range(nm.n):
                s = _tie_step(nm.labels[w], thr) if c in tree.comparison else (0, 0)
                vec = {(min(s[0], capL), s[1]): nm.one}
                for g in children[c]:
                    vec = _conv_law(vec, msg[g][w], capL)
                inner.append(vec)
            out = []
            for u in range(nm.n):
                acc: dict = {}
                for w in nm.succ[u]:
                    _shift_law(inner[w], (0, 0), capL, nm.P[u][w], acc)
                out.append(acc)
            msg[c] = out
        for s0 in range(nm.n):
            if nm.labels[s0] != thr or nm.pi[s0] == 0:
                continue
            vec = {(0, 0): nm.one}
            for g in children[v0]:
                vec = _conv_law(vec, msg[g][s0], capL)
            _shift_law(vec, (0, 0), capL, nm.pi[s0], total)
    return total


def exact_tree_rho_tied(chain, tree: TreeShape, l: int, method: str = "dp", budget=None) -> ExactProbability:
    """:func:`exact_tree_rho` with ties broken uniformly at random."""
    nm = _nums(chain)
    if l < 0:
        return nm.result(nm.zero, "tie-broken tree rho", 0)
    if method == "enumerate":
        work = float(nm.n) ** tree.n_vertices * tree.n_vertices
        _check_budget(work, budget, f"tree enumeration on {tree.n_vertices} vertices")
        adj = tree.adjacency
        parent = {tree.root: None}
        order = [tree.root]
        for u in order:
            for w in adj[u]:
                if w not in parent:
                    parent[w] = u
                    order.append(w)
        frontier = [(nm.pi[s], {tree.root: s}) for s in range(nm.n) if nm.pi[s] != 0]
        for u in order[1:]:
            par = parent[u]
            frontier = [(p * nm.P[a[par]][x], {**a, u: x}) for p, a in frontier for x in nm.succ[a[par]]]
        law: dict = {}
        for p, a in frontier:
            thr = nm.labels[a[tree.pivot]]
            L = sum(1 for w in tree.comparison if w != tree.pivot and nm.labels[a[w]] < thr)
            E = sum(1 for w in tree.comparison if w != tree.pivot and nm.labels[a[w]] == thr)
            key = (min(L, l + 1), E)
            law[key] = law.get(key, 0) + p
        return nm.result(_tie_probability(law, l, nm), "tie-broken tree rho (enumerated)", work)
    law = _tree_tie_law(nm, tree, l, budget)
    return nm.result(_tie_probability(law, l, nm), f"tie-broken rho^{{T,S}}_{{{tree.pivot},{l}}}",
                     _tree_work(nm, tree, l + 1))


def _path_tie_law(nm: _Nums, sigma_or_none, k: int, j: int, l: int) -> dict:
    """(L, E) law for position j of a length-k trajectory; stationary start, or
    conditioned on X_j = sigma when sigma is given."""
    capL = l + 1
    total: dict = {}
    for thr in sorted(set(nm.labels)):
        pivots = [s for s in range(nm.n) if nm.labels[s] == thr and nm.pi[s] != 0]
        if sigma_or_none is not None:
            pivots = [sigma_or_none] if nm.labels[sigma_or_none] == thr else []
        if not pivots:
            continue
        # forward: Pr[X_t = u, (L, E) over positions < t]
        alpha = [[{(0, 0): nm.pi[u]} if nm.pi[u] != 0 else {} for u in range(nm.n)]]
        for _ in range(j):
            prev = alpha[-1]
            cur: list = [dict() for _ in range(nm.n)]
            for u in range(nm.n):
                if prev[u]:
                    s = _tie_step(nm.labels[u], thr)
                    for v in nm.succ[u]:
                        _shift_law(prev[u], s, capL, nm.P[u][v], cur[v])
            alpha.append(cur)
        # backward: law over positions > j given X_j
        beta = [{(0, 0): nm.one} for _ in range(nm.n)]
        for _ in range(k - j):
            cur = [dict() for _ in range(nm.n)]
            for u in range(nm.n):
                for v in nm.succ[u]:
                    _shift_law(beta[v], _tie_step(nm.labels[v], thr), capL, nm.P[u][v], cur[u])
            beta = cur
        for s in pivots:
            joint = _conv_law(alpha[j][s], beta[s], capL)
            scale = (nm.one / nm.pi[s]) if sigma_or_none is not None else nm.one
            _shift_law(joint, (0, 0), capL, scale, total)
    return total


def exact_rho_tied(chain, k: int, j: int, l: int, method: str = "dp", budget=None) -> ExactProbability:
    """:func:`exact_rho` with ties broken uniformly at random."""
    nm = _nums(chain)
    if not 0 <= j <= k:
        raise ConfigError(f"need 0 <= j <= k, got j={j}, k={k}")
    if l < 0:
        return nm.result(nm.zero, "tie-broken rho", 0)
    if method == "enumerate":
        work = float(nm.n) ** (k + 1) * (k + 1)
        _check_budget(work, budget, f"path enumeration for k={k}")
        law: dict = {}
        for p, path in _paths(nm, k):
            thr = nm.labels[path[j]]
            L = sum(1 for i, s in enumerate(path) if i != j and nm.labels[s] < thr)
            E = sum(1 for i, s in enumerate(path) if i != j and nm.labels[s] == thr)
            key = (min(L, l + 1), E)
            law[key] = law.get(key, 0) + p
        return nm.result(_tie_probability(law, l, nm), f"tie-broken rho^{k}_{{{j},{l}}} (enumerated)", work)
    _check_budget(_path_work(nm, k) * (k + 1), budget, f"tie-broken rank law for k={k}")
    law = _path_tie_law(nm, None, k, j, l)
    return nm.result(_tie_probability(law, l, nm), f"tie-broken rho^{k}_{{{j},{l}}}", _path_work(nm, k))


def exact_p_conditional_tied(chain, sigma: int, k: int, epsilon, j: int = 0, budget=None) -> ExactProbability:
    nm = _nums(chain)
    if nm.pi[sigma] == 0:
        raise ConfigError(f"state {sigma} has zero stationary weight; cannot condition on it")
    l = ell_for(epsilon, k + 1)
    if l < 0:
        return nm.result(nm.zero, "tie-broken conditional p", 0)
    _check_budget(_path_work(nm, k) * (k + 1), budget, f"tie-broken conditional law for k={k}")
    law = _path_tie_law(nm, sigma, k, j, l)
    return nm.result(_tie_probability(law, l, nm), f"tie-broken p^{k}_{{{j},eps}}({sigma})", _path_work(nm, k))


def exact_serial_probability_tied(chain, k: int, epsilon, budget=None) -> ExactProbability:
    nm = _nums(chain)
    l = ell_for(epsilon, k + 1)
    total = nm.zero
    for xi in range(k + 1):
        total += exact_tree_rho_tied(nm, serial_procedure_tree(k, xi), l, budget=budget).value
    return nm.result(total / (k + 1), f"tie-broken serial test, k={k}", _path_work(nm, k) * (k + 1))


def exact_parallel_probability_tied(chain, k: int, m: int, epsilon, budget=None) -> ExactProbability:
    nm = _nums(chain)
    r = exact_tree_rho_tied(nm, parallel_procedure_tree(k, m), ell_for(epsilon, m), budget=budget)
    return ExactProbability(r.value, f"tie-broken parallel test, k={k}, m={m}", r.exact, r.error_bound)


# -- product chains ---------------------------------------------------------------

def _product_parts(product) -> tuple[list, Callable | None]:
    comps = getattr(product, "components", None)
    if comps is None:
        return list(product), None
    if getattr(product, "joint_label", "sum") == "sum":
        return list(comps), None
    return list(comps), product.label_of


def _stationary_paths(nm: _Nums, k: int, pivot: int):
    return [(p, path, pivot) for p, path in _paths(nm, k)]


def _procedure_paths(nm: _Nums, k: int, sigma0: int | None, pivots: Sequence[int]):
    """Paths of length k through the pivot, weighted by the sampling procedure:
    pivot position uniform over ``pivots``, pivot state ~ pi (or fixed to
    ``sigma0``), then independent forward walks on both sides."""
    out = []
    starts = [sigma0] if sigma0 is not None else [s for s in range(nm.n) if nm.pi[s] != 0]
    wj = Fraction(1, len(pivots)) if nm.exact else 1.0 / len(pivots)
    for j in pivots:
        for s in starts:
            w0 = (nm.one if sigma0 is not None else nm.pi[s]) * wj
            left = [(nm.one, (s,))]
            for _ in range(j):
                left = [(p * nm.P[q[-1]][v], q + (v,)) for p, q in left for v in nm.succ[q[-1]]]
            right = [(nm.one, (s,))]
            for _ in range(k - j):
                right = [(p * nm.P[q[-1]][v], q + (v,)) for p, q in right for v in nm.succ[q[-1]]]
            for pl, ql in left:
                for pr, qr in right:
                    out.append((w0 * pl * pr, tuple(reversed(ql)) + qr[1:], j))
    return out


def _aggregate(nm: _Nums, paths, keep_states: bool):
    agg: dict = defaultdict(lambda: nm.zero)
    for p, path, j in paths:
        key = (path if keep_states else tuple(nm.labels[s] for s in path), j)
        agg[key] += p
    return [(p, seq, j) for (seq, j), p in agg.items()]


def _label_array(seqs, label_fn, comps_nums):
    if label_fn is None:
        from .product import exact_key

        arrays = [np.array([exact_key(x) for x in seq], dtype=object) for seq in seqs]
        L = arrays[0]
        for a in arrays[1:]:
            L = np.add.outer(L, a)
        return L
    shape = tuple(len(s) for s in seqs)
    L = np.empty(shape, dtype=object)
    for idx in itertools.product(*(range(n) for n in shape)):
        L[idx] = label_fn(tuple(seq[i] for seq, i in zip(seqs, idx)))
    return L


def _product_law(product, lists, cap: int, budget, per_position: bool = False):
    comps, label_fn = _product_parts(product)
    nms = [_nums(c) for c in comps]
    exact = all(nm.exact for nm in nms)
    zero = Fraction(0) if exact else 0.0
    n_elems = math.prod(len(lst[0][1]) if lst else 1 for lst in lists)
    work = float(math.prod(len(lst) for lst in lists)) * n_elems * (n_elems if per_position else 1)
    _check_budget(work, budget, "product trajectory enumeration")
    out = defaultdict(lambda: [zero] * (cap + 1)) if per_position else [zero] * (cap + 1)
    for combo in itertools.product(*lists):
        p = math.prod((c[0] for c in combo), start=Fraction(1) if exact else 1.0)
        if p == 0:
            continue
        L = _label_array([c[1] for c in combo], label_fn, nms)
        if per_position:
            flat = L.ravel()
            for pos in itertools.product(*(range(n) for n in L.shape)):
                cnt = int(np.count_nonzero(flat <= L[pos])) - 1
                out[pos][min(cnt, cap)] += p
        else:
            pos = tuple(c[2] for c in combo)
            cnt = int(np.count_nonzero(L <= L[pos])) - 1
            out[min(cnt, cap)] += p
    return out, exact, work


def product_rho_table(product, k: Sequence[int], budget=None) -> dict:
    """``table[j][c]``: law of the number of other product elements with label <= that of element j."""
    comps, label_fn = _product_parts(product)
    nms = [_nums(c) for c in comps]
    lists = [_aggregate(nm, _stationary_paths(nm, ki, 0), label_fn is not None) for nm, ki in zip(nms, k)]
    cap = math.prod(ki + 1 for ki in k) - 1
    table, _, _ = _product_law(product, lists, cap, budget, per_position=True)
    return dict(table)


def exact_product_rho(product, k: Sequence[int], j: Sequence[int], l: int, budget=None) -> ExactProbability:
    """Probability that the product element at ``j`` is l-small among all
    ``prod(k_i + 1)`` elements of a stationary trajectory product."""
    comps, label_fn = _product_parts(product)
    nms = [_nums(c) for c in comps]
    if len(k) != len(comps) or len(j) != len(comps):
        raise ConfigError("k and j must have one entry per component")
    lists = [_aggregate(nm, _stationary_paths(nm, ki, ji), label_fn is not None)
             for nm, ki, ji in zip(nms, k, j)]
    cap = max(0, l + 1)
    law, exact, work = _product_law(product, lists, cap, budget)
    val = sum(law[: l + 1], Fraction(0) if exact else 0.0) if l >= 0 else 0
    return ExactProbability(val if exact else float(val), f"product rho^{tuple(k)}_{{{tuple(j)},{l}}}", exact,
                            0.0 if exact else work * FLOAT_EPS)


def _product_procedure_probability(product, lengths, sigma0, pivot_sets, n_total, epsilon, budget, desc):
    comps, label_fn = _product_parts(product)
    nms = [_nums(c) for c in comps]
    s0 = sigma0 if sigma0 is not None else [None] * len(comps)
    lists = [_aggregate(nm, _procedure_paths(nm, ki, si, piv), label_fn is not None)
             for nm, ki, si, piv in zip(nms, lengths, s0, pivot_sets)]
    l = ell_for(epsilon, n_total)
    cap = max(0, l + 1)
    law, exact, work = _product_law(product, lists, cap, budget)
    val = sum(law[: l + 1], Fraction(0) if exact else 0.0) if l >= 0 else (Fraction(0) if exact else 0.0)
    return ExactProbability(val if exact else float(val), desc, exact, 0.0 if exact else work * FLOAT_EPS)


def exact_product_serial_probability(product, k: int, epsilon, budget=None) -> ExactProbability:
    """Serial product test: every component split uniformly on {0..k}, stationary start."""
    comps, _ = _product_parts(product)
    d = len(comps)
    return _product_procedure_probability(product, [k] * d, None, [range(k + 1)] * d, (k + 1) ** d, epsilon, budget,
                                          f"product serial test, k={k}, d={d}")


def exact_product_two_path_probability(product, k: int, epsilon, budget=None) -> ExactProbability:
    comps, _ = _product_parts(product)
    d = len(comps)
    return _product_procedure_probability(product, [2 * k] * d, None, [[k]] * d, (2 * k + 1) ** d, epsilon, budget,
                                          f"product two-path test, k={k}, d={d}")


def exact_product_uniform_pivot(product, sigma0: Sequence[int], k: Sequence[int], epsilon,
                                budget=None) -> ExactProbability:
    """``p^k_{U,eps}(sigma0)``: pivots uniform per dimension, trajectories conditioned through sigma0."""
    n_total = math.prod(ki + 1 for ki in k)
    return _product_procedure_probability(product, list(k), list(sigma0), [range(ki + 1) for ki in k], n_total,
                                          epsilon, budget, f"product uniform-pivot p at {tuple(sigma0)}")


def certify_product_eps_alpha(product, sigma0: Sequence[int], k: Sequence[int], epsilon, alpha,
                              budget=None) -> Certification:
    """Product-space (eps, alpha) certification using the uniform-pivot probability."""
    comps, _ = _product_parts(product)
    nms = [_nums(c) for c in comps]
    exact = all(nm.exact for nm in nms)
    states = list(itertools.product(*(range(nm.n) for nm in nms)))
    pis = [math.prod((nm.pi[s] for nm, s in zip(nms, st)), start=Fraction(1) if exact else 1.0) for st in states]
    ps = [exact_product_uniform_pivot(product, st, k, epsilon, budget).value if w != 0 else None
          for st, w in zip(states, pis)]
    i0 = states.index(tuple(sigma0))
    vals = [p if p is not None else ps[i0] - 1 for p in ps]
    cert = certify_from_values(vals, pis, i0, epsilon, alpha, exact)
    cert.sigma0 = tuple(sigma0)
    return cert
