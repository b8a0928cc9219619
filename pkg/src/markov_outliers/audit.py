"""Sweep every bound and proof inequality over a small explicit chain.

Each check compares two exact quantities (or floats with a tolerance when the
chain is not rational) and records the outcome. Bounds involving square
roots are decided on squares so that exact chains never meet a rounding
question.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

from . import oracle
from .chain import LabeledChain

CHECKS = ("sum", "interval", "two_path", "single", "key", "serial", "eps_alpha", "parallel", "star_split")
DEFAULT_ALPHAS = (Fraction(1, 4), Fraction(1, 2), Fraction(1))


@dataclass
class AuditCheck:
    name: str
    params: dict
    lhs: Any
    rhs: Any
    relation: str  # "<=" or "<"
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "params": {k: _s(v) for k, v in self.params.items()},
                "lhs": _s(self.lhs), "rhs": _s(self.rhs), "relation": self.relation, "passed": self.passed}


def _s(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (list, tuple)):
        return [_s(v) for v in x]
    return x


@dataclass
class AuditResult:
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def violations(self) -> list:
        return [c for c in self.checks if not c.passed]

    def counts(self) -> dict:
        out: dict = {}
        for c in self.checks:
            n, bad = out.get(c.name, (0, 0))
            out[c.name] = (n + 1, bad + (0 if c.passed else 1))
        return out

    def extend(self, other: "AuditResult"):
        self.checks.extend(other.checks)

    def summary(self) -> dict:
        return {name: {"checked": n, "violations": bad} for name, (n, bad) in sorted(self.counts().items())}


class _Recorder:
    def __init__(self, exact: bool, tol: float = 1e-9):
        self.exact = exact
        self.tol = tol
        self.result = AuditResult()

    def check(self, name, params, lhs, rhs, relation="<=", lhs_cmp=None, rhs_cmp=None):
        a = lhs if lhs_cmp is None else lhs_cmp
        b = rhs if rhs_cmp is None else rhs_cmp
        if self.exact:
            ok = a < b if relation == "<" else a <= b
        else:
            ok = float(a) <= float(b) + self.tol
        self.result.checks.append(AuditCheck(name, params, lhs, rhs, relation, bool(ok)))


def _grid(n: int):
    return [Fraction(c, n) for c in range(1, n + 1)]


def audit_chain(chain: LabeledChain, k_max: int = 4, checks: Sequence[str] = CHECKS,
                alphas: Sequence = DEFAULT_ALPHAS, tree_k_max: int = 3, tree_m_max: int = 3,
                budget: float | None = None) -> AuditResult:
    """Run the selected checks for every ``k <= k_max`` (trees: ``k <= tree_k_max``, ``m <= tree_m_max``)."""
    nm = oracle._Nums(chain)
    rec = _Recorder(nm.exact)
    checks = set(checks)
    unknown = checks - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}")
    one = nm.one
    live = [s for s in range(nm.n) if nm.pi[s] != 0]

    rho_cache: dict[int, list] = {}

    def rho(k):
        if k not in rho_cache:
            rho_cache[k] = oracle.rho_matrix(nm, k, budget)
        return rho_cache[k]

    for k in range(0, k_max + 1):
        if "sum" in checks:
            R = rho(k)
            for l in range(k + 1):
                rec.check("sum", {"k": k, "l": l}, sum((R[j][l] for j in range(k + 1)), nm.zero), l + 1)
        if "interval" in checks:
            R, R2 = rho(k), rho(2 * k)
            for j in range(k + 1):
                for l in range(k + 1):
                    rec.check("interval", {"k": k, "j": j, "l": l}, R2[k][l], R[j][l])
        if "two_path" in checks:
            R2 = rho(2 * k)
            for eps in _grid(2 * k + 1):
                l = oracle.ell_for(eps, 2 * k + 1)
                rec.check("two_path", {"k": k, "epsilon": eps}, R2[k][l], 2 * eps, "<")
        if "single" in checks:
            R = rho(k)
            for eps in _grid(k + 1):
                l = oracle.ell_for(eps, k + 1)
                p = R[0][l]
                rec.check("single", {"k": k, "epsilon": eps}, p, math.sqrt(2 * eps), "<=", p * p, 2 * eps)
        if "serial" in checks:
            for eps in _grid(k + 1):
                v = oracle.exact_serial_probability(nm, k, eps, budget).value
                rec.check("serial", {"k": k, "epsilon": eps}, v, eps)
        if {"key", "eps_alpha"} & checks:
            eps_grid = sorted(set(_grid(k + 1)) | set(_grid(2 * k + 1)))
            for eps in eps_grid:
                p1 = {s: oracle.exact_p_conditional(nm, s, k, eps, 0, budget).value for s in live}
                if "key" in checks:
                    for s in live:
                        p2 = oracle.exact_p_conditional(nm, s, 2 * k, eps, k, budget).value
                        rec.check("key", {"k": k, "epsilon": eps, "sigma": s}, p1[s] * p1[s], p2)
                if "eps_alpha" in checks:
                    vals = [p1.get(s, -one) for s in range(nm.n)]
                    for alpha in alphas:
                        for s in live:
                            cert = oracle.certify_from_values(vals, nm.pi, s, eps, alpha, nm.exact)
                            if cert.non_outlier:
                                bound = 2 * eps / Fraction(alpha)
                                rec.check("eps_alpha", {"k": k, "epsilon": eps, "alpha": Fraction(alpha), "sigma": s},
                                          p1[s], math.sqrt(min(1.0, float(bound))), "<=", p1[s] * p1[s],
                                          min(Fraction(1), bound) if nm.exact else min(1.0, float(bound)))

    for k in range(1, tree_k_max + 1):
        for m in range(1, tree_m_max + 1):
            if "parallel" in checks:
                for eps in _grid(m):
                    v = oracle.exact_parallel_probability(nm, k, m, eps, budget).value
                    rec.check("parallel", {"k": k, "m": m, "epsilon": eps}, v, eps)
            if "star_split" in checks:
                for eps in _grid(m * k):
                    v = oracle.exact_star_split_probability(nm, k, m, eps, budget).value
                    rec.check("star_split", {"k": k, "m": m, "epsilon": eps}, v, eps)
                tree, _ = oracle.star_tree(m, k, "all-but-center")
                S = sorted(tree.comparison)
                laws = {w: oracle.tree_count_law(nm, tree.with_pivot(w), None, budget) for w in S}
                for l in range(len(S)):
                    per = {w: sum(laws[w][: l + 1], nm.zero) for w in S}
                    rec.check("star_split", {"k": k, "m": m, "l": l, "quantity": "tree_sum"},
                              sum(per.values(), nm.zero), l + 1)
                    leg = [w for w in S if w <= k]  # leg 1 holds vertices 1..k
                    rec.check("star_split", {"k": k, "m": m, "l": l, "quantity": "leg_sum"},
                              sum((per[w] for w in leg), nm.zero),
                              Fraction(l + 1, m) if nm.exact else (l + 1) / m)
    return rec.result


def audit_product(chains: Sequence, serial_k: Sequence[int] = (1, 2), two_path_k: Sequence[int] = (1,),
                  rho_k: Sequence[int] = (1,), budget: float | None = None) -> AuditResult:
    """Product-space checks: serial <= eps, two-path <= 2^d eps, and the sum and interval
    inequalities for trajectory products."""
    nms = [oracle._Nums(c) for c in chains]
    exact = all(nm.exact for nm in nms)
    rec = _Recorder(exact)
    d = len(chains)
    for k in serial_k:
        for eps in _grid((k + 1) ** d):
            v = oracle.exact_product_serial_probability(chains, k, eps, budget).value
            rec.check("product_serial", {"k": k, "d": d, "epsilon": eps}, v, eps)
    for k in two_path_k:
        for eps in _grid((2 * k + 1) ** d):
            v = oracle.exact_product_two_path_probability(chains, k, eps, budget).value
            rec.check("product_two_path", {"k": k, "d": d, "epsilon": eps}, v, min(Fraction(1), 2**d * eps))
    for k in rho_k:
        n_small = (k + 1) ** d
        table = oracle.product_rho_table(chains, (k,) * d, budget)
        table2 = oracle.product_rho_table(chains, (2 * k,) * d, budget)
        zero = Fraction(0) if exact else 0.0
        for l in range(n_small):
            total = sum((sum(law[: l + 1], zero) for law in table.values()), zero)
            rec.check("product_sum", {"k": k, "d": d, "l": l}, total, l + 1)
            centre = sum(table2[(k,) * d][: l + 1], zero)
            for j, law in sorted(table.items()):
                rec.check("product_interval", {"k": k, "d": d, "l": l, "j": list(j)}, centre,
                          sum(law[: l + 1], zero))
    return rec.result


def audit_product_uniform_pivot(product, k: Sequence[int], eps_grid: Sequence, alphas: Sequence = DEFAULT_ALPHAS,
                                budget: float | None = None) -> AuditResult:
    """For every certified product non-(eps, alpha)-outlier, ``p_U(sigma) <= eps / alpha``."""
    comps, _ = oracle._product_parts(product)
    nms = [oracle._Nums(c) for c in comps]
    exact = all(nm.exact for nm in nms)
    rec = _Recorder(exact)
    states = list(itertools.product(*(range(nm.n) for nm in nms)))
    pis = [math.prod((nm.pi[s] for nm, s in zip(nms, st)), start=Fraction(1) if exact else 1.0) for st in states]
    for eps in eps_grid:
        ps = [oracle.exact_product_uniform_pivot(product, st, k, eps, budget).value if w else -1
              for st, w in zip(states, pis)]
        for alpha in alphas:
            for i, st in enumerate(states):
                if not pis[i]:
                    continue
                cert = oracle.certify_from_values(ps, pis, i, eps, alpha, exact)
                if cert.non_outlier:
                    rec.check("product_eps_alpha", {"k": list(k), "epsilon": Fraction(eps), "alpha": Fraction(alpha),
                                                    "sigma": list(st)}, ps[i], min(Fraction(1), Fraction(eps) / alpha))
    return rec.result
