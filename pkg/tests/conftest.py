"""Shared fixtures and an independent brute-force reference.

The reference walks every path explicitly with ``itertools.product`` and
exact fractions. It shares nothing with ``markov_outliers.oracle`` beyond the
chain's raw transition table, so agreement between the two is a real check.
"""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from markov_outliers.zoo import make_iid, make_knn, random_reversible_chain


def _pi(chain):
    w = [Fraction(x) for x in chain.stationary_weight]
    total = sum(w)
    return [x / total for x in w]


def paths(chain, k, start=None):
    """Yield ``(path, probability)`` for every length-k path with positive mass."""
    P = [[Fraction(x) for x in row] for row in chain.transition]
    pi = _pi(chain)
    n = chain.n_states
    starts = range(n) if start is None else [start]
    for s0 in starts:
        w0 = pi[s0] if start is None else Fraction(1)
        if w0 == 0:
            continue
        for rest in itertools.product(range(n), repeat=k):
            p = w0
            prev = s0
            for s in rest:
                p *= P[prev][s]
                if p == 0:
                    break
                prev = s
            if p:
                yield (s0, *rest), p


def small_count(labels, j):
    return sum(1 for i, a in enumerate(labels) if i != j and a <= labels[j])


def ref_rho(chain, k, j, l):
    lab = chain.label
    return sum((p for path, p in paths(chain, k) if small_count([lab[s] for s in path], j) <= l), Fraction(0))


def ref_rho_tied(chain, k, j, l):
    """Pivot placed uniformly among the labels equal to it."""
    lab = chain.label
    total = Fraction(0)
    for path, p in paths(chain, k):
        a = [lab[s] for s in path]
        less = sum(1 for i, x in enumerate(a) if i != j and x < a[j])
        eq = sum(1 for i, x in enumerate(a) if i != j and x == a[j])
        total += p * min(Fraction(1), max(Fraction(0), Fraction(l + 1 - less, eq + 1)))
    return total


def ref_p_conditional(chain, sigma, k, eps):
    lab = chain.label
    cut = math.floor(Fraction(eps) * (k + 1))
    return sum((p for path, p in paths(chain, k, sigma) if 1 + small_count([lab[s] for s in path], 0) <= cut),
               Fraction(0))


def ref_serial(chain, k, eps):
    """Serial test: pivot at a uniform position of a stationary length-k trajectory."""
    lab = chain.label
    cut = math.floor(Fraction(eps) * (k + 1))
    total = Fraction(0)
    for path, p in paths(chain, k):
        a = [lab[s] for s in path]
        hits = sum(1 for j in range(k + 1) if 1 + small_count(a, j) <= cut)
        total += p * Fraction(hits, k + 1)
    return total


@pytest.fixture
def knn3():
    return make_knn(3)


@pytest.fixture
def iid5():
    return make_iid([1, 2, 3, 4, 5])


@pytest.fixture
def small_chains():
    """A handful of exact random reversible chains, with and without label ties."""
    out = [random_reversible_chain(n, np.random.default_rng(seed)) for n, seed in [(3, 1), (4, 2), (4, 3)]]
    out.append(random_reversible_chain(4, np.random.default_rng(4), labels="ties"))
    return out


# -- acceptance verdicts ----------------------------------------------------------

ACCEPTANCE_LINES = []


def record_verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
