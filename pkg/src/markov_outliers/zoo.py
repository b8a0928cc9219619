"""Built-in chain families used by the demos, the CLI and the test suite."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np

from .chain import LabeledChain, build_from_edge_list
from .errors import ConfigError


def make_knn(n: int, side_a_labels: Sequence | None = None, side_b_labels: Sequence | None = None) -> LabeledChain:
    """Random walk on the complete bipartite graph K_{n,n}.

    States ``0..n-1`` form one side and ``n..2n-1`` the other; labels default
    to ``1..n`` and ``n+1..2n``.
    """
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError(f"n must be a positive integer, got {n!r}")
    a = list(side_a_labels) if side_a_labels is not None else list(range(1, n + 1))
    b = list(side_b_labels) if side_b_labels is not None else list(range(n + 1, 2 * n + 1))
    if len(a) != n or len(b) != n:
        raise ConfigError(f"need {n} labels per side")
    edges = [(i, n + j, 1) for i in range(n) for j in range(n)]
    return build_from_edge_list(edges, labels=a + b, n_states=2 * n)


def make_iid(labels: Sequence, weights: Sequence | None = None) -> LabeledChain:
    """Independent draws: ``P(u, v) = pi(v)`` for every ``u`` (uniform pi by default)."""
    labels = list(labels)
    if not labels:
        raise ConfigError("need at least one label")
    w = list(weights) if weights is not None else [1] * len(labels)
    if len(w) != len(labels) or any(x <= 0 for x in w):
        raise ConfigError("weights must be positive, one per label")
    total = sum(Fraction(x) for x in w)
    row = tuple(Fraction(x) / total for x in w)
    return LabeledChain(tuple(row for _ in labels), tuple(w), tuple(labels))


def make_path(n: int, labels: Sequence | None = None) -> LabeledChain:
    """Simple random walk on the path ``0 - 1 - ... - n-1``."""
    if n < 2:
        raise ConfigError("a path walk needs at least 2 states")
    return build_from_edge_list([(i, i + 1, 1) for i in range(n - 1)], labels=labels, n_states=n)


def make_cycle(n: int, labels: Sequence | None = None) -> LabeledChain:
    """Simple random walk on the n-cycle (n = 2 gives the deterministic 2-cycle)."""
    if n < 2:
        raise ConfigError("a cycle walk needs at least 2 states")
    if n == 2:
        return build_from_edge_list([(0, 1, 1)], labels=labels, n_states=2)
    return build_from_edge_list([(i, (i + 1) % n, 1) for i in range(n)], labels=labels, n_states=n)


def random_reversible_chain(n_states: int, rng: int | np.random.Generator = 0, labels: str = "distinct",
                            max_weight: int = 4, edge_prob: float = 0.4, loop_prob: float = 0.3) -> LabeledChain:
    """Random walk on a random connected graph with integer weights.

    A random spanning tree guarantees connectivity; extra edges and
    self-loops are added independently. Integer weights keep the chain exact,
    so detailed balance holds with zero residual. ``labels="distinct"``
    draws a random permutation of ``1..n``; ``"ties"`` draws from a small
    range so equal labels are common.
    """
    if isinstance(n_states, bool) or not isinstance(n_states, int) or n_states < 2:
        raise ConfigError(f"n_states must be an integer >= 2, got {n_states!r}")
    g = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n = n_states
    edges = []
    order = g.permutation(n)
    for i in range(1, n):
        u, v = int(order[i]), int(order[g.integers(0, i)])
        edges.append((u, v, int(g.integers(1, max_weight + 1))))
    present = {(min(u, v), max(u, v)) for u, v, _ in edges}
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in present and g.random() < edge_prob:
                edges.append((u, v, int(g.integers(1, max_weight + 1))))
        if g.random() < loop_prob:
            edges.append((u, u, int(g.integers(1, max_weight + 1))))
    if labels == "distinct":
        lab = [int(x) + 1 for x in g.permutation(n)]
    elif labels == "ties":
        lab = [int(x) for x in g.integers(1, max(2, n // 2) + 1, size=n)]
    else:
        raise ConfigError(f"unknown label mode {labels!r}")
    return build_from_edge_list(edges, labels=lab, n_states=n)


def zoo_chain(spec: str):
    """Chain from a short spec string.

    ``knn:N``, ``iid:N`` (labels 1..N), ``path:N``, ``cycle:N``,
    ``random:N[:SEED[:ties]]``, ``grid`` (bundled 4x4 districting chain) and
    ``grid2x2`` (enumerable 2x2 instance).
    """
    name, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    try:
        if name == "knn":
            return make_knn(int(args[0]))
        if name == "iid":
            return make_iid(list(range(1, int(args[0]) + 1)))
        if name == "path":
            return make_path(int(args[0]))
        if name == "cycle":
            return make_cycle(int(args[0]))
        if name == "random":
            n = int(args[0])
            seed = int(args[1]) if len(args) > 1 else 0
            mode = args[2] if len(args) > 2 else "distinct"
            return random_reversible_chain(n, seed, labels=mode)
        if name in ("grid", "grid2x2"):
            from .districting import bundled_grid_chain

            return bundled_grid_chain("4x4" if name == "grid" else "2x2")
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad zoo spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown zoo chain {name!r}")
