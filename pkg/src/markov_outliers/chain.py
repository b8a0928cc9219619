"""Explicit reversible Markov chains with a real label on every state.

Transition entries and stationary weights are kept exactly as supplied:
``int`` and ``Fraction`` values stay rational so the oracle can work in
exact arithmetic, ``float`` values stay floats. ``P(u, v)`` is the
probability of stepping from ``u`` to ``v``.

Stationary weights are unnormalized; only :func:`stationary_distribution`
and :func:`stationary_exact` normalize.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from numbers import Rational
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError, IsolatedVertexError

ROW_SUM_TOL = 1e-12
DETAILED_BALANCE_TOL = 1e-10

Number = int | float | Fraction


def is_rational(x) -> bool:
    return isinstance(x, Rational) and not isinstance(x, bool)


def as_fraction(x) -> Fraction:
    """Exact rational for a user-facing real such as an epsilon or alpha.

    Floats go through their shortest decimal repr, so ``0.3`` becomes
    ``3/10`` rather than the binary neighbour just below it. Strings may be
    ``"1/3"`` or decimals.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise ConfigError(f"not a number: {x!r}")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ConfigError(f"not a finite number: {x!r}")
        return Fraction(repr(x))
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot read {x!r} as a number") from exc
    if is_rational(x):
        return Fraction(x.numerator, x.denominator)
    raise ConfigError(f"not a number: {x!r}")


def _exact_sum(values: Iterable[Number]) -> Number:
    values = list(values)
    if all(is_rational(v) for v in values):
        return sum((Fraction(v) for v in values), Fraction(0))
    return math.fsum(float(v) for v in values)


@dataclass(frozen=True)
class LabeledChain:
    """A finite chain: dense transition rows, stationary weights, labels.

    Construction checks shapes only. Use :func:`validate_chain` for the
    stochasticity and detailed-balance checks; a chain that fails them can
    still be built so the violations can be reported.
    """

    transition: tuple[tuple[Number, ...], ...]
    stationary_weight: tuple[Number, ...]
    label: tuple[Number, ...]
    state_ids: tuple | None = None
    # canonical (u, v, weight) with u <= v, kept when built from an edge list
    edges: tuple[tuple[int, int, Number], ...] | None = field(default=None)

    def __post_init__(self):
        n = len(self.transition)
        if n == 0:
            raise ConfigError("a chain needs at least one state")
        object.__setattr__(self, "transition", tuple(tuple(row) for row in self.transition))
        object.__setattr__(self, "stationary_weight", tuple(self.stationary_weight))
        object.__setattr__(self, "label", tuple(self.label))
        for row in self.transition:
            if len(row) != n:
                raise ConfigError(f"transition matrix is not square: row of length {len(row)}, {n} rows")
        if len(self.stationary_weight) != n:
            raise ConfigError(f"{len(self.stationary_weight)} stationary weights for {n} states")
        if len(self.label) != n:
            raise ConfigError(f"{len(self.label)} labels for {n} states")
        for lab in self.label:
            if isinstance(lab, bool) or not isinstance(lab, (int, float, Fraction)) or not math.isfinite(float(lab)):
                raise ConfigError(f"label {lab!r} is not a finite real")
        if self.state_ids is not None:
            ids = tuple(self.state_ids)
            if len(ids) != n or len(set(ids)) != n:
                raise ConfigError("state ids must be unique, one per state")
            object.__setattr__(self, "state_ids", ids)

    @property
    def n_states(self) -> int:
        return len(self.transition)

    @cached_property
    def is_exact(self) -> bool:
        """True when every transition entry and weight is rational."""
        return all(is_rational(x) for row in self.transition for x in row) and all(
            is_rational(w) for w in self.stationary_weight
        )

    @cached_property
    def P(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.transition], dtype=float)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([float(x) for x in self.label], dtype=float)

    @cached_property
    def _cumulative(self) -> tuple[np.ndarray, list[list[float]], np.ndarray]:
        P = np.clip(self.P, 0.0, None)
        cum = np.cumsum(P, axis=1)
        last_positive = np.array(
            [int(np.flatnonzero(row > 0)[-1]) if np.any(row > 0) else i for i, row in enumerate(P)]
        )
        return cum, cum.tolist(), last_positive

    def label_of(self, state: int) -> Number:
        return self.label[state]

    def step_from_uniform(self, state: int, u: float) -> int:
        """Next state given a uniform draw ``u`` in [0, 1)."""
        _, rows, last = self._cumulative
        nxt = bisect_right(rows[state], u)
        if nxt >= self.n_states:
            nxt = int(last[state])
        return nxt

    def walk(self, start: int, k: int, rng: np.random.Generator) -> list[int]:
        """States ``[start, X_1, ..., X_k]`` of a forward walk."""
        if not 0 <= start < self.n_states:
            raise ConfigError(f"state {start} out of range for {self.n_states} states")
        _, rows, last = self._cumulative
        n = self.n_states
        out = [start]
        s = start
        for u in rng.random(k).tolist():
            nxt = bisect_right(rows[s], u)
            s = nxt if nxt < n else int(last[s])
            out.append(s)
        return out

    def walk_batch(self, starts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        """Independent walks from each entry of ``starts``; shape ``(len(starts), k + 1)``."""
        cum, _, last = self._cumulative
        starts = np.asarray(starts, dtype=np.int64)
        out = np.empty((starts.shape[0], k + 1), dtype=np.int64)
        out[:, 0] = starts
        s = starts
        for t in range(1, k + 1):
            u = rng.random(starts.shape[0])
            nxt = (cum[s] <= u[:, None]).sum(axis=1)
            overflow = nxt >= self.n_states
            if overflow.any():
                nxt[overflow] = last[s[overflow]]
            out[:, t] = nxt
            s = nxt
        return out


@dataclass
class Violation:
    check: str
    max_residual: float
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation]
    residuals: dict[str, float]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "valid": self.ok,
            "residuals": dict(sorted(self.residuals.items())),
            "violations": [
                {"check": v.check, "max_residual": v.max_residual, "detail": v.detail} for v in self.violations
            ],
        }


def validate_chain(chain: LabeledChain) -> ValidationReport:
    """Check row-stochasticity, weight sanity and detailed balance.

    Residuals are measured on the unnormalized weights as stored. Violations
    are returned, never raised.
    """
    P = chain.P
    w = np.array([float(x) for x in chain.stationary_weight])
    out: list[Violation] = []
    res: dict[str, float] = {}

    neg = float(max(0.0, -P.min()))
    res["nonnegative_transition"] = neg
    if neg > 0:
        u, v = np.unravel_index(np.argmin(P), P.shape)
        out.append(Violation("nonnegative_transition", neg, f"P({u},{v}) = {P[u, v]!r}"))

    if chain.is_exact:
        row_err = [abs(float(sum(Fraction(x) for x in row) - 1)) for row in chain.transition]
    else:
        row_err = [abs(math.fsum(float(x) for x in row) - 1.0) for row in chain.transition]
    worst_row = int(np.argmax(row_err))
    res["row_stochastic"] = row_err[worst_row]
    if row_err[worst_row] > ROW_SUM_TOL:
        out.append(Violation("row_stochastic", row_err[worst_row], f"row {worst_row}"))

    wneg = float(max(0.0, -w.min()))
    res["stationary_nonnegative"] = wneg
    if wneg > 0:
        out.append(Violation("stationary_nonnegative", wneg, f"state {int(np.argmin(w))}"))
    if not np.any(w > 0):
        res["stationary_positive_mass"] = 1.0
        out.append(Violation("stationary_positive_mass", 1.0, "all stationary weights are zero"))
    else:
        res["stationary_positive_mass"] = 0.0

    flow = w[:, None] * P
    db = np.abs(flow - flow.T)
    worst = float(db.max())
    res["detailed_balance"] = worst
    if worst > DETAILED_BALANCE_TOL:
        u, v = np.unravel_index(np.argmax(db), db.shape)
        out.append(
            Violation(
                "detailed_balance",
                worst,
                f"pi({u})P({u},{v}) = {flow[u, v]!r} but pi({v})P({v},{u}) = {flow[v, u]!r}",
            )
        )
    return ValidationReport(out, res)


def stationary_distribution(chain: LabeledChain) -> np.ndarray:
    return np.array([float(x) for x in stationary_exact(chain)], dtype=float)


def stationary_exact(chain: LabeledChain) -> tuple[Number, ...]:
    """Normalized stationary weights, as Fractions when the chain is exact."""
    if chain.is_exact:
        ws = [Fraction(x) for x in chain.stationary_weight]
        total = sum(ws, Fraction(0))
        return tuple(x / total for x in ws)
    ws = [float(x) for x in chain.stationary_weight]
    total = math.fsum(ws)
    return tuple(x / total for x in ws)


def _canonical_edges(edges: Iterable[Sequence]) -> tuple[tuple[int, int, Number], ...]:
    grouped: dict[tuple[int, int], list[Number]] = {}
    for e in edges:
        if len(e) != 3:
            raise ConfigError(f"edge {e!r} is not (u, v, weight)")
        u, v, wt = e
        if isinstance(u, bool) or isinstance(v, bool) or not isinstance(u, int) or not isinstance(v, int) or u < 0 or v < 0:
            raise ConfigError(f"edge endpoints must be nonnegative state indices, got {u!r}, {v!r}")
        if isinstance(wt, bool) or not isinstance(wt, (int, float, Fraction)) or not wt > 0 or not math.isfinite(float(wt)):
            raise ConfigError(f"edge ({u}, {v}) has non-positive weight {wt!r}")
        key = (u, v) if u <= v else (v, u)
        grouped.setdefault(key, []).append(wt)
    return tuple((u, v, _merge_weights(ws)) for (u, v), ws in sorted(grouped.items()))


def _merge_weights(ws: list[Number]) -> Number:
    if len(ws) == 1:
        return ws[0]
    return _exact_sum(ws)


def build_from_edge_list(
    edges: Iterable[Sequence],
    labels: Sequence[Number] | None = None,
    n_states: int | None = None,
    state_ids: Sequence | None = None,
) -> LabeledChain:
    """Random walk on a weighted undirected graph.

    ``P(u, v) = w(u, v) / deg_w(u)`` and the stationary weight of ``u`` is
    its weighted degree. Repeated edges add their weights; a self-loop
    ``(u, u, w)`` adds ``w`` once to ``deg_w(u)``. Labels default to the
    state index.
    """
    canon = _canonical_edges(edges)
    if n_states is None:
        n_states = 1 + max((max(u, v) for u, v, _ in canon), default=-1)
    if n_states <= 0:
        raise ConfigError("edge list is empty")
    exact = all(is_rational(w) for _, _, w in canon)
    incident: list[list[Number]] = [[] for _ in range(n_states)]
    for u, v, w in canon:
        if max(u, v) >= n_states:
            raise ConfigError(f"edge ({u}, {v}) refers to a state beyond {n_states - 1}")
        incident[u].append(w)
        if v != u:
            incident[v].append(w)
    for i, ws in enumerate(incident):
        if not ws:
            raise IsolatedVertexError(state_ids[i] if state_ids is not None else i)
    deg = [_exact_sum(ws) for ws in incident]

    zero: Number = Fraction(0) if exact else 0.0
    rows = [[zero] * n_states for _ in range(n_states)]
    for u, v, w in canon:
        if exact:
            rows[u][v] = Fraction(w) / deg[u]
            rows[v][u] = Fraction(w) / deg[v]
        else:
            rows[u][v] = float(w) / float(deg[u])
            rows[v][u] = float(w) / float(deg[v])
    if labels is None:
        labels = list(range(n_states))
    return LabeledChain(
        transition=tuple(tuple(r) for r in rows),
        stationary_weight=tuple(deg),
        label=tuple(labels),
        state_ids=tuple(state_ids) if state_ids is not None else None,
        edges=canon,
    )


def from_dense(
    matrix: Sequence[Sequence[Number]],
    labels: Sequence[Number] | None = None,
    stationary: Sequence[Number] | None = None,
    state_ids: Sequence | None = None,
) -> LabeledChain:
    """Chain from a dense transition matrix.

    Without explicit weights, they are derived from detailed balance along a
    spanning forest of the transition graph (exact for rational entries).
    If that fails because the matrix is not reversible, a numerical
    fixed point of ``pi P = pi`` is used instead so that validation can
    report the problem.
    """
    rows = tuple(tuple(r) for r in matrix)
    n = len(rows)
    if labels is None:
        labels = list(range(n))
    if stationary is None:
        stationary = _weights_from_detailed_balance(rows)
        if stationary is None:
            stationary = _weights_numerical(rows)
    return LabeledChain(rows, tuple(stationary), tuple(labels), state_ids)


def _weights_from_detailed_balance(rows) -> list[Number] | None:
    n = len(rows)
    exact = all(is_rational(x) for r in rows for x in r)
    conv = Fraction if exact else float
    w: list[Number | None] = [None] * n
    for root in range(n):
        if w[root] is not None:
            continue
        w[root] = conv(1)
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in range(n):
                if v == u or (rows[u][v] == 0 and rows[v][u] == 0):
                    continue
                if rows[u][v] == 0 or rows[v][u] == 0:
                    return None
                cand = w[u] * conv(rows[u][v]) / conv(rows[v][u])
                if w[v] is None:
                    w[v] = cand
                    queue.append(v)
    return w  # type: ignore[return-value]


def _weights_numerical(rows) -> list[float]:
    P = np.array([[float(x) for x in r] for r in rows])
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return [float(x) for x in pi]


# -- ChainSpecDocument ----------------------------------------------------------

_TOP_FIELDS = {"states", "matrix", "edges", "stationary"}


def _read_number(x, where: str) -> Number:
    if isinstance(x, bool):
        raise ConfigError(f"{where}: {x!r} is not a number")
    if isinstance(x, (int, float)):
        return x
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{where}: cannot read {x!r} as a rational") from exc
    raise ConfigError(f"{where}: {x!r} is not a number")


def _write_number(x: Number):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (bool, np.bool_)):
        raise TypeError(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(x)


def parse_chain_document(doc: dict) -> LabeledChain:
    """Build a chain from a parsed ChainSpecDocument.

    Numbers may be JSON numbers or strings holding exact rationals
    (``"1/3"``); strings are read as Fractions.
    """
    if not isinstance(doc, dict):
        raise ConfigError("chain document must be an object")
    unknown = set(doc) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"unknown fields in chain document: {sorted(unknown)}")
    if "states" not in doc:
        raise ConfigError("chain document needs 'states'")
    if ("matrix" in doc) == ("edges" in doc):
        raise ConfigError("chain document needs exactly one of 'matrix' or 'edges'")
    states = doc["states"]
    if not isinstance(states, list) or not states:
        raise ConfigError("'states' must be a nonempty array")
    ids, labels = [], []
    for i, st in enumerate(states):
        if not isinstance(st, dict) or set(st) != {"id", "label"}:
            raise ConfigError(f"states[{i}] must have exactly the fields 'id' and 'label'")
        ids.append(st["id"])
        labels.append(_read_number(st["label"], f"states[{i}].label"))
    if len(set(map(repr, ids))) != len(ids):
        raise ConfigError("duplicate state ids")
    index = {sid: i for i, sid in enumerate(ids)}
    stationary = None
    if "stationary" in doc:
        st = doc["stationary"]
        if not isinstance(st, list) or len(st) != len(ids):
            raise ConfigError("'stationary' must have one weight per state")
        stationary = [_read_number(x, f"stationary[{i}]") for i, x in enumerate(st)]

    if "matrix" in doc:
        m = doc["matrix"]
        if not isinstance(m, list) or len(m) != len(ids):
            raise ConfigError("'matrix' must have one row per state")
        rows = []
        for i, r in enumerate(m):
            if not isinstance(r, list) or len(r) != len(ids):
                raise ConfigError(f"matrix row {i} must have {len(ids)} entries")
            rows.append([_read_number(x, f"matrix[{i}][{j}]") for j, x in enumerate(r)])
        return from_dense(rows, labels, stationary, ids)

    edges = []
    for i, e in enumerate(doc["edges"]):
        if not isinstance(e, dict) or set(e) != {"u", "v", "weight"}:
            raise ConfigError(f"edges[{i}] must have exactly the fields 'u', 'v', 'weight'")
        try:
            u, v = index[e["u"]], index[e["v"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"edges[{i}] refers to an unknown state") from exc
        edges.append((u, v, _read_number(e["weight"], f"edges[{i}].weight")))
    chain = build_from_edge_list(edges, labels, n_states=len(ids), state_ids=ids)
    if stationary is not None:
        chain = LabeledChain(chain.transition, tuple(stationary), chain.label, chain.state_ids, chain.edges)
    return chain


def chain_to_document(chain: LabeledChain) -> dict:
    ids = list(chain.state_ids) if chain.state_ids is not None else list(range(chain.n_states))
    doc: dict[str, Any] = {
        "states": [{"id": sid, "label": _write_number(lab)} for sid, lab in zip(ids, chain.label)]
    }
    if chain.edges is not None:
        doc["edges"] = [{"u": ids[u], "v": ids[v], "weight": _write_number(w)} for u, v, w in chain.edges]
        implied = build_from_edge_list(chain.edges, chain.label, chain.n_states)
        if implied.stationary_weight != chain.stationary_weight:
            doc["stationary"] = [_write_number(w) for w in chain.stationary_weight]
    else:
        doc["matrix"] = [[_write_number(x) for x in row] for row in chain.transition]
        doc["stationary"] = [_write_number(w) for w in chain.stationary_weight]
    return doc


def dumps_chain(chain: LabeledChain) -> str:
    return json.dumps(chain_to_document(chain), indent=2) + "\n"


def loads_chain(text: str) -> LabeledChain:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"chain document is not valid JSON: {exc}") from exc
    return parse_chain_document(doc)


def load_chain(path: str | Path) -> LabeledChain:
    return loads_chain(Path(path).read_text())
