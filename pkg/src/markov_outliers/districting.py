"""A toy districting chain on a grid of blocks, for end-to-end demos.

States are assignments of grid cells to districts ``1..D`` in which every
district is nonempty, 4-connected and within the population tolerance. A
move picks a uniform boundary cell and a uniform neighbouring district for
it. That proposal is not symmetric (the number of boundary cells and of
candidate districts changes between states), so the move is accepted with
the Metropolis-Hastings ratio ``|B(x)| |adj(c, x)| / (|B(y)| |adj(c, y)|)``;
rejected or invalid moves leave the state unchanged. The uniform
distribution on valid assignments is then stationary and the chain is
reversible, which is what the tests need.

Labels are oriented so that lower means better for party A.
"""

from __future__ import annotations

import csv
import io
import itertools
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .chain import LabeledChain
from .errors import BudgetExceeded, ConfigError

HEADER = ["cell", "x", "y", "pop", "votes_a", "votes_b"]
LABELS = ("seats", "margin")


def _int(value: str, what: str, row: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"row {row}: {what} must be an integer, got {value!r}") from None


@dataclass(frozen=True)
class BlockTable:
    cells: tuple
    x: tuple
    y: tuple
    pop: tuple
    votes_a: tuple
    votes_b: tuple

    def __post_init__(self):
        n = len(self.cells)
        if n == 0:
            raise ConfigError("block table is empty")
        if any(len(col) != n for col in (self.x, self.y, self.pop, self.votes_a, self.votes_b)):
            raise ConfigError("block table columns have different lengths")
        if len(set(self.cells)) != n:
            raise ConfigError("cell ids must be unique")
        if len(set(zip(self.x, self.y))) != n:
            raise ConfigError("two cells share grid coordinates")
        for name in ("pop", "votes_a", "votes_b"):
            if any(v < 0 for v in getattr(self, name)):
                raise ConfigError(f"{name} must be nonnegative")

    def __len__(self):
        return len(self.cells)

    @property
    def neighbours(self) -> list[list[int]]:
        where = {(x, y): i for i, (x, y) in enumerate(zip(self.x, self.y))}
        out = []
        for x, y in zip(self.x, self.y):
            out.append([where[p] for p in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)) if p in where])
        return out


def parse_block_table(text: str) -> BlockTable:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise ConfigError(f"block table header must be {','.join(HEADER)}")
    cols: list[list] = [[] for _ in HEADER]
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(HEADER):
            raise ConfigError(f"row {i}: expected {len(HEADER)} fields, got {len(r)}")
        cols[0].append(r[0].strip())
        for j, name in enumerate(HEADER[1:], start=1):
            cols[j].append(_int(r[j].strip(), name, i))
    return BlockTable(*(tuple(c) for c in cols))


def load_block_table(path: str | Path) -> BlockTable:
    return parse_block_table(Path(path).read_text(encoding="utf-8"))


class GridDistrictingChain:
    """Implicit chain over valid districtings; states are tuples of district ids per cell."""

    def __init__(self, blocks: BlockTable, n_districts: int, pop_deviation: float, label: str = "margin",
                 negate: bool = False, initial: Sequence[int] | None = None):
        if n_districts < 1 or n_districts > len(blocks):
            raise ConfigError(f"need 1 <= D <= {len(blocks)} districts, got {n_districts}")
        if pop_deviation < 0:
            raise ConfigError("pop_deviation must be nonnegative")
        if label not in LABELS:
            raise ConfigError(f"label must be one of {LABELS}, got {label!r}")
        self.blocks = blocks
        self.D = n_districts
        self.pop_deviation = pop_deviation
        self.label_kind = label
        self.negate = negate
        self.nbrs = blocks.neighbours
        ideal = Fraction(sum(blocks.pop), n_districts)
        dev = Fraction(repr(float(pop_deviation)))
        self.pop_range = (ideal * (1 - dev), ideal * (1 + dev))
        self.initial = tuple(initial) if initial is not None else self._snake_start()
        problem = self.violation(self.initial)
        if problem:
            raise ConfigError(f"initial districting is infeasible: {problem}")

    # -- constraints --------------------------------------------------------------

    def _snake_start(self) -> tuple:
        b = self.blocks
        order = sorted(range(len(b)), key=lambda i: (b.y[i], b.x[i] if b.y[i] % 2 == 0 else -b.x[i]))
        total = sum(b.pop)
        assign = [0] * len(b)
        acc, district = 0, 1
        for pos, i in enumerate(order):
            remaining_cells = len(order) - pos
            remaining_districts = self.D - district
            if district < self.D and (acc >= Fraction(total * district, self.D)
                                      or remaining_cells == remaining_districts):
                district += 1
            assign[i] = district
            acc += b.pop[i]
        return tuple(assign)

    def _connected(self, cells: list[int]) -> bool:
        if not cells:
            return False
        members = set(cells)
        seen = {cells[0]}
        queue = deque([cells[0]])
        while queue:
            u = queue.popleft()
            for v in self.nbrs[u]:
                if v in members and v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == len(members)

    def _district_ok(self, state, d: int) -> str | None:
        cells = [i for i, a in enumerate(state) if a == d]
        if not cells:
            return f"district {d} is empty"
        pop = sum(self.blocks.pop[i] for i in cells)
        lo, hi = self.pop_range
        if not lo <= pop <= hi:
            return f"district {d} population {pop} outside [{float(lo):g}, {float(hi):g}]"
        if not self._connected(cells):
            return f"district {d} is not contiguous"
        return None

    def violation(self, state) -> str | None:
        if len(state) != len(self.blocks):
            return f"assignment has {len(state)} entries for {len(self.blocks)} cells"
        if any(not 1 <= a <= self.D for a in state):
            return f"district ids must lie in 1..{self.D}"
        for d in range(1, self.D + 1):
            msg = self._district_ok(state, d)
            if msg:
                return msg
        return None

    def is_valid(self, state) -> bool:
        return self.violation(state) is None

    # -- moves --------------------------------------------------------------------

    def moves_from(self, state) -> list[tuple[int, list[int]]]:
        """Boundary cells with the districts they could join."""
        out = []
        for c, a in enumerate(state):
            opts = sorted({state[v] for v in self.nbrs[c] if state[v] != a})
            if opts:
                out.append((c, opts))
        return out

    def _options(self, state, c) -> int:
        return len({state[v] for v in self.nbrs[c] if state[v] != state[c]})

    def _move_ok(self, x, y, c) -> bool:
        lo, hi = self.pop_range
        old, new = x[c], y[c]
        pop_new = sum(p for p, a in zip(self.blocks.pop, y) if a == new)
        if not lo <= pop_new <= hi:
            return False
        return self._district_ok(y, old) is None

    def acceptance(self, x, c: int, d: int) -> Fraction:
        """Probability of accepting the move of cell c to district d from x (0 if invalid)."""
        y = x[:c] + (d,) + x[c + 1:]
        if not self._move_ok(x, y, c):
            return Fraction(0)
        bx, by = len(self.moves_from(x)), len(self.moves_from(y))
        ratio = Fraction(bx * self._options(x, c), by * self._options(y, c))
        return min(Fraction(1), ratio)

    def step(self, x: tuple, g: np.random.Generator) -> tuple:
        moves = self.moves_from(x)
        c, opts = moves[int(g.integers(len(moves)))]
        d = opts[int(g.integers(len(opts)))]
        u = g.random()
        y = x[:c] + (d,) + x[c + 1:]
        if not self._move_ok(x, y, c):
            return x
        ratio = len(moves) * len(opts) / (len(self.moves_from(y)) * self._options(y, c))
        return y if u < ratio else x

    def walk(self, start, k: int, rng: np.random.Generator) -> list:
        x = tuple(start)
        if not self.is_valid(x):
            raise ConfigError(f"start state is not a valid districting: {self.violation(x)}")
        out = [x]
        if self.D == 1:
            return out * (k + 1)
        for _ in range(k):
            x = self.step(x, rng)
            out.append(x)
        return out

    # -- labels -------------------------------------------------------------------

    def district_votes(self, state) -> list[tuple[int, int]]:
        va = [0] * self.D
        vb = [0] * self.D
        for a, x, y in zip(state, self.blocks.votes_a, self.blocks.votes_b):
            va[a - 1] += x
            vb[a - 1] += y
        return list(zip(va, vb))

    def label_of(self, state) -> Fraction:
        votes = self.district_votes(state)
        if self.label_kind == "seats":
            score = sum((Fraction(1) if a > b else Fraction(1, 2) if a == b else Fraction(0)) for a, b in votes)
        else:
            score = sum((Fraction(a - b, a + b) for a, b in votes if a + b), Fraction(0))
        return score if self.negate else -score

    def describe_state(self, state) -> str:
        sep = "" if self.D <= 9 else "-"
        return sep.join(str(a) for a in state)

    def parse_state(self, text: str) -> tuple:
        parts = text.split("-") if "-" in text else list(text.strip())
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"cannot read districting {text!r}") from None

    # -- enumeration ----------------------------------------------------------------

    def valid_states(self, budget: int = 10**6) -> list[tuple]:
        n_all = self.D ** len(self.blocks)
        if n_all > budget:
            raise BudgetExceeded(n_all, budget, "districting enumeration")
        return [s for s in itertools.product(range(1, self.D + 1), repeat=len(self.blocks)) if self.is_valid(s)]

    def to_labeled_chain(self, budget: int = 10**6) -> LabeledChain:
        """Exact transition matrix over all valid districtings (small grids only)."""
        states = self.valid_states(budget)
        index = {s: i for i, s in enumerate(states)}
        n = len(states)
        rows = []
        for x in states:
            row = [Fraction(0)] * n
            moves = self.moves_from(x)
            if self.D == 1 or not moves:
                row[index[x]] = Fraction(1)
                rows.append(tuple(row))
                continue
            stay = Fraction(1)
            for c, opts in moves:
                for d in opts:
                    p = Fraction(1, len(moves) * len(opts)) * self.acceptance(x, c, d)
                    if p:
                        y = x[:c] + (d,) + x[c + 1:]
                        row[index[y]] += p
                        stay -= p
            row[index[x]] += stay
            rows.append(tuple(row))
        return LabeledChain(tuple(rows), tuple([1] * n), tuple(self.label_of(s) for s in states),
                            state_ids=tuple(self.describe_state(s) for s in states))


BUNDLED = {
    # name: (file, districts, population deviation)
    "2x2": ("grid2x2.csv", 2, 0.5),
    "4x4": ("grid4x4.csv", 2, 0.25),
}

# most A-favourable margin districting of the bundled 4x4 grid, found by enumeration
EXTREME_4X4 = "1122112212221222"


def bundled_blocks(name: str) -> BlockTable:
    if name not in BUNDLED:
        raise ConfigError(f"unknown bundled grid {name!r}; choose from {sorted(BUNDLED)}")
    text = resources.files("markov_outliers").joinpath("data").joinpath(BUNDLED[name][0]).read_text(encoding="utf-8")
    return parse_block_table(text)


def bundled_grid_chain(name: str = "4x4", label: str = "margin", negate: bool = False) -> GridDistrictingChain:
    _, D, dev = BUNDLED[name] if name in BUNDLED else (None, None, None)
    return GridDistrictingChain(bundled_blocks(name), D, dev, label, negate)
