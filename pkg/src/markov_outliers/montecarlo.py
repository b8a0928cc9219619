"""Vectorized Monte Carlo estimates of outlier-event frequencies.

These batch versions of the samplers draw many independent replicates at once
with :meth:`LabeledChain.walk_batch`. They produce the same law as the
per-sample drivers but not the same bits; the per-sample drivers stay the
reference for reproducible reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import binomtest

from .chain import LabeledChain, as_fraction, stationary_distribution
from .errors import ConfigError
from .sampling import as_seed

Z99 = 2.5758293035489004
_MC_ROLE = 1000  # keeps batch substreams apart from the per-sample ones


@dataclass(frozen=True)
class RateEstimate:
    hits: int
    n: int
    low: float
    high: float

    @property
    def rate(self) -> float:
        return self.hits / self.n

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


def wilson_interval(hits: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    ci = binomtest(int(hits), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _estimate(hits: int, n: int) -> RateEstimate:
    lo, hi = wilson_interval(hits, n)
    return RateEstimate(int(hits), int(n), lo, hi)


def _gen(seed, *key):
    return as_seed(seed).generator(_MC_ROLE, *key)


def _starts(chain: LabeledChain, n: int, sigma0, g) -> np.ndarray:
    if sigma0 is None:
        return g.choice(chain.n_states, size=n, p=stationary_distribution(chain))
    return np.full(n, int(sigma0), dtype=np.int64)


def _count_leq(labels_matrix: np.ndarray, pivot: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    le = labels_matrix <= pivot[:, None]
    if mask is not None:
        le &= mask
    return le.sum(axis=1)


def _rank(less: np.ndarray, equal_others: np.ndarray, ties: str, g) -> np.ndarray:
    """Pivot rank (1 = smallest). ``"leq"`` puts the pivot last among its ties,
    ``"random"`` at a uniform place among them."""
    if ties == "leq":
        return less + equal_others + 1
    if ties == "random":
        return less + 1 + np.floor(g.random(less.shape[0]) * (equal_others + 1)).astype(np.int64)
    raise ConfigError(f"ties must be 'leq' or 'random', got {ties!r}")


def _less_eq(labels_matrix, pivot, mask=None):
    lt = labels_matrix < pivot[:, None]
    eq = labels_matrix == pivot[:, None]
    if mask is not None:
        lt &= mask
        eq &= mask
    return lt.sum(axis=1), eq.sum(axis=1)


def _batches(n: int, size: int):
    done = 0
    b = 0
    while done < n:
        step = min(size, n - done)
        yield b, step
        done += step
        b += 1


def single_rate(chain: LabeledChain, k: int, epsilon, n: int, seed=0, sigma0=None,
                batch: int = 200_000, ties: str = "leq") -> RateEstimate:
    """Frequency with which X_0 is an eps-outlier on its own length-k walk."""
    eps = as_fraction(epsilon)
    hits = 0
    for b, size in _batches(n, batch):
        g = _gen(seed, 1, b)
        paths = chain.walk_batch(_starts(chain, size, sigma0, g), k, g)
        lab = chain.labels[paths]
        less, equal = _less_eq(lab[:, 1:], lab[:, 0])
        hits += int(np.count_nonzero(_rank(less, equal, ties, g) <= math.floor(eps * (k + 1))))
    return _estimate(hits, n)


def serial_rate(chain: LabeledChain, k: int, epsilon, n: int, seed=0, batch: int = 200_000,
                ties: str = "leq") -> RateEstimate:
    """Serial test from a stationary start: split uniform on {0..k}, legs of xi and k - xi steps."""
    eps = as_fraction(epsilon)
    hits = 0
    cols = np.arange(1, k + 1)
    for b, size in _batches(n, batch):
        g = _gen(seed, 2, b)
        s0 = _starts(chain, size, None, g)
        xi = g.integers(0, k + 1, size=size)
        back = chain.walk_batch(s0, k, g)
        fwd = chain.walk_batch(s0, k, g)
        lab_b = chain.labels[back]
        lab_f = chain.labels[fwd]
        pivot = lab_b[:, 0]
        mask_b = cols[None, :] <= xi[:, None]
        mask_f = cols[None, :] <= (k - xi)[:, None]
        lb, eb = _less_eq(lab_b[:, 1:], pivot, mask_b)
        lf, ef = _less_eq(lab_f[:, 1:], pivot, mask_f)
        rank = _rank(lb + lf, eb + ef, ties, g)
        hits += int(np.count_nonzero(rank <= math.floor(eps * (k + 1))))
    return _estimate(hits, n)


def two_path_rate(chain: LabeledChain, k: int, epsilon, n: int, seed=0, batch: int = 200_000) -> RateEstimate:
    eps = as_fraction(epsilon)
    hits = 0
    for b, size in _batches(n, batch):
        g = _gen(seed, 3, b)
        s0 = _starts(chain, size, None, g)
        y = chain.labels[chain.walk_batch(s0, k, g)]
        z = chain.labels[chain.walk_batch(s0, k, g)]
        pivot = y[:, 0]
        cnt = 1 + _count_leq(y[:, 1:], pivot) + _count_leq(z[:, 1:], pivot)
        hits += int(np.count_nonzero(cnt <= math.floor(eps * (2 * k + 1))))
    return _estimate(hits, n)


def parallel_rate(chain: LabeledChain, k: int, m: int, epsilon, n: int, seed=0, batch: int = 100_000,
                  ties: str = "leq") -> RateEstimate:
    """Parallel test: stem of k steps, then m - 1 branches of k steps; pivot vs branch ends."""
    eps = as_fraction(epsilon)
    hits = 0
    for b, size in _batches(n, batch):
        g = _gen(seed, 4, b)
        s0 = _starts(chain, size, None, g)
        hub = chain.walk_batch(s0, k, g)[:, -1]
        pivot = chain.labels[s0]
        less = np.zeros(size, dtype=np.int64)
        equal = np.zeros(size, dtype=np.int64)
        for _ in range(m - 1):
            end = chain.labels[chain.walk_batch(hub, k, g)[:, -1]]
            less += end < pivot
            equal += end == pivot
        hits += int(np.count_nonzero(_rank(less, equal, ties, g) <= math.floor(eps * m)))
    return _estimate(hits, n)


def star_split_rate(chain: LabeledChain, k: int, m: int, epsilon, n: int, seed=0,
                    batch: int = 100_000) -> RateEstimate:
    if k < 1:
        raise ConfigError("star-split needs k >= 1")
    eps = as_fraction(epsilon)
    hits = 0
    cols = np.arange(1, k + 1)
    for b, size in _batches(n, batch):
        g = _gen(seed, 5, b)
        s0 = _starts(chain, size, None, g)
        xi = g.integers(1, k + 1, size=size)
        pre = chain.walk_batch(s0, k, g)
        side = chain.walk_batch(s0, k, g)
        pivot = chain.labels[s0]
        # X_1..X_{xi-1} and Y_1..Y_{k-xi}; X_xi itself is excluded
        cnt = 1 + _count_leq(chain.labels[pre[:, 1:]], pivot, cols[None, :] < xi[:, None])
        cnt += _count_leq(chain.labels[side[:, 1:]], pivot, cols[None, :] <= (k - xi)[:, None])
        hub = pre[np.arange(size), xi]
        for _ in range(m - 1):
            cnt += _count_leq(chain.labels[chain.walk_batch(hub, k, g)[:, 1:]], pivot)
        hits += int(np.count_nonzero(cnt <= math.floor(eps * m * k)))
    return _estimate(hits, n)


def multi_trajectory_counts(chain: LabeledChain, sigma0: int, k: int, m: int, epsilon, reps: int, seed=0,
                            batch: int = 20_000) -> np.ndarray:
    """Histogram over ``reps`` replications of rho, the number of the m independent
    length-k walks from sigma0 on which sigma0 is an eps-outlier (index 0..m)."""
    eps = as_fraction(epsilon)
    hist = np.zeros(m + 1, dtype=np.int64)
    for b, size in _batches(reps, batch):
        g = _gen(seed, 6, b)
        paths = chain.walk_batch(np.full(size * m, int(sigma0), dtype=np.int64), k, g)
        lab = chain.labels[paths]
        cnt = _count_leq(lab, lab[:, 0])
        rho = (cnt <= math.floor(eps * (k + 1))).reshape(size, m).sum(axis=1)
        hist += np.bincount(rho, minlength=m + 1)
    return hist


def multi_trajectory_tail(chain: LabeledChain, sigma0: int, k: int, m: int, epsilon, K: int, reps: int, seed=0,
                          batch: int = 20_000) -> RateEstimate:
    """Frequency over ``reps`` replications that sigma0 is an eps-outlier on at least
    K of m independent length-k walks from sigma0."""
    hist = multi_trajectory_counts(chain, sigma0, k, m, epsilon, reps, seed, batch)
    return _estimate(int(hist[K:].sum()), reps)


def path_frequencies(chain: LabeledChain, k: int, n: int, seed=0, sigma0=None) -> dict:
    """Empirical frequency of each length-k path (for comparisons with exact path laws)."""
    g = _gen(seed, 7, 0)
    paths = chain.walk_batch(_starts(chain, n, sigma0, g), k, g)
    uniq, counts = np.unique(paths, axis=0, return_counts=True)
    return {tuple(int(x) for x in row): int(c) / n for row, c in zip(uniq, counts)}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(float(p.get(x, 0)) - float(q.get(x, 0))) for x in keys)
