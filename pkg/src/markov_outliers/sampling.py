"""Seedable samplers for every random object the tests consume.

Each random draw comes from its own numpy ``Generator`` whose seed sequence
is keyed by ``(seed, stream_id, index, role, *extra)``. ``index`` is the
trajectory or replicate number and ``role`` names the part being drawn
(backward leg, forward leg, split point, ...). Because the key is an
injective tuple, samples are reproducible on every platform and a sample's
value never depends on how many other samples were drawn before it or on
which worker drew it.

Any chain object with ``walk(start, k, rng)`` and ``label_of(state)`` works
here: explicit :class:`~markov_outliers.chain.LabeledChain` instances and the
implicit districting chain alike. Backward legs are drawn as forward walks,
which is the correct law only for reversible chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError

GEOMETRIC_CAP = 10**6

ROLE_PATH = 0
ROLE_BACKWARD = 1
ROLE_FORWARD = 2
ROLE_SPLIT = 3
ROLE_PRE_BRANCH = 4
ROLE_BRANCH = 5
ROLE_LENGTH = 6
ROLE_PIVOT = 7
ROLE_START = 8

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSeed:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or not 0 <= v <= _MASK64:
                raise ConfigError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self, *key: int) -> np.random.Generator:
        """Generator for the substream identified by ``key``."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id), *map(int, key)))
        return np.random.Generator(np.random.PCG64(ss))

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "stream_id": int(self.stream_id)}


def as_seed(rng: RngSeed | int) -> RngSeed:
    return rng if isinstance(rng, RngSeed) else RngSeed(int(rng))


@dataclass(frozen=True)
class Trajectory:
    states: tuple

    def __len__(self):
        return len(self.states)

    @property
    def k(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class SerialSample:
    """``sigma0`` with legs ``Y_1..Y_xi`` and ``Z_1..Z_{k-xi}``, xi uniform on {0..k}."""

    sigma0: Any
    xi: int
    backward: tuple
    forward: tuple
    shape: str = field(default="serial", init=False)

    def comparison_states(self) -> list:
        return [self.sigma0, *self.backward, *self.forward]


@dataclass(frozen=True)
class SingleSample:
    trajectory: Trajectory
    shape: str = field(default="single", init=False)

    @property
    def sigma0(self):
        return self.trajectory.states[0]

    def comparison_states(self) -> list:
        return list(self.trajectory.states)


@dataclass(frozen=True)
class TwoPathSample:
    sigma0: Any
    y: Trajectory
    z: Trajectory
    shape: str = field(default="two-path", init=False)

    def comparison_states(self) -> list:
        return [self.sigma0, *self.y.states[1:], *self.z.states[1:]]

    def as_trajectory(self) -> Trajectory:
        """``Y_k, ..., Y_1, sigma0, Z_1, ..., Z_k``."""
        return Trajectory(tuple(reversed(self.y.states)) + self.z.states[1:])


@dataclass(frozen=True)
class ParallelSample:
    """Walk ``X_1..X_k`` from sigma0, then m-1 branches of length k from ``X_k``."""

    sigma0: Any
    stem: tuple
    branches: tuple[tuple, ...]
    shape: str = field(default="parallel", init=False)

    def comparison_states(self) -> list:
        return [self.sigma0, *(b[-1] for b in self.branches)]


@dataclass(frozen=True)
class StarSplitSample:
    sigma0: Any
    xi: int
    pre_branch: tuple  # X_1..X_xi
    side: tuple  # Y_1..Y_{k-xi}
    branches: tuple[tuple, ...]  # m-1 legs Z^s_1..Z^s_k from X_xi
    shape: str = field(default="star-split", init=False)

    @property
    def split_state(self):
        return self.pre_branch[-1]

    def comparison_states(self) -> list:
        # every exposed state except X_xi
        out = [self.sigma0, *self.pre_branch[:-1], *self.side]
        for b in self.branches:
            out.extend(b)
        return out


@dataclass(frozen=True)
class GeometricLength:
    mu: float
    realized_k: int
    truncated: bool = False


@dataclass(frozen=True)
class GeometricSample:
    trajectory: Trajectory
    length: GeometricLength
    shape: str = field(default="geometric", init=False)

    @property
    def sigma0(self):
        return self.trajectory.states[0]

    def comparison_states(self) -> list:
        return list(self.trajectory.states)


@dataclass(frozen=True)
class TrajectoryProductSample:
    trajectories: tuple[Trajectory, ...]
    pivots: tuple[int, ...]

    @property
    def sigma0(self) -> tuple:
        return tuple(t.states[j] for t, j in zip(self.trajectories, self.pivots))


def _check_k(k: int, name: str = "k", minimum: int = 0):
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {k!r}")


def sample_trajectory(chain, start, k: int, rng: RngSeed | int, index: int = 0) -> Trajectory:
    _check_k(k)
    g = as_seed(rng).generator(index, ROLE_PATH)
    return Trajectory(tuple(chain.walk(start, k, g)))


def sample_single(chain, sigma0, k: int, rng: RngSeed | int, index: int = 0) -> SingleSample:
    return SingleSample(sample_trajectory(chain, sigma0, k, rng, index))


def sample_two_paths(chain, sigma0, k: int, rng: RngSeed | int, index: int = 0) -> TwoPathSample:
    _check_k(k)
    seed = as_seed(rng)
    y = chain.walk(sigma0, k, seed.generator(index, ROLE_BACKWARD))
    z = chain.walk(sigma0, k, seed.generator(index, ROLE_FORWARD))
    return TwoPathSample(sigma0, Trajectory(tuple(y)), Trajectory(tuple(z)))


def sample_serial(chain, sigma0, k: int, rng: RngSeed | int, index: int = 0) -> SerialSample:
    _check_k(k)
    seed = as_seed(rng)
    xi = int(seed.generator(index, ROLE_SPLIT).integers(0, k + 1))
    y = chain.walk(sigma0, xi, seed.generator(index, ROLE_BACKWARD))
    z = chain.walk(sigma0, k - xi, seed.generator(index, ROLE_FORWARD))
    return SerialSample(sigma0, xi, tuple(y[1:]), tuple(z[1:]))


def sample_parallel(chain, sigma0, k: int, m: int, rng: RngSeed | int, index: int = 0) -> ParallelSample:
    _check_k(k)
    _check_k(m, "m", 1)
    seed = as_seed(rng)
    stem = chain.walk(sigma0, k, seed.generator(index, ROLE_PRE_BRANCH))
    hub = stem[-1]
    branches = tuple(
        tuple(chain.walk(hub, k, seed.generator(index, ROLE_BRANCH, s))[1:]) for s in range(2, m + 1)
    )
    return ParallelSample(sigma0, tuple(stem[1:]), branches)


def sample_star_split(chain, sigma0, k: int, m: int, rng: RngSeed | int, index: int = 0) -> StarSplitSample:
    _check_k(k, "k", 1)
    _check_k(m, "m", 1)
    seed = as_seed(rng)
    xi = int(seed.generator(index, ROLE_SPLIT).integers(1, k + 1))
    pre = chain.walk(sigma0, xi, seed.generator(index, ROLE_PRE_BRANCH))
    side = chain.walk(sigma0, k - xi, seed.generator(index, ROLE_BACKWARD))
    hub = pre[-1]
    branches = tuple(
        tuple(chain.walk(hub, k, seed.generator(index, ROLE_BRANCH, s))[1:]) for s in range(2, m + 1)
    )
    return StarSplitSample(sigma0, xi, tuple(pre[1:]), tuple(side[1:]), branches)


def geometric_length(mu: float, g: np.random.Generator, cap: int = GEOMETRIC_CAP) -> GeometricLength:
    """``Pr[k = t] = p (1 - p)^t`` with ``p = 1/(mu + 1)``, so the mean is ``mu``."""
    if not mu > 0:
        raise ConfigError(f"mu must be positive, got {mu!r}")
    k = int(g.geometric(1.0 / (mu + 1.0))) - 1
    if k > cap:
        return GeometricLength(float(mu), cap, True)
    return GeometricLength(float(mu), k, False)


def sample_geometric_trajectory(
    chain, sigma0, mu: float, rng: RngSeed | int, index: int = 0, cap: int = GEOMETRIC_CAP
) -> GeometricSample:
    """Walk of geometric length; lengths above ``cap`` are cut to ``cap`` and flagged."""
    seed = as_seed(rng)
    length = geometric_length(mu, seed.generator(index, ROLE_LENGTH), cap)
    states = chain.walk(sigma0, length.realized_k, seed.generator(index, ROLE_PATH))
    return GeometricSample(Trajectory(tuple(states)), length)


def sample_trajectory_product(
    chains: Sequence,
    sigma0: Sequence,
    k: Sequence[int],
    pivots: str | Sequence[int] = "uniform",
    rng: RngSeed | int = 0,
    index: int = 0,
) -> TrajectoryProductSample:
    """One trajectory per component, each passing through ``sigma0[i]`` at its pivot.

    With ``pivots="uniform"`` each pivot is uniform on ``{0..k_i}``; otherwise
    pass the pivot tuple. The trajectory is ``j_i`` backward steps and
    ``k_i - j_i`` forward steps from ``sigma0[i]``.
    """
    d = len(chains)
    if len(sigma0) != d or len(k) != d:
        raise ConfigError(f"dimension mismatch: {d} chains, {len(sigma0)} start states, {len(k)} lengths")
    for ki in k:
        _check_k(ki)
    seed = as_seed(rng)
    if isinstance(pivots, str):
        if pivots != "uniform":
            raise ConfigError(f"unknown pivot mode {pivots!r}")
        js = tuple(int(seed.generator(index, ROLE_PIVOT, i).integers(0, k[i] + 1)) for i in range(d))
    else:
        js = tuple(int(j) for j in pivots)
        if len(js) != d or any(not 0 <= j <= ki for j, ki in zip(js, k)):
            raise ConfigError(f"pivots {js} do not fit lengths {tuple(k)}")
    trajs = []
    for i, (c, s0, ki, j) in enumerate(zip(chains, sigma0, k, js)):
        back = c.walk(s0, j, seed.generator(index, ROLE_BACKWARD, i))
        fwd = c.walk(s0, ki - j, seed.generator(index, ROLE_FORWARD, i))
        trajs.append(Trajectory(tuple(reversed(back)) + tuple(fwd[1:])))
    return TrajectoryProductSample(tuple(trajs), js)
