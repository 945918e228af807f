"""Bandit environments, seeded random streams and regret accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MASK64 = (1 << 64) - 1

# SplitMix64 (Steele, Lea & Flood 2014): additive constant is the 64-bit
# golden ratio, the finalizer is Stafford's "Mix13" variant.
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MUL_1 = 0xBF58476D1CE4E5B9
MIX_MUL_2 = 0x94D049BB133111EB

BERNOULLI = "bernoulli"
BETA = "beta"
FAMILIES = (BERNOULLI, BETA)


class ConsistencyError(ValueError):
    """Raised when a log or curve set violates its structural contract."""


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX_MUL_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MUL_2) & MASK64
    return z ^ (z >> 31)


def stream_key(master: int, run: int, tag: int) -> int:
    """Fold (master, run, tag) into one 64-bit key, one SplitMix64 step per input."""
    key = mix64((master & MASK64) + GOLDEN_GAMMA)
    key = mix64((key ^ (run & MASK64)) + GOLDEN_GAMMA)
    key = mix64((key ^ (tag & MASK64)) + GOLDEN_GAMMA)
    return key


class RngStream(np.random.Generator):
    """A numpy ``Generator`` that remembers which (run, tag) it was derived for.

    Single owner: never share one stream between concurrent tasks.
    """

    def __init__(self, key: int, stream_id: tuple[int, int] = (0, 0)):
        super().__init__(np.random.PCG64(key))
        self.key = key
        self.stream_id = stream_id


def split_seed(master: int, run: int, tag: int) -> RngStream:
    return RngStream(stream_key(master, run, tag), (run, tag))


def binomial_sample(trials: int, p: float, rng: np.random.Generator) -> int:
    """Exact draw from B(trials, p).

    numpy's sampler inverts the cdf when ``trials * min(p, 1 - p) <= 30``
    and uses the BTPE accept-reject scheme above that; both are exact.
    """
    if trials < 0:
        raise ValueError(f"trials must be non-negative, got {trials}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if trials == 0 or p == 0.0:
        return 0
    if p == 1.0:
        return int(trials)
    return int(rng.binomial(trials, p))


def beta_sample(alpha, beta, rng: np.random.Generator, size=None):
    """Beta variate as a ratio of two Gamma draws."""
    x = rng.standard_gamma(alpha, size=size)
    y = rng.standard_gamma(beta, size=size)
    return x / (x + y)


@dataclass(frozen=True)
class BanditInstance:
    """Ground truth of a K-armed bandit with rewards in [0, 1].

    The best arm is the lowest index attaining the maximal mean;
    ``tied_best`` records whether that choice broke a tie.
    """

    means: tuple[float, ...]
    family: str = BERNOULLI
    v: float = 1.0
    best: int = field(init=False)
    tied_best: bool = field(init=False)

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        object.__setattr__(self, "means", means)
        if not means:
            raise ValueError("a bandit needs at least one arm")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown reward family {self.family!r}")
        if any(not 0.0 <= m <= 1.0 for m in means):
            raise ValueError(f"arm means must lie in [0, 1], got {means}")
        if self.family == BETA:
            if self.v < 1.0:
                raise ValueError(f"beta concentration must be >= 1, got {self.v}")
            if any(m in (0.0, 1.0) for m in means):
                raise ValueError("beta arms need means strictly inside (0, 1)")
        top = max(means)
        object.__setattr__(self, "best", means.index(top))
        object.__setattr__(self, "tied_best", means.count(top) > 1)

    @property
    def K(self) -> int:
        return len(self.means)

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.means)

    @property
    def gaps(self) -> np.ndarray:
        m = self.mean_array
        return m[self.best] - m

    def reward_table(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Rewards of every arm in every round, shape (n, K).

        Policies evaluated on the same table see common random numbers.
        """
        m = self.mean_array
        if self.family == BERNOULLI:
            return (rng.random((n, self.K)) < m).astype(np.float64)
        return beta_sample(self.v * m, self.v * (1.0 - m), rng, size=(n, self.K))


def pull(env: BanditInstance, arm: int, rng: np.random.Generator) -> float:
    if not 0 <= arm < env.K:
        raise IndexError(f"arm {arm} out of range for K={env.K}")
    mu = env.means[arm]
    if env.family == BERNOULLI:
        return 1.0 if rng.random() < mu else 0.0
    return float(beta_sample(env.v * mu, env.v * (1.0 - mu), rng))


def uniform_means(K: int, lo: float, hi: float, rng: np.random.Generator) -> tuple[float, ...]:
    return tuple(float(m) for m in rng.uniform(lo, hi, size=K))


@dataclass(frozen=True, slots=True)
class RoundLog:
    t: int
    pulled: int
    reward: float
    cumulative_regret: float


@dataclass
class RunLog:
    """Columnar record of one policy's run; ``rounds()`` yields RoundLogs."""

    pulled: np.ndarray
    reward: np.ndarray
    regret: np.ndarray

    @classmethod
    def from_pulls(cls, pulled, reward, gaps) -> "RunLog":
        pulled = np.asarray(pulled, dtype=np.int64)
        return cls(pulled, np.asarray(reward, dtype=np.float64),
                   np.cumsum(np.asarray(gaps, dtype=np.float64)[pulled]))

    def __len__(self) -> int:
        return len(self.pulled)

    def rounds(self) -> list[RoundLog]:
        return [
            RoundLog(t + 1, int(i), float(y), float(r))
            for t, (i, y, r) in enumerate(zip(self.pulled, self.reward, self.regret))
        ]

    def mean_reward_curve(self) -> np.ndarray:
        """Per-round reward so far, (1/t) * sum of rewards through t."""
        return np.cumsum(self.reward) / np.arange(1, len(self) + 1)


def regret_curve(log: Sequence[RoundLog], gaps: Iterable[float] | None = None) -> np.ndarray:
    """Cumulative pseudo-regret per round.

    With ``gaps`` the curve is recomputed from the pulled arms and checked
    against the logged values.
    """
    ts = [r.t for r in log]
    if ts != list(range(1, len(ts) + 1)):
        raise ConsistencyError("round indices must be 1..n without gaps")
    curve = np.array([r.cumulative_regret for r in log], dtype=np.float64)
    if gaps is not None:
        g = np.asarray(list(gaps), dtype=np.float64)
        recomputed = np.cumsum(g[[r.pulled for r in log]])
        if not np.allclose(recomputed, curve, rtol=0.0, atol=1e-9):
            raise ConsistencyError("logged regret does not match the pulled arms' gaps")
        curve = recomputed
    if np.any(np.diff(curve) < 0):
        raise ConsistencyError("cumulative regret decreased")
    return curve
