"""Multi-armed bandit policies behind one select/update interface.

Every policy pulls each untried arm once, in ascending index order, before
it computes any value: an unpulled arm carries an infinite value, so no
value function is ever asked about an arm with an empty history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .analysis import kl_bernoulli  # noqa: F401  (re-exported)
from .core import beta_sample, binomial_sample

UNIFORM = "uniform"
FIXED = "fixed"

# Fractional parts below this are treated as zero when splitting a * s.
FRACTION_EPS = 1e-9

KLUCB_TOL = 1e-9
KLUCB_MAX_ITER = 64


class ContractError(RuntimeError):
    """A value was requested for an arm that has never been pulled."""


def is_integer(a: float) -> bool:
    return abs(a - round(a)) < FRACTION_EPS


# ---------------------------------------------------------------------------
# arm statistics


@dataclass
class ArmRecord:
    """History of one arm after ``s`` pulls.

    Binary histories keep only ``(s, ones)``; ``rewards`` is materialized
    the first time a reward outside {0, 1} arrives. Pseudo rewards are
    never stored, they follow from ``(s, a)``.
    """

    a: float = 1.0
    s: int = 0
    ones: int = 0
    total: float = 0.0
    rewards: list[float] | None = None

    @classmethod
    def from_rewards(cls, rewards: Sequence[float], a: float = 1.0) -> "ArmRecord":
        rec = cls(a=a)
        for y in rewards:
            rec.add(y)
        return rec

    def add(self, reward: float) -> None:
        reward = float(reward)
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"rewards must lie in [0, 1], got {reward}")
        if self.rewards is None and reward not in (0.0, 1.0):
            self.rewards = [1.0] * self.ones + [0.0] * (self.s - self.ones)
        if self.rewards is not None:
            self.rewards.append(reward)
        self.s += 1
        self.ones += reward == 1.0
        self.total += reward

    @property
    def binary(self) -> bool:
        return self.rewards is None

    @property
    def mean(self) -> float:
        return self.total / self.s if self.s else 0.0

    @property
    def V(self) -> float:
        """Ones in the augmented history (binary rewards)."""
        return self.ones + self.a * self.s

    def stored(self) -> np.ndarray:
        if self.rewards is None:
            return np.concatenate([np.ones(self.ones), np.zeros(self.s - self.ones)])
        return np.asarray(self.rewards)


@dataclass(frozen=True)
class GiroDraw:
    alpha: float
    U: int | None
    mu_hat: float


@dataclass(frozen=True)
class TieRule:
    """How ties among finite arm values are broken.

    ``priority[i]`` ranks arm i (higher wins). Under a fixed preference for
    two arms, ``z`` is the pre-drawn Ber(1/2) variable: z = 1 favours arm 2
    (index 1).
    """

    mode: str = UNIFORM
    priority: tuple[int, ...] | None = None
    z: int | None = None

    @classmethod
    def uniform(cls) -> "TieRule":
        return cls(UNIFORM)

    @classmethod
    def fixed_preference(cls, K: int, rng: np.random.Generator, z: int | None = None) -> "TieRule":
        if K == 2:
            if z is None:
                z = int(rng.integers(2))
            return cls(FIXED, (0, 1) if z == 1 else (1, 0), z)
        order = rng.permutation(K)
        priority = np.empty(K, dtype=int)
        priority[order] = np.arange(K)
        return cls(FIXED, tuple(int(p) for p in priority))


def select_arm(values, counts, tie: TieRule, rng: np.random.Generator) -> int:
    """Argmax of ``values`` with untried arms first (lowest index wins)."""
    untried = np.flatnonzero(np.asarray(counts) == 0)
    if untried.size:
        return int(untried[0])
    return argmax_tie(values, tie, rng)


def argmax_tie(values, tie: TieRule, rng: np.random.Generator) -> int:
    values = np.asarray(values, dtype=np.float64)
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return int(best[0])
    if tie.mode == FIXED:
        return int(max(best, key=lambda i: tie.priority[i]))
    return int(best[rng.integers(best.size)])


# ---------------------------------------------------------------------------
# per-arm value functions


def _binary_draw(s: int, ones: int, k: int, rng) -> GiroDraw:
    size = s + 2 * k
    U = binomial_sample(size, (ones + k) / size, rng)
    return GiroDraw(size / s, U, U / size)


def _general_draw(stored: np.ndarray, k: int, rng) -> GiroDraw:
    # Resample the virtual history: split the draws among the stored
    # region, the k pseudo zeros and the k pseudo ones, then resample
    # within the stored region.
    s = len(stored)
    size = s + 2 * k
    n_hist, _n_zero, n_one = rng.multinomial(size, [s / size, k / size, k / size])
    picked = stored[rng.integers(0, s, size=n_hist)].sum() if n_hist else 0.0
    return GiroDraw(size / s, None, (picked + n_one) / size)


def _require_pulled(record: ArmRecord) -> None:
    if record.s < 1:
        raise ContractError("value requested for an unpulled arm; use the +inf sentinel")


def _integer_a(record: ArmRecord) -> int:
    if not is_integer(record.a) or record.a < 0:
        raise ValueError(f"this draw needs a non-negative integer a, got {record.a}")
    return int(round(record.a))


def giro_value_binary(record: ArmRecord, rng) -> GiroDraw:
    """U ~ B(alpha s, V / (alpha s)), mu_hat = U / (alpha s)."""
    _require_pulled(record)
    if not record.binary:
        raise ValueError("binomial fast path needs a binary history")
    a = _integer_a(record)
    return _binary_draw(record.s, record.ones, a * record.s, rng)


def giro_value_general(record: ArmRecord, rng) -> GiroDraw:
    """Mean of (2a+1)s with-replacement draws from the augmented history."""
    _require_pulled(record)
    a = _integer_a(record)
    return _general_draw(record.stored(), a * record.s, rng)


def giro_fractional_record(record: ArmRecord, rng) -> int:
    """Pseudo rewards of each kind for real ``a``: ceil(as) w.p. frac(as), else floor(as)."""
    as_ = record.a * record.s
    lo = math.floor(as_ + FRACTION_EPS)
    frac = as_ - lo
    if frac <= FRACTION_EPS:
        return lo
    return lo + int(rng.random() < frac)


def giro_value(record: ArmRecord, rng) -> GiroDraw:
    """Giro value for any a > 0, binary fast path when the history allows."""
    _require_pulled(record)
    k = giro_fractional_record(record, rng)
    if record.binary:
        return _binary_draw(record.s, record.ones, k, rng)
    return _general_draw(record.stored(), k, rng)


def naive_bootstrap_value(record: ArmRecord, rng) -> float:
    _require_pulled(record)
    if record.binary:
        return _binary_draw(record.s, record.ones, 0, rng).mu_hat
    return _general_draw(record.stored(), 0, rng).mu_hat


def ucb1_value(record: ArmRecord, t: int) -> float:
    _require_pulled(record)
    return record.mean + math.sqrt(2.0 * math.log(t) / record.s)


def _klucb_scalar(p: float, s: float, log_t: float) -> float:
    if p >= 1.0:
        return 1.0
    q_ = 1.0 - p
    # d(p, x) = neg_entropy(p) - p log x - (1 - p) log(1 - x)
    neg_entropy = (p * math.log(p) if p > 0 else 0.0) + q_ * math.log(q_)
    budget = log_t / s - neg_entropy
    lo, hi = p, 1.0
    for _ in range(KLUCB_MAX_ITER):
        mid = 0.5 * (lo + hi)
        cross = (-p * math.log(mid) if p > 0 else 0.0) - q_ * math.log1p(-mid)
        if cross <= budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= KLUCB_TOL:
            break
    return lo


def klucb_index(p_hat, s, t: int) -> np.ndarray:
    """Largest q in [p_hat, 1] with s * d(p_hat, q) <= log t, by bisection."""
    p_hat = np.atleast_1d(np.asarray(p_hat, dtype=np.float64))
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), p_hat.shape)
    log_t = math.log(t)
    return np.array([_klucb_scalar(p, n, log_t) for p, n in zip(p_hat.tolist(), s.tolist())])


def klucb_value(record: ArmRecord, t: int) -> float:
    """KL-UCB index; ``record`` must hold Bernoulli-rounded rewards."""
    _require_pulled(record)
    if not record.binary:
        raise ValueError("KL-UCB needs binary rewards; round them with bernoulli_round")
    return float(klucb_index(record.ones / record.s, record.s, t)[0])


def ts_value(record: ArmRecord, rng) -> float:
    if not record.binary:
        raise ValueError("Bernoulli TS needs binary rewards; round them with bernoulli_round")
    return float(beta_sample(1 + record.ones, 1 + record.s - record.ones, rng))


def bernoulli_round(reward: float, rng) -> int:
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward must lie in [0, 1], got {reward}")
    return int(rng.random() < reward)


def eg_select(records: Sequence[ArmRecord], t: int, b: float, rng,
              tie: TieRule = TieRule()) -> int:
    """Epsilon-greedy with epsilon_t = min(1, b / t)."""
    counts = [r.s for r in records]
    if b > 0 and rng.random() < min(1.0, b / t):
        return int(rng.integers(len(records)))
    return select_arm([r.mean for r in records], counts, tie, rng)


def calibrate_eg_schedule(n: int, fraction: float = 0.01) -> float:
    """b such that epsilon_t = b / t explores ``fraction * n`` times in n rounds.

    Solves b (1 + log(n / b)) = fraction * n, the integral approximation
    of sum_t min(1, b / t).
    """
    target = fraction * n
    if not 0 < target <= n:
        raise ValueError("fraction must lie in (0, 1]")
    if target == n:
        return float(n)
    return brentq(lambda b: b * (1.0 + math.log(n / b)) - target, 1e-12, n, xtol=1e-12)


def expected_explorations(n: int, b: float) -> float:
    t = np.arange(1, n + 1)
    return float(np.minimum(1.0, b / t).sum())


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Shared bookkeeping: per-arm counts, reward sums and ones.

    State lives in plain lists; K is small and per-round numpy overhead
    would dominate. Subclasses implement ``values(t)``, which is only
    called once every arm has been pulled.
    """

    name = "policy"
    rounds_rewards = False

    def __init__(self, tie: str = UNIFORM):
        if tie not in (UNIFORM, FIXED):
            raise ValueError(f"unknown tie rule {tie!r}")
        self.tie_mode = tie

    def reset(self, K: int, rng: np.random.Generator) -> None:
        self.K = K
        self.rng = rng
        self.counts = [0] * K
        self.ones = [0] * K
        self.sums = [0.0] * K
        self.tie = TieRule.fixed_preference(K, rng) if self.tie_mode == FIXED else TieRule.uniform()
        self._untried = 0

    def select(self, t: int) -> int:
        if self._untried < self.K:
            return self._untried
        return self.argmax(self.values(t))

    def argmax(self, values) -> int:
        top = max(values)
        best = [i for i, v in enumerate(values) if v == top]
        if len(best) == 1:
            return best[0]
        if self.tie.mode == FIXED:
            return max(best, key=self.tie.priority.__getitem__)
        return best[int(self.rng.integers(len(best)))]

    def values(self, t: int) -> list[float]:
        raise NotImplementedError

    def update(self, arm: int, reward: float) -> None:
        if self.rounds_rewards:
            reward = 1.0 if self.rng.random() < reward else 0.0
        self.counts[arm] += 1
        self.sums[arm] += reward
        if reward == 1.0:
            self.ones[arm] += 1
        while self._untried < self.K and self.counts[self._untried] > 0:
            self._untried += 1

    @property
    def label(self) -> str:
        return self.name


class Giro(Policy):
    """Bootstrap of the history with ``a`` pseudo zeros and ones per pull.

    Binary histories take one binomial draw per arm; others are resampled.
    Real ``a`` realizes floor/ceil pseudo counts per draw.
    """

    name = "giro"

    def __init__(self, a: float = 1.0, tie: str = UNIFORM):
        super().__init__(tie)
        if a < 0:
            raise ValueError(f"a must be non-negative, got {a}")
        self.a = float(a)
        self._int_a = int(round(a)) if is_integer(a) else None

    @property
    def label(self) -> str:
        return f"{self.name}(a={self.a:g})"

    def reset(self, K, rng):
        super().reset(K, rng)
        self._binary = [True] * K
        self._store = np.empty((K, 64))

    def update(self, arm, reward):
        s = self.counts[arm]
        if s >= self._store.shape[1]:
            grown = np.empty((self.K, 2 * self._store.shape[1]))
            grown[:, :s] = self._store[:, :s]
            self._store = grown
        self._store[arm, s] = reward
        if reward != 0.0 and reward != 1.0:
            self._binary[arm] = False
        super().update(arm, reward)

    def pseudo_count(self, s: int) -> int:
        if self._int_a is not None:
            return self._int_a * s
        as_ = self.a * s
        lo = math.floor(as_ + FRACTION_EPS)
        frac = as_ - lo
        if frac <= FRACTION_EPS:
            return lo
        return lo + (self.rng.random() < frac)

    def values(self, t):
        binomial = self.rng.binomial
        out = []
        for i, (s, ones) in enumerate(zip(self.counts, self.ones)):
            k = self.pseudo_count(s)
            size = s + 2 * k
            if self._binary[i]:
                out.append(binomial(size, (ones + k) / size) / size)
            else:
                out.append(_general_draw(self._store[i, :s], k, self.rng).mu_hat)
        return out


class NaiveBootstrap(Giro):
    """Bootstrap of the observed rewards only; can lock onto a bad arm."""

    name = "naive"

    def __init__(self, tie: str = UNIFORM):
        super().__init__(a=0.0, tie=tie)

    @property
    def label(self) -> str:
        return self.name


class UCB1(Policy):
    name = "ucb1"

    def values(self, t):
        c = 2.0 * math.log(t)
        return [m / s + math.sqrt(c / s) for m, s in zip(self.sums, self.counts)]


class KLUCB(Policy):
    name = "klucb"
    rounds_rewards = True

    def values(self, t):
        log_t = math.log(t)
        return [_klucb_scalar(o / s, s, log_t) for o, s in zip(self.ones, self.counts)]


class ThompsonSampling(Policy):
    """Bernoulli TS with a Beta(1, 1) prior on rounded rewards."""

    name = "ts"
    rounds_rewards = True

    def select(self, t):
        # the prior is proper, so untried arms need no forced pull
        ones = np.asarray(self.ones)
        fails = np.asarray(self.counts) - ones
        return self.argmax(beta_sample(1 + ones, 1 + fails, self.rng).tolist())


class EpsilonGreedy(Policy):
    name = "eg"

    def __init__(self, b: float = 0.0, tie: str = UNIFORM):
        super().__init__(tie)
        if b < 0:
            raise ValueError(f"schedule parameter b must be non-negative, got {b}")
        self.b = float(b)

    @property
    def label(self) -> str:
        return f"{self.name}(b={self.b:g})"

    def select(self, t):
        if self.b > 0 and self.rng.random() < min(1.0, self.b / t):
            return int(self.rng.integers(self.K))
        return super().select(t)

    def values(self, t):
        return [m / s for m, s in zip(self.sums, self.counts)]


class UniformRandom(Policy):
    name = "random"

    def select(self, t):
        return int(self.rng.integers(self.K))


POLICIES: dict[str, Callable[..., Policy]] = {
    "giro": Giro,
    "naive": NaiveBootstrap,
    "ucb1": UCB1,
    "klucb": KLUCB,
    "ts": ThompsonSampling,
    "eg": EpsilonGreedy,
    "random": UniformRandom,
}


def make_policy(name: str, **params) -> Policy:
    try:
        factory = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return factory(**params)
