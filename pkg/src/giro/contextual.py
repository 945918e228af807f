"""Contextual Giro, linear baselines and classification-to-bandit environments.

Contexts are raw feature vectors; every model appends a constant 1 so a
fitted reward function can absorb any constant shift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .policies import FIXED, UNIFORM, TieRule, calibrate_eg_schedule

LINEAR = "linear"
LOGISTIC = "logistic"
MODEL_KINDS = (LINEAR, LOGISTIC)

LINEAR_RIDGE = 1e-6
LINEAR_FALLBACK_RIDGE = 1e-3
LOGISTIC_L2 = 1e-4
LOGISTIC_TOL = 1e-3
LOGISTIC_MAX_ITER = 100


class LoadError(ValueError):
    pass


def add_bias(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z)))


# ---------------------------------------------------------------------------
# reward models


@dataclass
class RewardModel:
    kind: str
    theta: np.ndarray
    fit_meta: dict = field(default_factory=dict)

    def raw(self, Xb: np.ndarray) -> np.ndarray:
        z = np.asarray(Xb) @ self.theta
        return sigmoid(z) if self.kind == LOGISTIC else z

    def predict(self, Xb: np.ndarray) -> np.ndarray:
        """Predicted reward at bias-augmented contexts, clamped to [0, 1]."""
        return np.clip(self.raw(Xb), 0.0, 1.0)


@dataclass
class WeightedSample:
    """Bias-augmented contexts with real targets and non-negative weights.

    Fitting it is the same optimization as fitting the unweighted rows it
    summarizes: both losses are linear in the target.
    """

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray

    @classmethod
    def unweighted(cls, Xb, y) -> "WeightedSample":
        y = np.asarray(y, dtype=np.float64)
        return cls(np.asarray(Xb, dtype=np.float64), y, np.ones_like(y))

    def __len__(self) -> int:
        return len(self.y)


def _constant_model(kind, sample, dim, reason) -> RewardModel:
    theta = np.zeros(dim)
    m = float(np.average(sample.y, weights=sample.w))
    if kind == LOGISTIC:
        m = min(max(m, 1e-6), 1 - 1e-6)
        theta[-1] = math.log(m / (1 - m))
    else:
        theta[-1] = m
    return RewardModel(kind, theta, {"iterations": 0, "objective_delta": 0.0,
                                     "fallback": True, "error": reason})


def _fit_linear(sample: WeightedSample) -> RewardModel:
    X, y, w = sample.X, sample.y, sample.w
    dim = X.shape[1]
    penalty = np.ones(dim)
    penalty[-1] = 0.0  # the bias is not shrunk, so constant shifts pass through exactly
    gram = (X * w[:, None]).T @ X
    rhs = X.T @ (w * y)
    meta = {"iterations": 1, "objective_delta": 0.0, "fallback": False, "error": None,
            "regularizer": LINEAR_RIDGE}
    try:
        theta = np.linalg.solve(gram + LINEAR_RIDGE * np.diag(penalty), rhs)
        if not np.all(np.isfinite(theta)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        theta = np.linalg.solve(gram + LINEAR_FALLBACK_RIDGE * np.eye(dim), rhs)
        meta.update(fallback=True, regularizer=LINEAR_FALLBACK_RIDGE)
    return RewardModel(LINEAR, theta, meta)


def _logistic_objective(theta, X, y, w, wsum):
    z = X @ theta
    return float(w @ (np.logaddexp(0.0, z) - y * z)) / wsum + 0.5 * LOGISTIC_L2 * float(theta @ theta)


def _fit_logistic(sample: WeightedSample, warm: np.ndarray | None) -> RewardModel:
    # damped Newton on the L2-regularized mean log-loss
    X, y, w = sample.X, sample.y, sample.w
    dim = X.shape[1]
    wsum = float(w.sum())
    theta = np.zeros(dim) if warm is None else np.array(warm, dtype=np.float64)
    obj = _logistic_objective(theta, X, y, w, wsum)
    delta = math.inf
    it = 0
    while it < LOGISTIC_MAX_ITER:
        it += 1
        p = sigmoid(X @ theta)
        grad = X.T @ (w * (p - y)) / wsum + LOGISTIC_L2 * theta
        hess = (X * (w * p * (1 - p))[:, None]).T @ X / wsum + LOGISTIC_L2 * np.eye(dim)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        for _ in range(40):
            cand = theta - t * step
            new_obj = _logistic_objective(cand, X, y, w, wsum)
            if new_obj <= obj:
                break
            t *= 0.5
        else:
            cand, new_obj = theta, obj
        delta = obj - new_obj
        theta, obj = cand, new_obj
        if delta < LOGISTIC_TOL:
            break
    meta = {"iterations": it, "objective_delta": delta, "fallback": False, "error": None,
            "objective": obj}
    return RewardModel(LOGISTIC, theta, meta)


def fit_reward_model(sample: WeightedSample, kind: str = LINEAR,
                     warm_start: RewardModel | None = None) -> RewardModel:
    """Regularized least squares or logistic maximum likelihood on a sample.

    A non-finite fit is replaced by the constant model at the sample mean,
    with ``fit_meta["fallback"]`` set.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if len(sample) == 0 or float(np.sum(sample.w)) <= 0:
        raise ValueError("cannot fit a reward model to an empty sample")
    dim = sample.X.shape[1]
    try:
        if kind == LINEAR:
            model = _fit_linear(sample)
        else:
            warm = warm_start.theta if warm_start is not None and warm_start.kind == kind else None
            model = _fit_logistic(sample, warm)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        return _constant_model(kind, sample, dim, str(exc))
    if not np.all(np.isfinite(model.theta)):
        return _constant_model(kind, sample, dim, "non-finite parameters")
    return model


# ---------------------------------------------------------------------------
# histories and the contextual bootstrap


class ContextHistory:
    """Observed (context, reward) pairs of one arm; pseudo pairs stay virtual."""

    def __init__(self, d: int):
        self.d = d
        self.s = 0
        self._X = np.empty((16, d + 1))
        self._y = np.empty(16)

    def add(self, x, reward: float) -> None:
        if self.s == len(self._y):
            self._X = np.vstack([self._X, np.empty_like(self._X)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._X[self.s, :-1] = x
        self._X[self.s, -1] = 1.0
        self._y[self.s] = reward
        self.s += 1

    @property
    def X(self) -> np.ndarray:
        return self._X[: self.s]

    @property
    def y(self) -> np.ndarray:
        return self._y[: self.s]


def draw_bootstrap_indices(s: int, a: int, rng) -> np.ndarray:
    """(2a+1)s with-replacement picks from the virtual augmented history.

    Entries 0..s-1 are observed pairs. Entry s + 2a j + 2l + r is the
    l-th pseudo pair of observed pair j, with reward r in {0, 1}.
    """
    size = (2 * a + 1) * s
    return rng.integers(0, size, size=size)


def entry_source(idx: np.ndarray, s: int, a: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(observed pair each entry copies its context from, is_pseudo, pseudo reward)."""
    idx = np.asarray(idx)
    pseudo = idx >= s
    off = np.where(pseudo, idx - s, 0)
    source = np.where(pseudo, off // max(2 * a, 1), idx)
    return source, pseudo, np.where(pseudo, off % 2, -1)


def materialize_sample(history: ContextHistory, idx: np.ndarray, a: int):
    """Explicit bootstrap rows: (X, y, source, is_pseudo)."""
    source, pseudo, r = entry_source(idx, history.s, a)
    X = history.X[source]
    y = np.where(pseudo, r, history.y[source]).astype(np.float64)
    return X, y, source, pseudo


def weighted_sample(history: ContextHistory, idx: np.ndarray, a: int) -> WeightedSample:
    """Collapse a bootstrap draw onto the observed contexts.

    Each observed context j gets weight (copies of it, of its pseudo zeros
    and of its pseudo ones) and the matching mean target.
    """
    s = history.s
    counts = np.bincount(idx, minlength=(2 * a + 1) * s)
    w_obs = counts[:s].astype(np.float64)
    if a:
        pseudo = counts[s:].reshape(s, a, 2).sum(axis=1)
        w_zero, w_one = pseudo[:, 0], pseudo[:, 1]
    else:
        w_zero = w_one = np.zeros(s)
    w = w_obs + w_zero + w_one
    keep = w > 0
    y = (w_obs * history.y + w_one)[keep] / w[keep]
    return WeightedSample(history.X[keep], y, w[keep])


def contextual_giro_select(histories, x_t, a: int, rng, kind: str = LINEAR,
                           models: list | None = None, tie: TieRule = TieRule(),
                           inspect: Callable | None = None) -> int:
    """One round of contextual Giro.

    Untried arms are pulled first, in index order. ``models`` (if given)
    holds per-arm warm starts and is updated in place. ``inspect`` is
    called as ``inspect(arm, history, idx, model)`` for every draw.
    """
    x_t = np.asarray(x_t, dtype=np.float64).ravel()
    for h in histories:
        if x_t.shape[0] != h.d:
            raise ValueError(f"context has dimension {x_t.shape[0]}, arms expect {h.d}")
    for i, h in enumerate(histories):
        if h.s == 0:
            return i
    xb = np.append(x_t, 1.0)
    values = np.empty(len(histories))
    for i, h in enumerate(histories):
        idx = draw_bootstrap_indices(h.s, a, rng)
        warm = models[i] if models is not None else None
        model = fit_reward_model(weighted_sample(h, idx, a), kind, warm)
        if models is not None:
            models[i] = model
        if inspect is not None:
            inspect(i, h, idx, model)
        values[i] = model.predict(xb)
    return _argmax(values, tie, rng)


def _argmax(values, tie: TieRule, rng) -> int:
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return int(best[0])
    if tie.mode == FIXED:
        return int(max(best, key=lambda i: tie.priority[i]))
    return int(best[rng.integers(best.size)])


# ---------------------------------------------------------------------------
# policies


class ContextualPolicy:
    name = "policy"

    def __init__(self, tie: str = UNIFORM):
        if tie not in (UNIFORM, FIXED):
            raise ValueError(f"unknown tie rule {tie!r}")
        self.tie_mode = tie

    def reset(self, K: int, d: int, rng: np.random.Generator) -> None:
        self.K, self.d, self.rng = K, d, rng
        self.tie = TieRule.fixed_preference(K, rng) if self.tie_mode == FIXED else TieRule.uniform()

    def select(self, x, t: int) -> int:
        raise NotImplementedError

    def update(self, arm: int, x, reward: float) -> None:
        pass

    @property
    def label(self) -> str:
        return self.name


class ContextualGiro(ContextualPolicy):
    """Fits a reward model per arm to a bootstrap of its augmented history.

    ``refit_every=r`` reuses each arm's last fitted model for r rounds.
    """

    name = "giro"

    def __init__(self, model: str = LINEAR, a: int = 1, refit_every: int = 1, tie: str = UNIFORM):
        super().__init__(tie)
        if model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {model!r}")
        if a < 0 or int(a) != a:
            raise ValueError("contextual Giro needs a non-negative integer a")
        if refit_every < 1:
            raise ValueError("refit_every must be >= 1")
        self.model, self.a, self.refit_every = model, int(a), int(refit_every)
        self.inspect: Callable | None = None

    @property
    def label(self) -> str:
        return f"giro-{self.model[:3]}(a={self.a})"

    def reset(self, K, d, rng):
        super().reset(K, d, rng)
        self.histories = [ContextHistory(d) for _ in range(K)]
        self.models: list[RewardModel | None] = [None] * K

    def select(self, x, t):
        if self.refit_every == 1 or (t - 1) % self.refit_every == 0 or any(
                m is None for m, h in zip(self.models, self.histories) if h.s):
            return contextual_giro_select(self.histories, x, self.a, self.rng, self.model,
                                          self.models, self.tie, self.inspect)
        for i, h in enumerate(self.histories):
            if h.s == 0:
                return i
        xb = np.append(np.asarray(x, dtype=np.float64), 1.0)
        return _argmax(np.array([float(m.predict(xb)) for m in self.models]), self.tie, self.rng)

    def update(self, arm, x, reward):
        self.histories[arm].add(x, reward)


class ContextualEpsilonGreedy(ContextualPolicy):
    """Greedy on per-arm models fit to the full history, epsilon_t = min(1, b/t)."""

    name = "eg"

    def __init__(self, model: str = LINEAR, b: float | None = None,
                 exploration: float | None = None, tie: str = UNIFORM):
        super().__init__(tie)
        if model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {model!r}")
        if b is not None and b < 0:
            raise ValueError("b must be non-negative")
        self.model, self.b, self.exploration = model, b, exploration

    @property
    def label(self) -> str:
        return f"eg-{self.model[:3]}"

    def calibrate(self, n: int) -> None:
        """Set b for the requested exploration fraction over n rounds."""
        if self.b is None:
            self.b = calibrate_eg_schedule(n, self.exploration if self.exploration else 0.01)

    def reset(self, K, d, rng):
        super().reset(K, d, rng)
        if self.b is None:
            raise ValueError("EG needs b, or calibrate(n) before the first round")
        self.histories = [ContextHistory(d) for _ in range(K)]
        self.models: list[RewardModel | None] = [None] * K

    def select(self, x, t):
        if self.b > 0 and self.rng.random() < min(1.0, self.b / t):
            return int(self.rng.integers(self.K))
        for i, h in enumerate(self.histories):
            if h.s == 0:
                return i
        xb = np.append(np.asarray(x, dtype=np.float64), 1.0)
        return _argmax(np.array([float(m.predict(xb)) for m in self.models]), self.tie, self.rng)

    def update(self, arm, x, reward):
        h = self.histories[arm]
        h.add(x, reward)
        sample = WeightedSample.unweighted(h.X, h.y)
        self.models[arm] = fit_reward_model(sample, self.model, self.models[arm])


class _RidgeArms(ContextualPolicy):
    def __init__(self, lam: float = 1.0, tie: str = UNIFORM):
        super().__init__(tie)
        if lam <= 0:
            raise ValueError("lam must be positive")
        self.lam = lam

    def reset(self, K, d, rng):
        super().reset(K, d, rng)
        self.A_inv = np.stack([np.eye(d + 1) / self.lam for _ in range(K)])
        self.bvec = np.zeros((K, d + 1))

    def theta(self, arm: int) -> np.ndarray:
        return self.A_inv[arm] @ self.bvec[arm]

    def width(self, arm: int, xb: np.ndarray) -> float:
        return math.sqrt(max(float(xb @ self.A_inv[arm] @ xb), 0.0))

    def update(self, arm, x, reward):
        xb = np.append(np.asarray(x, dtype=np.float64), 1.0)
        Ax = self.A_inv[arm] @ xb
        self.A_inv[arm] -= np.outer(Ax, Ax) / (1.0 + xb @ Ax)
        self.bvec[arm] += reward * xb


class LinUCB(_RidgeArms):
    """Ridge mean plus alpha * sqrt(x' A^-1 x)."""

    name = "linucb"

    def __init__(self, alpha: float = 1.0, lam: float = 1.0, tie: str = UNIFORM):
        super().__init__(lam, tie)
        self.alpha = alpha

    def value(self, arm, x) -> float:
        xb = np.append(np.asarray(x, dtype=np.float64), 1.0)
        return float(xb @ self.theta(arm)) + self.alpha * self.width(arm, xb)

    def select(self, x, t):
        return _argmax(np.array([self.value(i, x) for i in range(self.K)]), self.tie, self.rng)


class LinTS(_RidgeArms):
    """Samples theta ~ N(ridge mean, v^2 A^-1) per arm."""

    name = "lints"

    def __init__(self, v: float = 1.0, lam: float = 1.0, tie: str = UNIFORM):
        super().__init__(lam, tie)
        self.v = v

    def value(self, arm, x, rng=None) -> float:
        rng = rng or self.rng
        xb = np.append(np.asarray(x, dtype=np.float64), 1.0)
        cov = self.A_inv[arm]
        L = np.linalg.cholesky(0.5 * (cov + cov.T))
        theta = self.theta(arm) + self.v * L @ rng.standard_normal(self.d + 1)
        return float(xb @ theta)

    def select(self, x, t):
        return _argmax(np.array([self.value(i, x) for i in range(self.K)]), self.tie, self.rng)


class ContextualRandom(ContextualPolicy):
    name = "random"

    def select(self, x, t):
        return int(self.rng.integers(self.K))


class Oracle(ContextualPolicy):
    """Pulls the arm with the highest expected reward.

    Reads row t of ``table`` (expected rewards per round) when set,
    otherwise calls ``expected(x)``.
    """

    name = "oracle"

    def __init__(self, expected: Callable[[np.ndarray], np.ndarray] | None = None):
        super().__init__(UNIFORM)
        self.expected = expected
        self.table: np.ndarray | None = None

    def select(self, x, t):
        row = self.table[t - 1] if self.table is not None else self.expected(x)
        return _argmax(np.asarray(row, dtype=np.float64), self.tie, self.rng)


CONTEXTUAL_POLICIES = {
    "giro": ContextualGiro,
    "eg": ContextualEpsilonGreedy,
    "linucb": LinUCB,
    "lints": LinTS,
    "random": ContextualRandom,
    "oracle": Oracle,
}


def make_contextual_policy(name: str, **params) -> ContextualPolicy:
    try:
        factory = CONTEXTUAL_POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown contextual policy {name!r}; "
                         f"choose from {sorted(CONTEXTUAL_POLICIES)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# environments


@dataclass
class LogisticBanditEnv:
    """Y_i ~ Ber(sigmoid(x' theta_i + bias_i)) with x ~ N(0, I_d).

    ``thetas`` has shape (K, d + 1); the last column is the bias.
    """

    thetas: np.ndarray

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))

    @property
    def K(self) -> int:
        return self.thetas.shape[0]

    @property
    def d(self) -> int:
        return self.thetas.shape[1] - 1

    def expected(self, x) -> np.ndarray:
        return sigmoid(add_bias(x) @ self.thetas.T).squeeze(0) if np.ndim(x) == 1 \
            else sigmoid(add_bias(x) @ self.thetas.T)

    def draw(self, n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Contexts (n, d), rewards (n, K) and expected rewards (n, K)."""
        X = rng.standard_normal((n, self.d))
        P = self.expected(X)
        Y = (rng.random((n, self.K)) < P).astype(np.float64)
        return X, Y, P


@dataclass
class ClassificationBanditEnv:
    """Arm i pays 1 exactly when the presented row's label is i."""

    features: np.ndarray
    labels: np.ndarray
    K: int
    order: np.ndarray

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def reward(self, row: int, arm: int) -> float:
        return 1.0 if self.labels[row] == arm else 0.0

    def shuffled(self, rng) -> "ClassificationBanditEnv":
        return ClassificationBanditEnv(self.features, self.labels, self.K,
                                       rng.permutation(len(self.labels)))

    def draw(self, n: int, rng=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows in presentation order, cycling when n exceeds the data."""
        rows = self.order[np.arange(n) % len(self.order)]
        Y = (self.labels[rows][:, None] == np.arange(self.K)[None, :]).astype(np.float64)
        return self.features[rows], Y, Y


def load_classification_env(path, shuffle_seed: int = 0) -> ClassificationBanditEnv:
    """Read ``f1,...,fd,label`` CSV, standardize features, remap labels to 0..K-1."""
    path = Path(path)
    rows, labels = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        if not header or header[-1].strip() != "label" or len(header) < 2:
            raise LoadError(f"{path}:1: header must be f1,...,fd,label")
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise LoadError(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
            try:
                feats = [float(v) for v in rec[:-1]]
            except ValueError:
                raise LoadError(f"{path}:{lineno}: non-numeric feature") from None
            if not all(math.isfinite(v) for v in feats):
                raise LoadError(f"{path}:{lineno}: non-finite feature")
            try:
                label = int(rec[-1])
            except ValueError:
                raise LoadError(f"{path}:{lineno}: label must be a non-negative integer") from None
            if label < 0:
                raise LoadError(f"{path}:{lineno}: label must be a non-negative integer")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise LoadError(f"{path}: no data rows")
    X = np.asarray(rows, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd == 0
    X = np.where(const, 0.0, (X - mu) / np.where(const, 1.0, sd))
    classes = sorted(set(labels))
    if classes != list(range(classes[0], classes[0] + len(classes))):
        missing = sorted(set(range(classes[0], classes[-1] + 1)) - set(classes))
        raise LoadError(f"{path}: label values {missing} never occur; arms would be undefined")
    y = np.asarray(labels, dtype=np.int64) - classes[0]
    order = np.random.default_rng(shuffle_seed).permutation(len(y))
    return ClassificationBanditEnv(X, y, len(classes), order)
