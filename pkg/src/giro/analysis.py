"""Exact evaluation of the optimism tails and the regret-bound machinery.

Binomial probabilities are computed in the log domain (log-gamma
coefficients, log-sum-exp tails) because the inner tails that enter the
expected inverse optimism probability get as small as e^-24 or less.
Every closed-form bound is paired with an exact quantity and reported as
a :class:`BoundReport` asserting ``lhs <= rhs``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, xlog1py, xlogy

# exact-mode size caps
W_EXACT_MAX_N = 60
THEOREM1_EXACT_MAX_N = 400

# relative slack tolerated in float comparisons of bound checks
REPORT_RTOL = 1e-12

_INT_TOL = 1e-9


class BoundViolation(AssertionError):
    """An exact quantity exceeded the closed-form bound that should cap it."""


class SizeError(ValueError):
    """Exact evaluation requested beyond its documented size cap."""


def int_ceil(x: float) -> int:
    """Ceiling that treats values within 1e-9 of an integer as that integer.

    (1 + 0.1) * 10 evaluates to 11.000000000000002; the thresholds here
    are meant over the reals.
    """
    r = round(x)
    if abs(x - r) <= _INT_TOL * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def int_floor(x: float) -> int:
    r = round(x)
    if abs(x - r) <= _INT_TOL * max(1.0, abs(x)):
        return int(r)
    return math.floor(x)


# ---------------------------------------------------------------------------
# binomial primitives


def log_binom_pmf(x, n, p):
    """log B(x; n, p), elementwise; -inf outside the support."""
    x = np.asarray(x, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (gammaln(n + 1) - gammaln(x + 1) - gammaln(n - x + 1)
               + xlogy(x, p) + xlog1py(n - x, -p))
    return np.where((x < 0) | (x > n), -np.inf, out)


def binom_pmf(x, n, p):
    return np.exp(log_binom_pmf(x, n, p))


def log_binom_upper_tail(k: int, n: int, p: float) -> float:
    """log P[X >= k] for X ~ B(n, p)."""
    if k <= 0:
        return 0.0
    if k > n:
        return -math.inf
    terms = np.sort(log_binom_pmf(np.arange(k, n + 1), n, p))
    # rounding in the pmf terms can push a near-certain tail past 1
    return min(float(logsumexp(terms)), 0.0)


def binom_upper_tail(k: int, n: int, p: float) -> float:
    return math.exp(log_binom_upper_tail(k, n, p))


def _log_tails_by_row(k: int, n: int, probs: np.ndarray) -> np.ndarray:
    """log P[B(n, probs[r]) >= k] for every row r."""
    if k <= 0:
        return np.zeros(len(probs))
    if k > n:
        return np.full(len(probs), -np.inf)
    y = np.arange(k, n + 1)
    return np.minimum(logsumexp(log_binom_pmf(y[None, :], n, probs[:, None]), axis=1), 0.0)


def kl_bernoulli(p1, p2):
    """Bernoulli KL divergence d(p1, p2) with 0 log 0 = 0.

    Gives +inf where p2 is 0 or 1 and p1 differs from it. Elementwise.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = xlogy(p1, p1) - xlogy(p1, p2) + xlogy(1 - p1, 1 - p1) - xlogy(1 - p1, 1 - p2)
    d = np.where(np.isnan(d), np.inf, d)
    d = np.where(p1 == p2, 0.0, np.maximum(d, 0.0))
    return float(d) if d.ndim == 0 else d


# ---------------------------------------------------------------------------
# optimism tail


@dataclass(frozen=True)
class OptimismQuery:
    s: int
    V: float
    a: int
    tau: float

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("s must be non-negative")
        if self.a < 0 or int(self.a) != self.a:
            raise ValueError(f"a must be a non-negative integer, got {self.a}")
        lo, hi = self.a * self.s, (self.a + 1) * self.s
        if self.s > 0 and not lo - _INT_TOL <= self.V <= hi + _INT_TOL:
            raise ValueError(f"V={self.V} outside [{lo}, {hi}]")

    @property
    def alpha(self) -> int:
        return 2 * int(self.a) + 1


def optimism_tail_Q(q: OptimismQuery) -> float:
    """P[U / (alpha s) >= tau] with U ~ B(alpha s, V / (alpha s)); 1 when s = 0."""
    if q.s == 0:
        return 1.0
    size = q.alpha * q.s
    k = int_ceil(q.tau * size)
    return binom_upper_tail(k, size, q.V / size)


# ---------------------------------------------------------------------------
# general regret decomposition


@dataclass(frozen=True)
class Theorem1Terms:
    a_i: float
    b_i: float
    method: str = "exact"
    a_se: float = 0.0
    b_se: float = 0.0

    @property
    def bound_factor(self) -> float:
        return self.a_i + self.b_i


def midpoint_tau(p1: float, pi: float, a: int) -> float:
    """Threshold halfway between the shifted, scaled means of arms 1 and i."""
    alpha = 2 * a + 1
    return (pi + a) / alpha + (p1 - pi) / (2 * alpha)


def optimal_side_tau(p1: float, pi: float, a: int) -> float:
    """(mu_1 + a) / alpha - Delta_i / (2 alpha), the optimal arm's variant."""
    alpha = 2 * a + 1
    return (p1 + a) / alpha - (p1 - pi) / (2 * alpha)


def _log_q_by_x(s: int, a: int, tau: float) -> np.ndarray:
    """log Q_s(tau) for each count x = V - a s of observed ones."""
    size = (2 * a + 1) * s
    probs = (a * s + np.arange(s + 1)) / size
    return _log_tails_by_row(int_ceil(tau * size), size, probs)


def theorem1_terms(n: int, p1: float, pi: float, a: int, *, tau: str = "midpoint",
                   method: str = "exact", samples: int = 10**6,
                   rng: np.random.Generator | None = None) -> Theorem1Terms:
    """The a_i and b_i terms of the general regret bound for Giro.

    ``tau="midpoint"`` uses the midpoint threshold for both terms;
    ``tau="split"`` switches a_i to the optimal-side threshold. Exact mode
    enumerates the history count x ~ B(s, mu); ``method="monte_carlo"``
    samples histories instead and reports standard errors.
    """
    if not 0.0 <= pi < p1 <= 1.0:
        raise ValueError("need 0 <= pi < p1 <= 1")
    if a < 0 or int(a) != a:
        raise ValueError("a must be a non-negative integer")
    a = int(a)
    tau_b = midpoint_tau(p1, pi, a)
    if tau == "midpoint":
        tau_a = tau_b
    elif tau == "split":
        tau_a = optimal_side_tau(p1, pi, a)
    else:
        raise ValueError(f"unknown tau choice {tau!r}")
    if method == "exact":
        if n > THEOREM1_EXACT_MAX_N:
            raise SizeError(f"exact mode supports n <= {THEOREM1_EXACT_MAX_N}; "
                            "use method='monte_carlo'")
        return _theorem1_exact(n, p1, pi, a, tau_a, tau_b)
    if method == "monte_carlo":
        return _theorem1_mc(n, p1, pi, a, tau_a, tau_b, samples, rng or np.random.default_rng())
    raise ValueError(f"unknown method {method!r}")


def _theorem1_exact(n, p1, pi, a, tau_a, tau_b) -> Theorem1Terms:
    log_cap = math.log(n + 1)
    log_inv_n = -math.log(n)
    a_sum = 0.0
    b_sum = 1.0 if n > 1 else 0.0  # s = 0: Q = 1 > 1/n iff n > 1
    for s in range(1, n):
        x = np.arange(s + 1)
        w1 = binom_pmf(x, s, p1)
        wi = binom_pmf(x, s, pi)
        log_q1 = _log_q_by_x(s, a, tau_a)
        # min(1/Q - 1, n), computed from log Q to survive underflow
        with np.errstate(over="ignore"):
            inv = np.where(-log_q1 >= log_cap, float(n), np.expm1(-log_q1))
        a_sum += math.fsum(w1 * inv)
        log_qi = _log_q_by_x(s, a, tau_b)
        b_sum += math.fsum(wi[log_qi > log_inv_n])
    return Theorem1Terms(a_sum, b_sum + 1.0)


def _theorem1_mc(n, p1, pi, a, tau_a, tau_b, samples, rng) -> Theorem1Terms:
    # independent route: histories are simulated and the bootstrap tail is
    # taken from scipy's binomial survival function
    a_sum = a_var = 0.0
    b_sum = 1.0 if n > 1 else 0.0
    b_var = 0.0
    alpha = 2 * a + 1
    for s in range(1, n):
        size = alpha * s
        k_a = int_ceil(tau_a * size)
        k_b = int_ceil(tau_b * size)
        x1 = rng.binomial(s, p1, size=samples)
        q1 = stats.binom.sf(k_a - 1, size, (a * s + x1) / size)
        with np.errstate(divide="ignore"):
            f = np.minimum(1.0 / q1 - 1.0, n)
        a_sum += f.mean()
        a_var += f.var(ddof=1) / samples
        xi = rng.binomial(s, pi, size=samples)
        qi = stats.binom.sf(k_b - 1, size, (a * s + xi) / size)
        g = (qi > 1.0 / n).astype(np.float64)
        b_sum += g.mean()
        b_var += g.var(ddof=1) / samples
    return Theorem1Terms(a_sum, b_sum + 1.0, "monte_carlo", math.sqrt(a_var), math.sqrt(b_var))


# ---------------------------------------------------------------------------
# constants and the Bernoulli regret bound


@dataclass(frozen=True)
class GiroConstants:
    alpha: float
    b: float
    c: float
    exponent: float  # 8b / (2 - b); the bound carries exp(exponent)


def giro_constants(a: float) -> GiroConstants:
    if a <= 1.0 / math.sqrt(2.0):
        raise ValueError(f"the bound needs a > 1/sqrt(2), got a={a}")
    alpha = 2 * a + 1
    b = alpha / (a * (a + 1))
    exponent = 8 * b / (2 - b)
    c = (2 * math.e**2 * math.sqrt(alpha) / math.sqrt(2 * math.pi) * math.exp(exponent)
         * (1 + math.sqrt(2 * math.pi / (4 - 2 * b))))
    return GiroConstants(alpha, b, c, exponent)


def regret_bound_thm2(gaps, n: float, a: float) -> float:
    """Upper bound on Giro's n-round regret in a Bernoulli bandit (natural log).

    ``gaps`` lists the suboptimal arms' gaps only.
    """
    gaps = [float(g) for g in gaps]
    if any(g <= 0 for g in gaps):
        raise ValueError("suboptimal gaps must be positive")
    k = giro_constants(a)
    log_n = math.log(n)
    total = 0.0
    for g in gaps:
        a_term = 16 * k.alpha * k.c / g**2 * log_n + 2
        b_term = 8 * k.alpha / g**2 * log_n + 2
        total += g * (a_term + b_term)
    return total


# ---------------------------------------------------------------------------
# expected inverse probability of being optimistic


def log_bootstrap_tail(x: float, n: int, p: float, a: int) -> float:
    """log of sum_{y >= ceil((a+p)n)} B(y; m, (an + x)/m), m = (2a+1)n."""
    m = (2 * a + 1) * n
    return log_binom_upper_tail(int_ceil((a + p) * n), m, (a * n + x) / m)


def bootstrap_tail(x: float, n: int, p: float, a: int) -> float:
    return math.exp(log_bootstrap_tail(x, n, p, a))


def _check_w_args(n, p, a):
    if n < 1 or int(n) != n:
        raise ValueError("n must be a positive integer")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if a < 1 or int(a) != a:
        raise ValueError("a must be an integer >= 1")


def W_exact(n: int, p: float, a: int) -> float:
    """sum_x B(x; n, p) / bootstrap_tail(x, n, p, a), exactly."""
    _check_w_args(n, p, a)
    if n > W_EXACT_MAX_N:
        raise SizeError(f"exact W supports n <= {W_EXACT_MAX_N}")
    m = (2 * a + 1) * n
    x = np.arange(n + 1)
    log_w = log_binom_pmf(x, n, p)
    log_tail = _log_tails_by_row(int_ceil((a + p) * n), m, (a * n + x) / m)
    keep = np.isfinite(log_w)
    if np.any(~np.isfinite(log_tail[keep])):
        raise ArithmeticError("bootstrap tail vanished; W is undefined")
    return float(np.exp(logsumexp(log_w[keep] - log_tail[keep])))


def W_bound_thm3(a: float) -> float:
    return giro_constants(a).c


def stirling_binom_lb(x: int, n: int, p: float) -> float:
    if not 0 < x < n:
        raise ValueError(f"the bound is defined for 0 < x < n, got x={x}, n={n}")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return (math.sqrt(2 * math.pi) / math.e**2 * math.sqrt(n / (x * (n - x)))
            * math.exp(-(x - p * n) ** 2 / (p * (1 - p) * n)))


def bootstrap_tail_lb(x: float, n: int, p: float, a: float) -> float:
    if n < 1 or int(n) != n:
        raise ValueError("n must be a positive integer")
    if not 0 <= x <= p * n + _INT_TOL:
        raise ValueError(f"x must lie in [0, pn] = [0, {p * n}], got {x}")
    b = giro_constants(a).b
    return (math.sqrt(2 * math.pi) / (math.e**2 * math.sqrt(2 * a + 1))
            * math.exp(-b * (p * n + math.sqrt(n) - x) ** 2 / n))


def lemma1_lower_bound(mu1: float, delta2: float, n: int) -> float:
    """Regret floor of the naive bootstrap with one initial pull per arm."""
    return 0.5 * (1 - mu1) * delta2 * (n - 1)


# ---------------------------------------------------------------------------
# bound reports


@dataclass(frozen=True)
class BoundReport:
    """``lhs <= rhs`` for one parameter point. For lower bounds the
    closed form sits on the left and the exact quantity on the right."""

    check: str
    lhs: float
    rhs: float
    params: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.slack >= -REPORT_RTOL * max(abs(self.lhs), abs(self.rhs))

    def require(self) -> "BoundReport":
        if not self.passed:
            raise BoundViolation(f"{self.check} violated at {self.params}: "
                                 f"lhs={self.lhs!r} > rhs={self.rhs!r}")
        return self


def lemma3_rhs(n: int, p: float, f: Callable[[float], float]) -> float:
    root = math.sqrt(n)
    i0 = 0
    while (i0 + 1) * root < p * n:
        i0 += 1
    head = [math.exp(-2 * i * i) * f(p * n - (i + 1) * root) for i in range(i0)]
    return math.fsum(head) + math.exp(-2 * i0 * i0) * f(0.0)


def lemma3_check(n: int, p: float, f: Callable[[float], float]) -> BoundReport:
    """Binomial average of a decreasing f against its layered upper bound."""
    root = math.sqrt(n)
    points = sorted(set(range(n + 1)) | {p * n - (i + 1) * root for i in range(n + 1)
                                         if p * n - (i + 1) * root >= 0})
    vals = [f(x) for x in points]
    if any(v < 0 for v in vals) or any(b > a for a, b in zip(vals, vals[1:])):
        raise ValueError("f must be non-negative and non-increasing on [0, n]")
    x = np.arange(n + 1)
    lhs = math.fsum(binom_pmf(x, n, p) * np.array([f(float(v)) for v in x]))
    return BoundReport("lemma3", lhs, lemma3_rhs(n, p, f), {"n": n, "p": p})


# ---------------------------------------------------------------------------
# verification grids

P_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))

GRIDS = {
    "small": {"thm3_n": range(1, 11), "lemma4_n": range(1, 11), "lemma5_n": range(2, 21),
              "p": (0.1, 0.5, 0.9), "a": (1, 2)},
    "full": {"thm3_n": range(1, 41), "lemma4_n": range(1, 41), "lemma5_n": range(2, 61),
             "p": P_GRID, "a": (1, 2, 3)},
}


def _inverse_tail_fn(n, p, a):
    return lambda x: math.exp(-log_bootstrap_tail(x, n, p, a))


def iter_bound_checks(grid: str = "small") -> Iterator[BoundReport]:
    try:
        g = GRIDS[grid]
    except KeyError:
        raise ValueError(f"unknown grid {grid!r}; choose from {sorted(GRIDS)}") from None
    for a in g["a"]:
        c = W_bound_thm3(a)
        for n in g["thm3_n"]:
            for p in g["p"]:
                w = W_exact(n, p, a)
                yield BoundReport("thm3", w, c, {"n": n, "p": p, "a": a})
                layered = lemma3_rhs(n, p, _inverse_tail_fn(n, p, a))
                yield BoundReport("lemma3", w, layered, {"n": n, "p": p, "a": a})
    for a in g["a"]:
        for n in g["lemma4_n"]:
            for p in g["p"]:
                for x in range(int_floor(p * n) + 1):
                    yield BoundReport("lemma4", bootstrap_tail_lb(x, n, p, a),
                                      bootstrap_tail(x, n, p, a),
                                      {"n": n, "p": p, "a": a, "x": x})
    for n in g["lemma5_n"]:
        for p in g["p"]:
            for x in range(1, n):
                yield BoundReport("lemma5", stirling_binom_lb(x, n, p),
                                  float(binom_pmf(x, n, p)), {"n": n, "p": p, "x": x})
    for p1 in g["p"]:
        for p2 in g["p"]:
            yield BoundReport("kl_quadratic", kl_bernoulli(p1, p2),
                              (p1 - p2) ** 2 / (p2 * (1 - p2)), {"p": p1, "p2": p2})


def verify_bounds(grid: str = "small") -> list[BoundReport]:
    return list(iter_bound_checks(grid))
