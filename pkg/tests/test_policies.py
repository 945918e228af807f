import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from giro.core import BanditInstance, split_seed
from giro.harness import play
from giro.policies import (KLUCB, UCB1, ArmRecord, ContractError, EpsilonGreedy, Giro,
                           NaiveBootstrap, ThompsonSampling, TieRule, UniformRandom,
                           bernoulli_round, calibrate_eg_schedule, eg_select,
                           expected_explorations, giro_fractional_record, giro_value,
                           giro_value_binary, giro_value_general, klucb_index, klucb_value,
                           kl_bernoulli, make_policy, naive_bootstrap_value, select_arm,
                           ts_value, ucb1_value)

from oracles import binomial_pmf, enumerate_resample_means, resample_pmf, total_variation


def _fits(samples, pmf, alpha=0.001):
    """Chi-square goodness of fit of samples against an exact pmf."""
    support = sorted(pmf)
    index = {v: i for i, v in enumerate(support)}
    obs = np.zeros(len(support))
    for v in samples:
        obs[index[v]] += 1  # KeyError means a value outside the support
    exp = np.array([float(pmf[v]) for v in support]) * len(samples)
    return stats.chisquare(obs, exp).pvalue > alpha


def _draws(fn, n):
    return [fn() for _ in range(n)]


# ---- records


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 3), st.data())
def test_binary_record_invariants(s, a, data):
    ones = data.draw(st.integers(0, s))
    rec = ArmRecord.from_rewards([1.0] * ones + [0.0] * (s - ones), a=a)
    assert rec.binary and rec.V == ones + a * s
    assert a * s <= rec.V <= (a + 1) * s
    if a:
        d = giro_value_binary(rec, np.random.default_rng(s))
        assert d.alpha == 2 * a + 1
        assert 0 <= d.U <= d.alpha * s and 0.0 <= d.mu_hat <= 1.0


def test_record_materializes_on_first_fraction():
    rec = ArmRecord.from_rewards([1, 0, 1])
    assert rec.binary
    rec.add(0.25)
    assert not rec.binary and sorted(rec.stored().tolist()) == [0.0, 0.25, 1.0, 1.0]
    with pytest.raises(ValueError):
        rec.add(1.5)


def test_unpulled_arm_has_no_value():
    rng = np.random.default_rng(0)
    for fn in (lambda r: giro_value(r, rng), lambda r: ucb1_value(r, 2),
               lambda r: naive_bootstrap_value(r, rng), lambda r: klucb_value(r, 2)):
        with pytest.raises(ContractError):
            fn(ArmRecord())


# ---- Giro draws


def test_binary_pmf_single_one():
    rec = ArmRecord.from_rewards([1.0], a=1)
    rng = split_seed(1, 0, 0)
    pmf = {Fraction(k, 3): q for k, q in binomial_pmf(3, Fraction(2, 3)).items()}
    assert {k: q * 27 for k, q in pmf.items()} == {0: 1, Fraction(1, 3): 6, Fraction(2, 3): 12, 1: 8}
    samples = [Fraction(giro_value_binary(rec, rng).U, 3) for _ in range(60_000)]
    assert _fits(samples, pmf)


@pytest.mark.parametrize("rewards,V,mean", [([0.0], 1, 1 / 3), ([1.0, 0.0], 3, 0.5)])
def test_binary_mean_is_V_over_alpha_s(rewards, V, mean):
    rec = ArmRecord.from_rewards(rewards, a=1)
    assert rec.V == V
    rng = split_seed(2, 0, 0)
    mu = np.array([giro_value_binary(rec, rng).mu_hat for _ in range(200_000)])
    sd = math.sqrt(mean * (1 - mean) / (3 * len(rewards)) / len(mu))
    assert abs(mu.mean() - mean) < 4 * sd


@pytest.mark.parametrize("s", range(1, 6))
@pytest.mark.parametrize("a", [1, 2])
def test_resample_law_equals_binomial_law_exactly(s, a):
    for ones in range(s + 1):
        exact = resample_pmf(s, ones, a)
        alpha_s = (2 * a + 1) * s
        assert total_variation(exact, binomial_pmf(alpha_s, Fraction(ones + a * s, alpha_s))) == 0


@pytest.mark.parametrize("s,ones,a", [(3, 1, 1), (5, 4, 2), (2, 0, 1)])
def test_general_draw_follows_enumerated_law(s, ones, a):
    rec = ArmRecord.from_rewards([1.0] * ones + [0.0] * (s - ones), a=a)
    rng = split_seed(3, s, ones)
    alpha_s = (2 * a + 1) * s
    samples = [round(giro_value_general(rec, rng).mu_hat * alpha_s) for _ in range(50_000)]
    pmf = resample_pmf(s, ones, a)
    # cells with tiny mass are pooled implicitly by chi-square only if present
    assert _fits(samples, {k: v for k, v in pmf.items()})


def test_general_draw_non_binary_enumeration():
    rec = ArmRecord.from_rewards([0.5], a=1)
    pmf = enumerate_resample_means([0, Fraction(1, 2), 1], 3)
    assert len(pmf) == 7 and sum(pmf.values()) == 1
    rng = split_seed(4, 0, 0)
    samples = [Fraction(giro_value_general(rec, rng).mu_hat).limit_denominator(12) for _ in range(60_000)]
    assert _fits(samples, pmf)


def test_general_constant_history_without_pseudo_rewards():
    rec = ArmRecord.from_rewards([1.0, 1.0, 1.0], a=0)
    rng = np.random.default_rng(0)
    assert all(giro_value_general(rec, rng).mu_hat == 1.0 for _ in range(50))


def test_general_rejects_fractional_a():
    with pytest.raises(ValueError):
        giro_value_general(ArmRecord.from_rewards([1.0], a=0.5), np.random.default_rng(0))


def test_fractional_pseudo_count():
    rng = split_seed(5, 0, 0)
    rec = ArmRecord.from_rewards([1, 0, 1, 1], a=1 / 3)
    ks = np.array([giro_fractional_record(rec, rng) for _ in range(100_000)])
    assert set(ks.tolist()) == {1, 2}
    assert abs((ks == 2).mean() - 1 / 3) < 0.01
    assert {giro_fractional_record(ArmRecord.from_rewards([0] * 10, a=0.1), rng) for _ in range(100)} == {1}
    assert {giro_fractional_record(ArmRecord.from_rewards([0] * 7, a=2), rng) for _ in range(100)} == {14}


@pytest.mark.parametrize("s,a,mu", [(1, 1, 0.5), (5, 2, 0.1), (20, 1, 0.9)])
def test_moment_identities_small(s, a, mu):
    rng = split_seed(6, s, a)
    ones = rng.binomial(s, mu)
    rec = ArmRecord.from_rewards([1.0] * ones + [0.0] * (s - ones), a=a)
    alpha_s = (2 * a + 1) * s
    m = rec.V / alpha_s
    var = rec.V / alpha_s**2 * (1 - m)
    x = np.array([giro_value(rec, rng).mu_hat for _ in range(100_000)])
    assert abs(x.mean() - m) < 4 * math.sqrt(var / len(x))
    # standard error of the sample variance from the fourth central moment
    mu4 = np.mean((x - m) ** 4)
    assert abs(x.var() - var) < 4 * math.sqrt(max(mu4 - var**2, 0) / len(x)) + 1e-15


def test_V_marginal_moments():
    rng = split_seed(7, 0, 0)
    s, a, mu = 20, 2, 0.3
    V = rng.binomial(s, mu, size=200_000) + a * s
    assert abs(V.mean() - (mu + a) * s) < 4 * math.sqrt(mu * (1 - mu) * s / len(V))
    assert V.var() == pytest.approx(mu * (1 - mu) * s, rel=0.02)


# ---- naive bootstrap


def test_naive_bootstrap_values():
    rng = split_seed(8, 0, 0)
    assert all(naive_bootstrap_value(ArmRecord.from_rewards([0.0], a=0), rng) == 0 for _ in range(50))
    assert all(naive_bootstrap_value(ArmRecord.from_rewards([1.0, 1.0], a=0), rng) == 1 for _ in range(50))
    rec = ArmRecord.from_rewards([0.0, 1.0], a=0)
    samples = [Fraction(naive_bootstrap_value(rec, rng)) for _ in range(40_000)]
    assert _fits(samples, enumerate_resample_means([0, 1], 2))


# ---- index policies


def test_ucb1_values():
    rec = ArmRecord.from_rewards([1.0] * 50 + [0.0] * 50)
    assert ucb1_value(rec, 100) == pytest.approx(0.5 + math.sqrt(2 * math.log(100) / 100))
    assert ucb1_value(rec, 100) == pytest.approx(0.80348, abs=1e-5)
    assert ucb1_value(ArmRecord.from_rewards([0.0]), 2) == pytest.approx(math.sqrt(2 * math.log(2)))
    radii = [ucb1_value(ArmRecord.from_rewards([0.0] * s), 100) for s in range(1, 30)]
    assert all(x > y for x, y in zip(radii, radii[1:]))


def test_klucb_matches_grid_scan():
    q = klucb_index(0.5, 10, 100)[0]
    grid = np.linspace(0.5, 1 - 1e-12, 2_000_001)
    ok = grid[10 * kl_bernoulli(0.5, grid) <= math.log(100)]
    assert abs(q - ok.max()) < 1e-6
    assert klucb_index(1.0, 5, 10)[0] == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.data(), st.integers(2, 10_000))
def test_klucb_monotone_in_t_and_feasible(s, data, t):
    ones = data.draw(st.integers(0, s))
    p = ones / s
    q1, q2 = klucb_index(p, s, t)[0], klucb_index(p, s, t + 17)[0]
    assert p <= q1 <= q2 <= 1.0
    assert s * kl_bernoulli(p, min(q1, 1 - 1e-15)) <= math.log(t) + 1e-6


def test_ts_posterior():
    rng = split_seed(9, 0, 0)
    x = np.array([ts_value(ArmRecord(), rng) for _ in range(50_000)])
    assert stats.kstest(x, "uniform").pvalue > 0.001
    rec = ArmRecord.from_rewards([1.0] * 10)
    y = np.array([ts_value(rec, rng) for _ in range(50_000)])
    sd = math.sqrt(11 / (12**2 * 13))
    assert abs(y.mean() - 11 / 12) < 4 * sd / math.sqrt(len(y))
    with pytest.raises(ValueError):
        ts_value(ArmRecord.from_rewards([0.5]), rng)


def test_bernoulli_round():
    rng = split_seed(10, 0, 0)
    assert bernoulli_round(0.0, rng) == 0 and bernoulli_round(1.0, rng) == 1
    bits = np.array([bernoulli_round(0.3, rng) for _ in range(1_000_000)])
    assert abs(bits.mean() - 0.3) < 0.002
    raw = rng.random(200_000)
    rounded = np.array([bernoulli_round(r, rng) for r in raw])
    assert abs(rounded.mean() - raw.mean()) < 4 * math.sqrt(0.25 / len(raw))


def test_eg_calibration():
    n = 50_000
    b = calibrate_eg_schedule(n)
    assert b * (1 + math.log(n / b)) == pytest.approx(500, rel=1e-9)
    direct = np.minimum(1.0, b / np.arange(1, n + 1)).sum()
    assert direct == pytest.approx(expected_explorations(n, b))
    assert abs(direct - 500) < 1.0  # integral vs sum differ by less than one pull
    rng = split_seed(11, 0, 0)
    explored = sum(rng.random() < min(1.0, b / t) for t in range(1, n + 1))
    assert abs(explored - direct) < 4 * math.sqrt(direct)


def test_eg_select_greedy_without_schedule():
    recs = [ArmRecord.from_rewards([0.2]), ArmRecord.from_rewards([0.9]), ArmRecord.from_rewards([0.5])]
    rng = np.random.default_rng(0)
    assert all(eg_select(recs, t, 0.0, rng) == 1 for t in range(1, 100))


# ---- selection


def test_select_arm_rules():
    rng = np.random.default_rng(0)
    tie = TieRule.fixed_preference(3, rng)
    assert select_arm([0.0, 0.0, 0.0], [0, 0, 0], tie, rng) == 0
    assert select_arm([0.9, 0.0, 0.0], [1, 0, 2], tie, rng) == 1
    assert select_arm([0.7, 0.3], [1, 1], TieRule.uniform(), rng) == 0
    picks = np.array([select_arm([0.5, 0.5, 0.1], [1, 1, 1], TieRule.uniform(), rng) for _ in range(100_000)])
    assert abs((picks == 0).mean() - 0.5) < 0.01 and abs((picks == 1).mean() - 0.5) < 0.01


def test_fixed_preference_two_arms():
    rng = np.random.default_rng(0)
    assert select_arm([0.0, 0.0], [1, 1], TieRule.fixed_preference(2, rng, z=1), rng) == 1
    assert select_arm([0.0, 0.0], [1, 1], TieRule.fixed_preference(2, rng, z=0), rng) == 0


# ---- policy objects


ALL = ["giro", "naive", "ucb1", "klucb", "ts", "eg", "random"]


@pytest.mark.parametrize("name", ALL)
def test_policies_are_deterministic_and_in_range(name):
    env = BanditInstance((0.2, 0.5, 0.8))
    table = env.reward_table(300, split_seed(12, 0, 0))
    kw = {"b": 3.0} if name == "eg" else {}
    runs = [play(make_policy(name, **kw), table, split_seed(12, 0, 1)) for _ in range(2)]
    assert runs[0] == runs[1]
    assert all(0 <= i < 3 for i in runs[0][0])


@pytest.mark.parametrize("cls", [Giro, NaiveBootstrap, UCB1, KLUCB, EpsilonGreedy])
def test_forced_pulls_in_index_order(cls):
    env = BanditInstance((0.1, 0.9, 0.5, 0.4))
    pulled, _ = play(cls(), env.reward_table(10, split_seed(13, 0, 0)), split_seed(13, 0, 1))
    assert pulled[:4] == [0, 1, 2, 3]


def test_values_never_requested_for_unpulled_arms():
    class Checked(Giro):
        def values(self, t):
            assert min(self.counts) > 0
            return super().values(t)

    env = BanditInstance((0.3, 0.6))
    play(Checked(), env.reward_table(200, split_seed(14, 0, 0)), split_seed(14, 0, 1))


def test_giro_handles_beta_rewards():
    env = BanditInstance((0.3, 0.7), family="beta", v=4)
    pulled, rewards = play(Giro(a=1), env.reward_table(2000, split_seed(15, 0, 0)), split_seed(15, 0, 1))
    assert np.mean(np.asarray(pulled[-500:]) == 1) > 0.8


def test_naive_bootstrap_locks_after_zero_first_reward():
    table = np.array([[0.0, 1.0]] + [[1.0, 1.0]] * 99)
    pol = NaiveBootstrap(tie="fixed")
    pol.reset(2, np.random.default_rng(0))
    pol.tie = TieRule.fixed_preference(2, None, z=1)
    for t in range(1, 101):
        i = pol.select(t)
        pol.update(i, table[t - 1, i])
    assert pol.counts == [1, 99]


def test_bad_parameters():
    with pytest.raises(ValueError):
        make_policy("nope")
    with pytest.raises(ValueError):
        Giro(a=-1)
    with pytest.raises(ValueError):
        EpsilonGreedy(b=-2)
    with pytest.raises(ValueError):
        UCB1(tie="sideways")


def test_random_policy_is_uniform():
    pol = UniformRandom()
    pol.reset(4, split_seed(16, 0, 0))
    picks = np.array([pol.select(t) for t in range(1, 40_001)])
    assert stats.chisquare(np.bincount(picks, minlength=4)).pvalue > 0.001


def test_ts_needs_no_forced_pulls():
    pol = ThompsonSampling()
    pol.reset(3, split_seed(17, 0, 0))
    assert 0 <= pol.select(1) < 3
