"""Seeded multi-run experiments, aggregation and CSV output.

Every run r derives its streams with ``split_seed(master, r, tag)``:
the environment (means, contexts, rewards) comes from the ``MEANS`` and
``REWARDS`` tags, and policy j draws from ``POLICY + j``. All policies of
a run therefore face one reward table (common random numbers) unless
independent draws are requested, in which case policy j reads its own
table from ``INDEPENDENT + j``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .analysis import BoundReport, lemma1_lower_bound
from .config import CLASSIFICATION_ENV, ConfigError, ExperimentConfig
from .contextual import ClassificationBanditEnv, LogisticBanditEnv, Oracle
from .core import BanditInstance, ConsistencyError, RunLog, split_seed, uniform_means
from .policies import NaiveBootstrap

TAG_MEANS = 1
TAG_REWARDS = 2
TAG_POLICY = 100
TAG_INDEPENDENT = 1000

REGRET = "regret"
REWARD = "reward"


@dataclass
class ExperimentResult:
    labels: list[str]
    logs: list[list[RunLog]]  # logs[policy][run]
    metric: str

    def curve(self) -> "AggregateCurve":
        return aggregate(self.logs, self.labels, self.metric)

    def final(self, label: str) -> np.ndarray:
        """Final cumulative regret (or mean reward) of every run."""
        runs = self.logs[self.labels.index(label)]
        return np.array([_metric(log, self.metric)[-1] for log in runs])


@dataclass
class AggregateCurve:
    labels: list[str]
    mean: np.ndarray  # (policies, n)
    stderr: np.ndarray
    runs: int
    metric: str


def unique_labels(labels: Sequence[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for lab in labels:
        seen[lab] = seen.get(lab, 0) + 1
        out.append(lab if seen[lab] == 1 else f"{lab}#{seen[lab]}")
    return out


# ---------------------------------------------------------------------------
# runs


def _bandit_for_run(config: ExperimentConfig, run: int) -> BanditInstance:
    rule = config.mean_rule()
    if rule[0] == "uniform":
        seed_run = run if config.redraw == "per-run" else 0
        means = uniform_means(config.K, rule[1], rule[2], split_seed(config.master_seed, seed_run, TAG_MEANS))
    else:
        means = rule
    return BanditInstance(means, config.family, config.v)


def play(policy, table: np.ndarray, rng) -> tuple[list[int], list[float]]:
    """Run a multi-armed policy against a fixed reward table."""
    n, K = table.shape
    policy.reset(K, rng)
    rows = table.tolist()
    pulled, rewards = [], []
    for t in range(1, n + 1):
        i = policy.select(t)
        y = rows[t - 1][i]
        policy.update(i, y)
        pulled.append(i)
        rewards.append(y)
    return pulled, rewards


def run_mab(config: ExperimentConfig, run: int, observer: Callable | None = None) -> list[RunLog]:
    env = _bandit_for_run(config, run)
    shared = env.reward_table(config.n, split_seed(config.master_seed, run, TAG_REWARDS))
    logs = []
    for j, spec in enumerate(config.policies):
        policy = spec.build(config.n)
        if config.independent_draws:
            table = env.reward_table(config.n, split_seed(config.master_seed, run, TAG_INDEPENDENT + j))
        else:
            table = shared
        if observer is not None:
            observer(run, j, policy)
        pulled, rewards = play(policy, table, split_seed(config.master_seed, run, TAG_POLICY + j))
        logs.append(RunLog.from_pulls(pulled, rewards, env.gaps))
    return logs


def _contextual_draw(env, config: ExperimentConfig, run: int, tag: int):
    rng = split_seed(config.master_seed, run, tag)
    if isinstance(env, ClassificationBanditEnv):
        return env.shuffled(rng).draw(config.n)
    return env.draw(config.n, rng)


def play_contextual(policy, X, Y, P, d: int, rng) -> RunLog:
    n, K = Y.shape
    policy.reset(K, d, rng)
    if isinstance(policy, Oracle):
        policy.table = P
    pulled = np.empty(n, dtype=np.int64)
    for t in range(1, n + 1):
        x = X[t - 1]
        i = policy.select(x, t)
        pulled[t - 1] = i
        policy.update(i, x, Y[t - 1, i])
    rows = np.arange(n)
    regret = np.cumsum(P.max(axis=1) - P[rows, pulled])
    return RunLog(pulled, Y[rows, pulled], regret)


def contextual_env(config: ExperimentConfig, env=None):
    if env is not None:
        return env
    if config.family == CLASSIFICATION_ENV:
        if config.data is None:
            raise ConfigError("classification environment needs a data file")
        from .contextual import load_classification_env
        return load_classification_env(config.data, config.shuffle_seed)
    return LogisticBanditEnv(config.theta_matrix())


def run_contextual(config: ExperimentConfig, run: int, env=None,
                   observer: Callable | None = None) -> list[RunLog]:
    env = contextual_env(config, env)
    shared = _contextual_draw(env, config, run, TAG_REWARDS)
    logs = []
    for j, spec in enumerate(config.policies):
        policy = spec.build_contextual(config.n)
        draw = (_contextual_draw(env, config, run, TAG_INDEPENDENT + j)
                if config.independent_draws else shared)
        if observer is not None:
            observer(run, j, policy)
        logs.append(play_contextual(policy, *draw, env.d,
                                    split_seed(config.master_seed, run, TAG_POLICY + j)))
    return logs


def _run_one(args):
    config, run, env = args
    if config.mode == "contextual":
        return run_contextual(config, run, env)
    return run_mab(config, run)


def run_experiment(config: ExperimentConfig, env=None, observer: Callable | None = None,
                   workers: int | None = None) -> ExperimentResult:
    """All runs of a mab or contextual experiment.

    Policies are built once up front so bad parameters fail before round 1.
    ``observer(run, j, policy)`` sees each policy before it plays; it forces
    sequential execution.
    """
    config.validate()
    if config.mode not in ("mab", "contextual"):
        raise ConfigError(f"run_experiment handles mab and contextual modes, not {config.mode!r}")
    contextual = config.mode == "contextual"
    if contextual:
        env = contextual_env(config, env)
        probes = [spec.build_contextual(config.n) for spec in config.policies]
    else:
        probes = [spec.build(config.n) for spec in config.policies]
    labels = unique_labels([p.label for p in probes])

    workers = config.workers if workers is None else workers
    if observer is not None or workers == 1 or config.runs == 1:
        if contextual:
            per_run = [run_contextual(config, r, env, observer) for r in range(config.runs)]
        else:
            per_run = [run_mab(config, r, observer) for r in range(config.runs)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map keeps run order, so the merge is deterministic
            per_run = list(pool.map(_run_one, [(config, r, env) for r in range(config.runs)]))
    logs = [[per_run[r][j] for r in range(config.runs)] for j in range(len(labels))]
    return ExperimentResult(labels, logs, REWARD if contextual else REGRET)


# ---------------------------------------------------------------------------
# naive bootstrap lock-in


@dataclass
class Lemma1Result:
    mu1: float
    mu2: float
    n: int
    runs: int
    lock_count: int
    mean_regret: float
    regret_stderr: float
    lower_bound: float
    final_regret: np.ndarray = field(repr=False)

    @property
    def lock_frequency(self) -> float:
        return self.lock_count / self.runs

    @property
    def expected_lock_frequency(self) -> float:
        return 0.5 * (1.0 - self.mu1)


def _lemma1_run(args) -> tuple[bool, float]:
    mu1, mu2, n, master, run = args
    env = BanditInstance((mu1, mu2))
    table = env.reward_table(n, split_seed(master, run, TAG_REWARDS))
    policy = NaiveBootstrap(tie="fixed")
    pulled, _ = play(policy, table, split_seed(master, run, TAG_POLICY))
    # arm 1 (index 0) is pulled in round 1, so its history is table[0, 0]
    locked = policy.tie.z == 1 and table[0, 0] == 0.0
    if locked and policy.counts[0] != 1:
        raise ConsistencyError(f"run {run}: lock event occurred but arm 1 was pulled again")
    return locked, float(np.sum(env.gaps[np.asarray(pulled)]))


def lemma1_experiment(mu1: float, mu2: float, n: int, runs: int, master_seed: int,
                      workers: int = 1) -> Lemma1Result:
    """Naive bootstrap with a fixed random tie rule on a two-armed Bernoulli bandit."""
    if not 0.0 <= mu2 < mu1 <= 1.0:
        raise ValueError(f"need 0 <= mu2 < mu1 <= 1, got mu1={mu1}, mu2={mu2}")
    if n < 2 or runs < 1:
        raise ValueError("need n >= 2 and runs >= 1")
    jobs = [(mu1, mu2, n, master_seed, r) for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_lemma1_run, jobs, chunksize=max(1, runs // (8 * workers))))
    else:
        out = [_lemma1_run(j) for j in jobs]
    locks = sum(lock for lock, _ in out)
    final = np.array([reg for _, reg in out])
    se = float(final.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0
    return Lemma1Result(mu1, mu2, n, runs, int(locks), float(final.mean()), se,
                        lemma1_lower_bound(mu1, mu1 - mu2, n), final)


# ---------------------------------------------------------------------------
# aggregation and CSV


def _metric(log: RunLog, metric: str) -> np.ndarray:
    return log.regret if metric == REGRET else log.mean_reward_curve()


def aggregate(logs: Sequence[Sequence[RunLog]], labels: Sequence[str], metric: str = REGRET) -> AggregateCurve:
    """Per-round mean and standard error across runs, for each policy.

    Values are sorted across runs before reducing, so the result does not
    depend on run order.
    """
    if len(logs) != len(labels):
        raise ConsistencyError("one label per policy required")
    runs = {len(per) for per in logs}
    if len(runs) != 1 or 0 in runs:
        raise ConsistencyError("every policy needs the same, non-zero number of runs")
    (R,) = runs
    lengths = {len(log) for per in logs for log in per}
    if len(lengths) != 1:
        raise ConsistencyError(f"runs differ in length: {sorted(lengths)}")
    means, ses = [], []
    for per in logs:
        vals = np.sort(np.stack([_metric(log, metric) for log in per]), axis=0)
        means.append(vals.mean(axis=0))
        ses.append(vals.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(vals.shape[1]))
    return AggregateCurve(list(labels), np.array(means), np.array(ses), R, metric)


def _g9(x: float) -> str:
    s = format(float(x), ".9g")
    return "0" if s == "-0" else s


def curve_csv(curve: AggregateCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "policy", "mean", "stderr"])
    n = curve.mean.shape[1]
    for t in range(n):
        for j, lab in enumerate(curve.labels):
            w.writerow([t + 1, lab, _g9(curve.mean[j, t]), _g9(curve.stderr[j, t])])
    return buf.getvalue()


def emit_csv(curve: AggregateCurve, path) -> None:
    _write(path, curve_csv(curve))


def bound_check_name(report: BoundReport) -> str:
    extra = [f"{k}={report.params[k]}" for k in ("x", "p2") if k in report.params]
    return ":".join([report.check, *extra])


def bounds_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "n", "p", "a", "lhs", "rhs", "slack", "pass"])
    for r in reports:
        w.writerow([bound_check_name(r), r.params.get("n", ""), r.params.get("p", ""),
                    r.params.get("a", ""), repr(float(r.lhs)), repr(float(r.rhs)),
                    repr(float(r.slack)), "true" if r.passed else "false"])
    return buf.getvalue()


def _write(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")
