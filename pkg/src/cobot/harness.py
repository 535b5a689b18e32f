"""Episode runner, batch statistics, and the two offline experiments.

Episodes are fully reproducible: one integer seed derives independent streams
for the environment and the policy, so re-running a record's seed reproduces
it exactly, regardless of batch ordering or worker count.

The simulated human is entirely the compiled model's dynamics (gated holds
fail, waits complete subtasks); the harness adds nothing beyond the step
budget.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from random import Random
from typing import Callable, Mapping, Sequence

import numpy as np

from .baselines import FixedSupportPolicy, RandomSupportPolicy, RepeatPolicy
from .model import (
    GenerativeModel,
    NoiseConfig,
    is_terminal,
    obs_label,
    sample_initial,
    sample_step,
)
from .planner import (
    Belief,
    SearchConfig,
    belief_marginals,
    initial_belief,
    plan_action,
    update_belief,
)

__all__ = [
    "EnvConfig",
    "TraceStep",
    "EpisodeRecord",
    "BatchStats",
    "SweepCell",
    "PomcpPolicy",
    "POLICY_IDS",
    "make_policy",
    "default_max_steps",
    "run_episode",
    "run_batch",
    "preference_sweep",
    "write_episode_csv",
    "write_sweep_csv",
    "write_trace_log",
]

POLICY_IDS = ("pomcp", "random", "repeat", "always-hold", "never-hold")

# Step budget per episode, as a multiple of the model's micro-leaf count.
# Sized so that a policy stuck repeating a failing action diverges the way the
# offline comparisons expect, while completed episodes end long before it.
MAX_STEPS_FACTOR = 16


@dataclass(frozen=True)
class EnvConfig:
    """Environment-side knobs for simulated episodes."""

    noise: NoiseConfig = field(default_factory=NoiseConfig.environment)
    pref_prior: float | Mapping[str, float] = 0.5
    max_steps: int | None = None


def default_max_steps(model: GenerativeModel) -> int:
    return MAX_STEPS_FACTOR * max(model.tree_micro_leaves, 1)


@dataclass(frozen=True)
class TraceStep:
    action: str
    obs: str
    reward: float
    marginals: dict[str, float] | None = None


@dataclass(frozen=True)
class EpisodeRecord:
    seed: int
    trace: tuple[TraceStep, ...]
    total_return: float
    steps: int
    terminated: bool


@dataclass(frozen=True)
class BatchStats:
    """Return distribution over a batch of seeded episodes."""

    policy: str
    returns: tuple[float, ...]
    steps: tuple[int, ...]
    terminated: tuple[bool, ...]
    seeds: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.returns)

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.std(self.returns, ddof=1))

    def quantiles(self) -> dict[str, float]:
        q = np.quantile(self.returns, [0.0, 0.25, 0.5, 0.75, 1.0])
        return {
            "min": float(q[0]),
            "q25": float(q[1]),
            "median": float(q[2]),
            "q75": float(q[3]),
            "max": float(q[4]),
        }


@dataclass(frozen=True)
class SweepCell:
    strategy: str
    p_hold: float
    n: int
    mean_return: float
    std_return: float


class PomcpPolicy:
    """The planner behind the scripted-policy protocol.

    Plans on a determinized twin of the environment model and filters the
    belief with the full-noise twin, re-planning after every executed step.
    """

    def __init__(
        self,
        model: GenerativeModel,
        search: SearchConfig | None = None,
        env_noise: NoiseConfig | None = None,
        pref_prior: float | Mapping[str, float] | None = None,
    ):
        self.search = search if search is not None else SearchConfig()
        self.plan_model = model.determinized()
        self.filter_model = (
            model.with_noise(env_noise) if env_noise is not None else model
        )
        self.pref_prior = pref_prior
        self.rng: Random = Random(0)
        self.belief: Belief = Belief(())

    def reset(self, rng: Random) -> None:
        self.rng = rng
        self.belief = initial_belief(
            self.filter_model, self.search, rng, self.pref_prior
        )

    def act(self) -> int:
        return plan_action(self.plan_model, self.belief, self.search, self.rng)

    def observe(self, action: int, obs: int) -> None:
        self.belief = update_belief(
            self.filter_model, self.belief, action, obs, self.search, self.rng
        )

    def summary(self) -> dict[str, float] | None:
        if not self.belief.particles:
            return None
        probs = belief_marginals(self.filter_model, self.belief).pref_probs
        return {k: round(v, 4) for k, v in probs.items()}


def make_policy(
    policy_id: str,
    model: GenerativeModel,
    env: EnvConfig | None = None,
    search: SearchConfig | None = None,
):
    """Instantiate a policy by its CLI identifier."""
    env = env if env is not None else EnvConfig()
    if policy_id == "pomcp":
        return PomcpPolicy(model, search, env.noise, env.pref_prior)
    if policy_id == "random":
        return RandomSupportPolicy(model)
    if policy_id == "repeat":
        return RepeatPolicy(model)
    if policy_id in (FixedSupportPolicy.ALWAYS_HOLD, FixedSupportPolicy.NEVER_HOLD):
        return FixedSupportPolicy(model, policy_id)
    raise ValueError(f"unknown policy {policy_id!r}; choose from {POLICY_IDS}")


def run_episode(
    model: GenerativeModel,
    policy,
    env: EnvConfig | None = None,
    seed: int = 0,
    keep_trace: bool = True,
) -> EpisodeRecord:
    """Step the environment with the policy until terminal or the step budget.

    The policy only ever sees its own actions and the observations; rewards
    and the hidden state stay on the environment side of the fence.
    """
    env = env if env is not None else EnvConfig()
    env_model = model.with_noise(env.noise)
    root = Random(seed)
    env_rng = Random(root.getrandbits(64))
    policy_rng = Random(root.getrandbits(64))
    state = sample_initial(env_model, env_rng, env.pref_prior)
    policy.reset(policy_rng)
    max_steps = env.max_steps if env.max_steps is not None else default_max_steps(model)

    n_actions = len(model.actions)
    trace: list[TraceStep] = []
    total = 0.0
    steps = 0
    terminated = False
    while steps < max_steps:
        action = policy.act()
        if not 0 <= action < n_actions:
            raise ValueError(
                f"policy emitted action {action} outside the model universe"
            )
        state, obs, reward = sample_step(env_model, state, action, env_rng)
        policy.observe(action, obs)
        total += reward
        steps += 1
        if keep_trace:
            trace.append(
                TraceStep(
                    action=model.action_label(action),
                    obs=obs_label(obs, with_kind=True),
                    reward=reward,
                    marginals=policy.summary(),
                )
            )
        if is_terminal(env_model, state):
            terminated = True
            break
    return EpisodeRecord(
        seed=seed,
        trace=tuple(trace),
        total_return=total,
        steps=steps,
        terminated=terminated,
    )


def episode_seed(base_seed: int, index: int) -> int:
    return base_seed * 1_000_003 + index


_WORKER_CTX: dict = {}


def _pool_init(model, policy, env, keep_trace):
    _WORKER_CTX["args"] = (model, policy, env, keep_trace)


def _pool_run(seed: int) -> EpisodeRecord:
    model, policy, env, keep_trace = _WORKER_CTX["args"]
    return run_episode(model, policy, env, seed, keep_trace)


def run_batch(
    model: GenerativeModel,
    policy,
    n: int,
    env: EnvConfig | None = None,
    base_seed: int = 0,
    jobs: int = 1,
    keep_trace: bool = False,
    policy_id: str = "",
) -> tuple[BatchStats, list[EpisodeRecord]]:
    """Run `n` independently seeded episodes and aggregate their returns.

    Episode i always runs with `episode_seed(base_seed, i)`, so results do not
    depend on `jobs` or on execution order.
    """
    env = env if env is not None else EnvConfig()
    seeds = [episode_seed(base_seed, i) for i in range(n)]
    if jobs > 1 and n > 1:
        with Pool(
            processes=jobs,
            initializer=_pool_init,
            initargs=(model, policy, env, keep_trace),
        ) as pool:
            records = pool.map(_pool_run, seeds)
    else:
        records = [run_episode(model, policy, env, s, keep_trace) for s in seeds]
    stats = BatchStats(
        policy=policy_id or type(policy).__name__,
        returns=tuple(r.total_return for r in records),
        steps=tuple(r.steps for r in records),
        terminated=tuple(r.terminated for r in records),
        seeds=tuple(seeds),
    )
    return stats, records


def preference_sweep(
    model: GenerativeModel,
    strategies: Sequence[str],
    p_grid: Sequence[float],
    n_per_point: int,
    env: EnvConfig | None = None,
    search: SearchConfig | None = None,
    base_seed: int = 0,
    jobs: int = 1,
) -> list[SweepCell]:
    """Mean return of each strategy across hold-preference priors.

    Every cell reuses the same base seed, so the environment draws (including
    the sampled preference) are paired across strategies at a given prior.
    """
    env = env if env is not None else EnvConfig()
    cells: list[SweepCell] = []
    for p in p_grid:
        cell_env = replace(env, pref_prior=float(p))
        for strategy in strategies:
            policy = make_policy(strategy, model, cell_env, search)
            stats, _ = run_batch(
                model,
                policy,
                n_per_point,
                cell_env,
                base_seed,
                jobs,
                policy_id=strategy,
            )
            cells.append(
                SweepCell(
                    strategy=strategy,
                    p_hold=float(p),
                    n=stats.n,
                    mean_return=stats.mean,
                    std_return=stats.std,
                )
            )
    return cells


# ---------------------------------------------------------------------------
# CSV / trace emission (column orders are frozen; tests pin them)

EPISODE_CSV_COLUMNS = ("episode", "seed", "policy", "return", "steps", "terminated")
SWEEP_CSV_COLUMNS = ("strategy", "p_hold", "episodes", "mean_return", "std_return")


def write_episode_csv(path: str, stats: BatchStats) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_CSV_COLUMNS)
        for i in range(stats.n):
            w.writerow(
                [
                    i,
                    stats.seeds[i],
                    stats.policy,
                    f"{stats.returns[i]:.6f}",
                    stats.steps[i],
                    int(stats.terminated[i]),
                ]
            )


def write_sweep_csv(path: str, cells: Sequence[SweepCell]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_CSV_COLUMNS)
        for c in cells:
            w.writerow(
                [
                    c.strategy,
                    f"{c.p_hold:.6f}",
                    c.n,
                    f"{c.mean_return:.6f}",
                    f"{c.std_return:.6f}",
                ]
            )


def write_trace_log(path: str, records: Sequence[EpisodeRecord]) -> None:
    """Line-delimited JSON, one record per executed step."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, rec in enumerate(records):
            for t, step in enumerate(rec.trace):
                fh.write(
                    json.dumps(
                        {
                            "episode": i,
                            "seed": rec.seed,
                            "step": t,
                            "action": step.action,
                            "obs": step.obs,
                            "reward": step.reward,
                            "marginals": step.marginals,
                        },
                        sort_keys=True,
                    )
                )
                fh.write("\n")
