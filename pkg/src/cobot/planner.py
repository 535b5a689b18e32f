"""Anytime online planning with Monte-Carlo tree search over histories.

The planner follows the POMCP recipe: beliefs are multisets of state
particles, the search tree is indexed by action-observation histories, leaf
values come from random rollouts, and UCB1 balances exploration against
exploitation inside the tree.  Between executed steps the belief advances by
rejection filtering: propose a particle, simulate the executed action, keep
the successor when the simulated observation matches the real one.

Planning normally runs on a determinized twin of the environment model (exact
manipulation, no random feature transitions) while the filter keeps the full
noise, so the belief continues to represent every plausible hypothesis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from math import log, sqrt
from random import Random
from typing import Mapping, Sequence

from .model import (
    GenerativeModel,
    WorldState,
    collapse_obs,
    sample_initial,
    sample_step,
)

__all__ = [
    "Belief",
    "History",
    "SearchConfig",
    "initial_belief",
    "plan_action",
    "update_belief",
    "belief_marginals",
    "BeliefSummary",
]

log_ = logging.getLogger(__name__)

History = tuple[tuple[int, int], ...]
"""Executed (action index, observation) pairs since the episode started."""


@dataclass(frozen=True)
class Belief:
    """An unweighted particle multiset over world states.

    `depleted` records that the last update ran out of matching proposals and
    had to inject fresh consistent particles; `reset` that even consistent
    injection failed and the filter fell back to an unconstrained refill.
    """

    particles: tuple[WorldState, ...]
    depleted: bool = False
    reset: bool = False

    def __len__(self) -> int:
        return len(self.particles)


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for one planning decision and for the belief filter.

    The horizon is either a number of subtask completions (`horizon_subtasks`)
    or a number of model transitions (`horizon_transitions`); when both are
    set the transition bound wins.  `sim_depth_cap` is a safety bound so
    rollouts that never advance still terminate.
    """

    n_simulations: int = 512
    ucb_c: float = 110.0
    horizon_subtasks: int | None = 3
    horizon_transitions: int | None = None
    sim_depth_cap: int = 48
    particles: int = 256
    reinvigoration: float = 0.1
    update_attempts_factor: int = 20

    def __post_init__(self):
        if self.n_simulations < 1:
            raise ValueError("n_simulations must be >= 1")
        if self.horizon_subtasks is not None and self.horizon_subtasks < 1:
            raise ValueError("horizon_subtasks must be >= 1")
        if self.horizon_transitions is not None and self.horizon_transitions < 1:
            raise ValueError("horizon_transitions must be >= 1")
        if not 0.0 <= self.reinvigoration < 1.0:
            raise ValueError("reinvigoration fraction must lie in [0, 1)")

    def depth_cap(self) -> int:
        if self.horizon_transitions is not None:
            return self.horizon_transitions
        return self.sim_depth_cap

    def subtask_cap(self) -> int:
        if self.horizon_transitions is not None:
            return 1 << 30  # transitions bound the search instead
        return self.horizon_subtasks if self.horizon_subtasks is not None else 1 << 30


def initial_belief(
    model: GenerativeModel,
    config: SearchConfig,
    rng: Random,
    pref_prior: float | Mapping[str, float] | None = None,
) -> Belief:
    """Particle set drawn from the episode-start distribution."""
    return Belief(
        tuple(
            sample_initial(model, rng, pref_prior) for _ in range(config.particles)
        )
    )


# ---------------------------------------------------------------------------
# Search


def _rollout_candidates(
    model: GenerativeModel, state: WorldState, proven: int
) -> list[int]:
    """Actions the rollout policy samples from.

    Advances first: ungated ones always, preference-gated ones only when the
    current simulation path has already confirmed that preference (`proven`
    bitmask).  A rollout that exploited a gated advance whenever the hidden
    particle happens to allow it would credit wait-and-see branches with
    bonuses only obtainable after probing, hiding the value of
    information-gathering actions from the search.  With no advance available,
    fall back to the manipulations that are not guaranteed to fail.
    """
    leaf = model.instances[state.instance][state.pos]
    prefs = state.prefs
    out = [
        a
        for a, pi, want in leaf.advance_list
        if pi >= 0 and (proven >> pi & 1) and (prefs >> pi & 1) == want
    ]
    if out:
        return out
    out = [a for a, pi, _ in leaf.advance_list if pi < 0]
    if out:
        return out
    out = [
        a for a, pi, want in leaf.advance_list if (prefs >> pi & 1) == want
    ]
    if out:
        return out
    # No advance available: useful manipulations only (bring what some
    # remaining subtask needs, clean what none does).
    ws = state.workspace
    needed = model.suffix_needed[state.instance][state.pos]
    n_obj = len(model.objects)
    missing = needed & ~ws
    surplus = ws & ~needed
    for i in range(n_obj):
        if missing >> i & 1:
            out.append(2 + i)
        elif surplus >> i & 1:
            out.append(2 + n_obj + i)
    if not out:
        out = list(range(len(model.actions)))
    return out


def _rollout(
    model: GenerativeModel,
    state: WorldState,
    rng: Random,
    gamma: float,
    advances_left: int,
    depth_left: int,
    proven: int,
) -> float:
    total = 0.0
    discount = 1.0
    while depth_left > 0 and advances_left > 0:
        cands = _rollout_candidates(model, state, proven)
        action = cands[rng.randrange(len(cands))]
        nxt, _, reward = sample_step(model, state, action, rng)
        total += discount * reward
        discount *= gamma
        depth_left -= 1
        if nxt.pos > state.pos:
            advances_left -= 1
            gate = model.instances[state.instance][state.pos].advance.get(action)
            if gate is not None and gate[0] >= 0:
                proven |= 1 << gate[0]
        state = nxt
        if state.pos >= len(model.instances[state.instance]):
            break
    return total


class _Node:
    """One history node: per-action visit counts, mean returns, immediate
    reward sums, and observation children."""

    __slots__ = (
        "visits",
        "counts",
        "values",
        "rsums",
        "expansions",
        "children",
        "actions",
    )

    def __init__(self, actions: Sequence[int], n_actions: int):
        self.visits = 0
        self.actions = actions
        self.counts = [0] * n_actions
        self.values = [0.0] * n_actions
        self.rsums = [0.0] * n_actions
        self.expansions = [0] * n_actions
        self.children: list[dict[int, "_Node"] | None] = [None] * n_actions


def _ucb_pick(node: _Node, c: float) -> int:
    counts = node.counts
    for a in node.actions:
        if counts[a] == 0:
            return a
    values = node.values
    log_n = log(node.visits)
    best, best_score = 0, -1e300
    for a in node.actions:
        score = values[a] + c * sqrt(log_n / counts[a])
        if score > best_score:
            best, best_score = a, score
    return best


def _plan_candidates(
    model: GenerativeModel, particles: Sequence[WorldState], lookahead: int
) -> list[int]:
    """Actions worth searching this decision.

    Advance tokens of leaves within `lookahead` subtasks of any particle
    (with reachable gates), brings of objects some particle is missing but
    still needs, and clean-ups of objects some particle holds but no longer
    needs.  Dominated manipulations (bringing what no remaining subtask uses,
    cleaning what a later subtask requires) are pruned: a pruned action either
    fails and leaves the state unchanged or strictly adds cost, so it is never
    uniquely optimal.  One shared set at every node keeps value estimates
    unbiased.
    """
    n_obj = len(model.objects)
    useful: set[int] = set()
    for s in particles:
        inst = model.instances[s.instance]
        if s.pos >= len(inst):
            continue
        for leaf in inst[s.pos : s.pos + lookahead]:
            for a, pi, want in leaf.advance_list:
                if pi < 0 or (s.prefs >> pi & 1) == want:
                    useful.add(a)
        ws = s.workspace
        needed = model.suffix_needed[s.instance][s.pos]
        missing = needed & ~ws
        surplus = ws & ~needed
        for i in range(n_obj):
            if missing >> i & 1:
                useful.add(2 + i)
            elif surplus >> i & 1:
                useful.add(2 + n_obj + i)
    if not useful:
        return list(range(len(model.actions)))
    return sorted(useful)


def _simulate(
    model: GenerativeModel,
    state: WorldState,
    node: _Node,
    rng: Random,
    cfg: SearchConfig,
    gamma: float,
    advances_left: int,
    depth_left: int,
    proven: int,
) -> float:
    node.visits += 1
    action = _ucb_pick(node, cfg.ucb_c)
    nxt, obs, reward = sample_step(model, state, action, rng)
    total = reward
    advanced = nxt.pos > state.pos
    if advanced:
        gate = model.instances[state.instance][state.pos].advance.get(action)
        if gate is not None and gate[0] >= 0:
            proven |= 1 << gate[0]
    if (
        depth_left > 1
        and (advances_left - advanced) > 0
        and nxt.pos < len(model.instances[nxt.instance])
    ):
        key = collapse_obs(obs)
        children = node.children[action]
        if children is None:
            children = {}
            node.children[action] = children
        child = children.get(key)
        if child is None:
            # Expand one node per simulation; estimate its value by rollout.
            children[key] = _Node(node.actions, len(model.actions))
            node.expansions[action] += 1
            total += gamma * _rollout(
                model,
                nxt,
                rng,
                gamma,
                advances_left - advanced,
                depth_left - 1,
                proven,
            )
        else:
            total += gamma * _simulate(
                model,
                nxt,
                child,
                rng,
                cfg,
                gamma,
                advances_left - advanced,
                depth_left - 1,
                proven,
            )
    n = node.counts[action] + 1
    node.counts[action] = n
    node.values[action] += (total - node.values[action]) / n
    node.rsums[action] += reward
    return total


_GREEDY_MIN_VISITS = 16


def _greedy_value(node: _Node, gamma: float) -> float:
    """Value of the node under the greedy in-tree policy.

    The on-policy visit average systematically undervalues an arm whose
    subtree still spends visits on exploration; re-solving the built tree
    bottom-up (immediate-reward mean plus visit-weighted child values, max
    over arms) removes that bias.  Sparsely visited nodes keep their sampled
    average, which is less prone to noisy-max inflation.
    """
    best = -1e300
    for a in node.actions:
        n = node.counts[a]
        if n == 0:
            continue
        best_a = _greedy_q(node, a, gamma) if n >= _GREEDY_MIN_VISITS else node.values[a]
        if best_a > best:
            best = best_a
    return best if best > -1e300 else 0.0


def _greedy_q(node: _Node, action: int, gamma: float) -> float:
    n = node.counts[action]
    q = node.rsums[action] / n
    children = node.children[action]
    if children:
        # Expansion simulations end in a rollout rather than a child visit;
        # excluding them keeps the branch weights unbiased.
        denom = max(n - node.expansions[action], 1)
        for child in children.values():
            if child.visits > 0:
                q += gamma * (child.visits / denom) * _greedy_value(child, gamma)
    return q


def plan_action(
    model: GenerativeModel,
    belief: Belief,
    config: SearchConfig,
    rng: Random,
    diagnostics: dict | None = None,
) -> int:
    """Pick the next action by Monte-Carlo tree search from the belief.

    Each simulation draws a particle, descends the history tree under UCB1,
    expands one node, continues with the rollout policy to the horizon, and
    backs up discounted returns.  The final choice maximizes the root value
    under the greedy re-solve of the built tree; ties break toward the lowest
    action index so runs are reproducible.
    """
    particles = belief.particles
    if not particles:
        raise ValueError("cannot plan from an empty belief")
    n_particles = len(particles)
    gamma = model.gamma
    depth = config.depth_cap()
    subtasks = config.subtask_cap()
    lookahead = min(subtasks, max(len(inst) for inst in model.instances))
    root = _Node(_plan_candidates(model, particles, lookahead), len(model.actions))
    # Preferences the belief is already certain about carry no information
    # value, so rollouts may exploit them from the start.
    proven0 = 0
    for pi in range(len(model.preferences)):
        mask = 1 << pi
        count = sum(1 for s in particles if s.prefs & mask)
        if count == 0 or count == n_particles:
            proven0 |= mask
    # Stratified particle draws: one shuffled pass per cycle instead of iid
    # draws keeps each root arm's estimate averaged evenly over the belief.
    order = list(range(n_particles))
    rng.shuffle(order)
    for i in range(config.n_simulations):
        state = particles[order[i % n_particles]]
        if state.pos >= len(model.instances[state.instance]):
            continue  # believed-done hypotheses contribute nothing to act values
        _simulate(model, state, root, rng, config, gamma, subtasks, depth, proven0)

    best, best_value = 0, -1e300
    final_values = [0.0] * len(model.actions)
    for a, n in enumerate(root.counts):
        if n == 0:
            continue
        q = _greedy_q(root, a, gamma) if n >= _GREEDY_MIN_VISITS else root.values[a]
        final_values[a] = q
        if q > best_value:
            best, best_value = a, q
    if diagnostics is not None:
        diagnostics["simulations"] = config.n_simulations
        diagnostics["root_visits"] = list(root.counts)
        diagnostics["root_values"] = [round(v, 4) for v in final_values]
    return best


# ---------------------------------------------------------------------------
# Belief update


def _propose_matches(
    model: GenerativeModel,
    state: WorldState,
    action: int,
    target: int,
    rng: Random,
) -> WorldState | None:
    nxt, obs, _ = sample_step(model, state, action, rng)
    return nxt if collapse_obs(obs) == target else None


def update_belief(
    model: GenerativeModel,
    belief: Belief,
    action: int,
    obs: int,
    config: SearchConfig,
    rng: Random,
) -> Belief:
    """Condition the particle set on one executed (action, observation) pair.

    Rejection filter: draw a particle, simulate the action under `model`
    (normally the full-noise environment twin), keep the successor when the
    collapsed observation matches.  If the attempt budget runs out, fresh
    particles consistent with the observation are drawn from the episode-start
    distribution to fill the gap (at least the configured reinvigoration
    fraction of the set); their preferences are drawn from the incoming
    belief's own marginals, so reinvigoration diversifies progression and
    workspace hypotheses without forgetting what the filter has already
    learned about the human.  If even that finds nothing the observation is
    inconsistent with the model; the filter logs a belief reset and refills
    unconstrained.
    """
    particles = belief.particles
    if not particles:
        raise ValueError("cannot update an empty belief")
    n = config.particles
    target = collapse_obs(obs)
    budget = config.update_attempts_factor * n
    n_src = len(particles)

    # Proposals cycle the particle list round-robin rather than drawing at
    # random: acceptance stays proportional to per-particle likelihood, but an
    # uninformative observation (everything accepted) becomes a pass-through
    # instead of injecting resampling noise into the marginals.
    accepted: list[WorldState] = []
    attempts = 0
    cursor = 0
    while attempts < budget and len(accepted) < n:
        attempts += 1
        src = particles[cursor % n_src]
        cursor += 1
        if src.pos >= len(model.instances[src.instance]):
            continue  # a done hypothesis is inconsistent with a new action
        nxt = _propose_matches(model, src, action, target, rng)
        if nxt is not None:
            accepted.append(nxt)

    if len(accepted) == n:
        return Belief(tuple(accepted))

    # Depleted: inject fresh consistent particles drawn from the start
    # distribution (preferences from the current belief) and pushed through
    # the executed action.
    pref_marginals = [
        sum(1 for s in particles if s.prefs >> i & 1) / n_src
        for i in range(len(model.preferences))
    ]
    fresh_dist = {p: pref_marginals[i] for i, p in enumerate(model.preferences)}
    min_fresh = int(config.reinvigoration * n) + 1 if accepted else n
    fresh_target = max(n - len(accepted), min_fresh)
    keep = accepted[: n - fresh_target]
    fresh: list[WorldState] = []
    fresh_budget = config.update_attempts_factor * fresh_target
    attempts = 0
    while attempts < fresh_budget and len(fresh) < fresh_target:
        attempts += 1
        src = sample_initial(model, rng, fresh_dist)
        nxt = _propose_matches(model, src, action, target, rng)
        if nxt is not None:
            fresh.append(nxt)

    if fresh or keep:
        merged = list(keep) + fresh
        # Top up by resampling what we have; sizes stay at the configured N.
        while len(merged) < n:
            merged.append(merged[rng.randrange(len(merged))])
        return Belief(tuple(merged), depleted=True)

    # The observation is impossible under the filter model: belief reset.
    log_.warning(
        "belief reset: observation %d inconsistent with action %d under the filter model",
        obs,
        action,
    )
    refill = []
    while len(refill) < n:
        src = sample_initial(model, rng, fresh_dist)
        nxt, _, _ = sample_step(model, src, action, rng)
        refill.append(nxt)
    return Belief(tuple(refill), depleted=True, reset=True)


# ---------------------------------------------------------------------------
# Marginals


@dataclass(frozen=True)
class BeliefSummary:
    """Per-feature marginals of a particle set."""

    pref_probs: dict[str, float]
    object_probs: dict[str, float]
    position_dist: dict[tuple[int, int], float]
    map_position: tuple[int, int]
    terminal_prob: float

    def map_leaf_name(self, model: GenerativeModel) -> str | None:
        inst, pos = self.map_position
        if pos >= len(model.instances[inst]):
            return None
        return model.instances[inst][pos].name


def belief_marginals(model: GenerativeModel, belief: Belief) -> BeliefSummary:
    """Particle-fraction marginals: preference and object-presence
    probabilities plus the distribution over (instance, position)."""
    particles = belief.particles
    if not particles:
        raise ValueError("cannot summarize an empty belief")
    n = len(particles)
    pref_counts = [0] * len(model.preferences)
    obj_counts = [0] * len(model.objects)
    pos_counts: dict[tuple[int, int], int] = {}
    terminal = 0
    for s in particles:
        for i in range(len(pref_counts)):
            if s.prefs >> i & 1:
                pref_counts[i] += 1
        for i in range(len(obj_counts)):
            if s.workspace >> i & 1:
                obj_counts[i] += 1
        key = (s.instance, s.pos)
        pos_counts[key] = pos_counts.get(key, 0) + 1
        if s.pos >= len(model.instances[s.instance]):
            terminal += 1
    map_position = max(sorted(pos_counts), key=lambda k: pos_counts[k])
    return BeliefSummary(
        pref_probs={
            p: pref_counts[i] / n for i, p in enumerate(model.preferences)
        },
        object_probs={o.id: obj_counts[i] / n for i, o in enumerate(model.objects)},
        position_dist={k: v / n for k, v in sorted(pos_counts.items())},
        map_position=map_position,
        terminal_prob=terminal / n,
    )
