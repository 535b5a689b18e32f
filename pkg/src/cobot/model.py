"""Compile a task model into a factored generative POMDP.

States factor into task progression (a position in one linearized subtask
sequence, hidden-instance index included), the set of objects on the
workspace, and the human's boolean preferences.  The model is generative: it
never materializes transition matrices, it only samples (next state,
observation, reward) for a (state, action) pair.

Hot-path representation: workspace and preferences are bitmasks, actions are
indices into a fixed universe, so a sampled step is a handful of integer ops.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from random import Random
from typing import Mapping, NamedTuple, Sequence

from .htm import Htm, HtmError, LeafSpec, ObjectDef, linearize, micro_leaf_count

__all__ = [
    "OBS_NONE",
    "OBS_FAIL_ROBOT",
    "OBS_FAIL_WRONG",
    "collapse_obs",
    "obs_label",
    "WorldState",
    "ActionToken",
    "RewardParams",
    "NoiseConfig",
    "GenerativeModel",
    "compile_model",
    "sample_initial",
    "sample_step",
    "is_terminal",
]

# Observations.  Planning collapses both failure kinds into one symbol; the
# kind survives only in traces and logs.
OBS_NONE = 0
OBS_FAIL_ROBOT = 1
OBS_FAIL_WRONG = 2

_OBS_LABELS = ("none", "fail", "fail")
_OBS_KINDS = ("", "robot-error", "wrong-action")


def collapse_obs(obs: int) -> int:
    """Map an observation to the planning alphabet {none=0, fail=1}."""
    return 0 if obs == OBS_NONE else 1


def obs_label(obs: int, with_kind: bool = False) -> str:
    if with_kind and obs != OBS_NONE:
        return f"{_OBS_LABELS[obs]}({_OBS_KINDS[obs]})"
    return _OBS_LABELS[obs]


class WorldState(NamedTuple):
    """Factored state: hidden instance index, progression, workspace, prefs.

    `workspace` and `prefs` are bitmasks over the model's object/preference
    universes; `pos == len(instance)` encodes the terminal state.
    """

    instance: int
    pos: int
    workspace: int
    prefs: int


# Action kinds.
A_WAIT = 0
A_HOLD = 1
A_BRING = 2
A_CLEANUP = 3
A_CUSTOM = 4


@dataclass(frozen=True)
class ActionToken:
    kind: int
    arg: int  # object index for bring/cleanup, token index for custom, -1 otherwise
    label: str


@dataclass(frozen=True)
class RewardParams:
    """Event-based rewards; events stack within a single step."""

    final_reached: float = 100.0
    subtask_transition: float = 10.0
    missing_object: float = -15.0
    uncleaned_object: float = -15.0
    preference_honored: float = 10.0
    cost_hold: float = -2.0
    cost_wait: float = 0.0
    cost_other: float = -1.0


@dataclass(frozen=True)
class NoiseConfig:
    """Stochasticity knobs.

    `eps_object` toggles each workspace bit independently per step,
    `eps_pref` flips each preference, and `manipulation_success` is the
    chance a bring/clean-up physically succeeds.
    """

    eps_object: float = 0.0
    eps_pref: float = 0.0
    manipulation_success: float = 1.0

    @staticmethod
    def exact() -> "NoiseConfig":
        return NoiseConfig(0.0, 0.0, 1.0)

    @staticmethod
    def environment() -> "NoiseConfig":
        return NoiseConfig(eps_object=0.01, eps_pref=0.0, manipulation_success=0.95)


@dataclass(frozen=True)
class _CompiledLeaf:
    name: str
    # action index -> (pref index or -1, wanted value); -1 means ungated
    advance: Mapping[int, tuple[int, bool]]
    advance_list: tuple[tuple[int, int, bool], ...]
    required_mask: int
    consumed_mask: int
    penalty_mask: int  # required | consumed


@dataclass(frozen=True)
class GenerativeModel:
    """The compiled planning problem: universes, dynamics knobs, rewards.

    `suffix_needed[i][p]` is the union of required/consumed masks of instance
    i's leaves from position p on; an object outside it can only cost from
    there to the end (bringing it wastes a step and risks the uncleaned
    penalty, cleaning an object inside it forces a re-bring or a missing
    penalty), which is what lets planning prune dominated manipulations.
    """

    instances: tuple[tuple[_CompiledLeaf, ...], ...]
    objects: tuple[ObjectDef, ...]
    preferences: tuple[str, ...]
    actions: tuple[ActionToken, ...]
    suffix_needed: tuple[tuple[int, ...], ...] = ()
    gamma: float = 0.95
    noise: NoiseConfig = field(default_factory=NoiseConfig.exact)
    rewards: RewardParams = field(default_factory=RewardParams)
    pref_prior: tuple[float, ...] = ()
    tree_micro_leaves: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for p in (self.noise.eps_object, self.noise.eps_pref, self.noise.manipulation_success):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    # -- universe lookups ---------------------------------------------------

    def action_index(self, label: str) -> int:
        for i, a in enumerate(self.actions):
            if a.label == label:
                return i
        raise KeyError(f"unknown action {label!r}")

    def action_label(self, index: int) -> str:
        return self.actions[index].label

    def object_index(self, oid: str) -> int:
        for i, o in enumerate(self.objects):
            if o.id == oid:
                return i
        raise KeyError(f"unknown object {oid!r}")

    def pref_index(self, pid: str) -> int:
        return self.preferences.index(pid)

    def instance_length(self, instance: int) -> int:
        return len(self.instances[instance])

    def leaf_at(self, state: WorldState) -> _CompiledLeaf:
        return self.instances[state.instance][state.pos]

    def workspace_ids(self, state: WorldState) -> tuple[str, ...]:
        return tuple(
            o.id for i, o in enumerate(self.objects) if state.workspace >> i & 1
        )

    def prefs_map(self, state: WorldState) -> dict[str, bool]:
        return {
            p: bool(state.prefs >> i & 1) for i, p in enumerate(self.preferences)
        }

    @property
    def n_state_features(self) -> int:
        """Progression + one presence bit per object + one bit per preference."""
        return 1 + len(self.objects) + len(self.preferences)

    @property
    def n_states(self) -> int:
        per_config = (1 << len(self.objects)) * (1 << len(self.preferences))
        return sum((len(inst) + 1) * per_config for inst in self.instances)

    # -- derived variants ---------------------------------------------------

    def determinized(self) -> "GenerativeModel":
        """Copy with exact manipulation and no random feature transitions.

        Planning searches this simplified twin; belief updates keep the full
        noise so unlikely-but-possible hypotheses survive.
        """
        return replace(self, noise=NoiseConfig.exact())

    def with_noise(self, noise: NoiseConfig) -> "GenerativeModel":
        return replace(self, noise=noise)

    def with_pref_prior(self, prior: float | Mapping[str, float]) -> "GenerativeModel":
        return replace(self, pref_prior=_prior_tuple(self.preferences, prior))

    def with_rewards(self, rewards: RewardParams) -> "GenerativeModel":
        return replace(self, rewards=rewards)


def _prior_tuple(
    preferences: Sequence[str], prior: float | Mapping[str, float] | None
) -> tuple[float, ...]:
    if prior is None:
        return tuple(0.5 for _ in preferences)
    if isinstance(prior, (int, float)):
        return tuple(float(prior) for _ in preferences)
    return tuple(float(prior.get(p, 0.5)) for p in preferences)


def compile_model(
    htm: Htm,
    *,
    gamma: float = 0.95,
    noise: NoiseConfig | None = None,
    rewards: RewardParams | None = None,
    pref_prior: float | Mapping[str, float] | None = None,
    interleaving_cap: int = 64,
) -> GenerativeModel:
    """Build the generative POMDP for a validated task model.

    The action universe is fixed at compile time: wait, hold, one bring and
    one clean-up per declared object, plus every custom token, in declaration
    order.  Each linearized instance becomes one hidden task hypothesis.
    """
    instances = linearize(htm, interleaving_cap)
    if not instances:
        raise HtmError("model linearizes to no instances")

    obj_index = {o.id: i for i, o in enumerate(htm.objects)}
    pref_index = {p: i for i, p in enumerate(htm.preferences)}

    actions: list[ActionToken] = [
        ActionToken(A_WAIT, -1, "wait"),
        ActionToken(A_HOLD, -1, "hold"),
    ]
    for i, o in enumerate(htm.objects):
        actions.append(ActionToken(A_BRING, i, f"bring:{o.id}"))
    for i, o in enumerate(htm.objects):
        actions.append(ActionToken(A_CLEANUP, i, f"cleanup:{o.id}"))
    for i, tok in enumerate(htm.actions):
        actions.append(ActionToken(A_CUSTOM, i, tok))
    action_index = {a.label: i for i, a in enumerate(actions)}

    def compile_leaf(spec: LeafSpec) -> _CompiledLeaf:
        advance: dict[int, tuple[int, bool]] = {}
        for token, gate in spec.advance:
            idx = action_index[token]
            pi = pref_index[gate.pref] if gate.pref is not None else -1
            advance[idx] = (pi, gate.want)
        req = sum(1 << obj_index[o] for o in spec.required_tools)
        con = sum(1 << obj_index[o] for o in spec.consumed_parts)
        return _CompiledLeaf(
            name=spec.name,
            advance=advance,
            advance_list=tuple((a, pi, want) for a, (pi, want) in advance.items()),
            required_mask=req,
            consumed_mask=con,
            penalty_mask=req | con,
        )

    cache: dict[LeafSpec, _CompiledLeaf] = {}

    def cached(spec: LeafSpec) -> _CompiledLeaf:
        hit = cache.get(spec)
        if hit is None:
            hit = cache[spec] = compile_leaf(spec)
        return hit

    compiled = tuple(tuple(cached(s) for s in inst) for inst in instances)

    suffix_needed = []
    for inst in compiled:
        suffix = [0] * (len(inst) + 1)
        for p in range(len(inst) - 1, -1, -1):
            suffix[p] = suffix[p + 1] | inst[p].penalty_mask
        suffix_needed.append(tuple(suffix))

    return GenerativeModel(
        instances=compiled,
        objects=tuple(htm.objects),
        preferences=tuple(htm.preferences),
        actions=tuple(actions),
        suffix_needed=tuple(suffix_needed),
        gamma=gamma,
        noise=noise if noise is not None else NoiseConfig.exact(),
        rewards=rewards if rewards is not None else RewardParams(),
        pref_prior=_prior_tuple(htm.preferences, pref_prior),
        tree_micro_leaves=micro_leaf_count(htm),
    )


def is_terminal(model: GenerativeModel, state: WorldState) -> bool:
    return state.pos >= len(model.instances[state.instance])


def sample_initial(
    model: GenerativeModel,
    rng: Random,
    pref_prior: float | Mapping[str, float] | None = None,
) -> WorldState:
    """Fresh episode state: empty workspace, uniform hidden instance, each
    preference drawn independently from the prior (default: the model's)."""
    prior = (
        model.pref_prior
        if pref_prior is None
        else _prior_tuple(model.preferences, pref_prior)
    )
    instance = rng.randrange(len(model.instances))
    prefs = 0
    for i, p in enumerate(prior):
        if rng.random() < p:
            prefs |= 1 << i
    return WorldState(instance=instance, pos=0, workspace=0, prefs=prefs)


def sample_step(
    model: GenerativeModel, state: WorldState, action: int, rng: Random
) -> tuple[WorldState, int, float]:
    """Sample (next state, observation, reward) for one executed action.

    Nominal dynamics first (manipulation, gated advances, consumption, the
    event rewards), then the random feature transitions.  Stepping a terminal
    state is a caller bug and raises.
    """
    inst = model.instances[state.instance]
    if state.pos >= len(inst):
        raise ValueError("cannot step a terminal state")

    rw = model.rewards
    noise = model.noise
    tok = model.actions[action]
    kind = tok.kind
    ws = state.workspace
    pos = state.pos
    obs = OBS_NONE

    if kind == A_BRING:
        mask = 1 << tok.arg
        if ws & mask:
            obs = OBS_FAIL_WRONG
        elif noise.manipulation_success >= 1.0 or rng.random() < noise.manipulation_success:
            ws |= mask
        else:
            obs = OBS_FAIL_ROBOT
        reward = rw.cost_other
    elif kind == A_CLEANUP:
        mask = 1 << tok.arg
        if not ws & mask:
            obs = OBS_FAIL_WRONG
        elif noise.manipulation_success >= 1.0 or rng.random() < noise.manipulation_success:
            ws &= ~mask
        else:
            obs = OBS_FAIL_ROBOT
        reward = rw.cost_other
    else:
        if kind == A_WAIT:
            reward = rw.cost_wait
        elif kind == A_HOLD:
            reward = rw.cost_hold
        else:
            reward = rw.cost_other
        leaf = inst[pos]
        gate = leaf.advance.get(action)
        if gate is not None and (gate[0] < 0 or (state.prefs >> gate[0] & 1) == gate[1]):
            # The subtask completes.
            reward += rw.subtask_transition
            if kind == A_HOLD and gate[0] >= 0 and gate[1]:
                reward += rw.preference_honored
            missing = (leaf.penalty_mask & ~ws).bit_count()
            if missing:
                reward += rw.missing_object * missing
            ws &= ~leaf.consumed_mask
            pos += 1
            if pos == len(inst):
                reward += rw.final_reached
                leftover = ws.bit_count()
                if leftover:
                    reward += rw.uncleaned_object * leftover
        else:
            obs = OBS_FAIL_WRONG

    if noise.eps_object > 0.0:
        eps = noise.eps_object
        for i in range(len(model.objects)):
            if rng.random() < eps:
                ws ^= 1 << i
    prefs = state.prefs
    if noise.eps_pref > 0.0:
        eps = noise.eps_pref
        for i in range(len(model.preferences)):
            if rng.random() < eps:
                prefs ^= 1 << i

    return WorldState(state.instance, pos, ws, prefs), obs, reward
