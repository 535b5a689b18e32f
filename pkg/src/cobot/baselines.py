"""Hand-coded comparison policies.

All policies speak the same episode protocol as the planner: `reset(rng)`
starts an episode, `act()` returns the next action index, `observe(action,
obs)` feeds back what happened.  The scripted policies never look at the
hidden state; they track their own phase from observations alone.
"""
from __future__ import annotations

from random import Random

from .htm import ObjectClass
from .model import A_CUSTOM, GenerativeModel, OBS_NONE

__all__ = ["RandomSupportPolicy", "RepeatPolicy", "FixedSupportPolicy"]


def _tool_actions(model: GenerativeModel) -> list[int]:
    return [
        model.action_index(f"bring:{o.id}")
        for o in model.objects
        if o.cls is ObjectClass.TOOL
    ]


def _cleanup_actions(model: GenerativeModel) -> list[int]:
    return [
        model.action_index(f"cleanup:{o.id}")
        for o in model.objects
        if o.cls is ObjectClass.TOOL
    ]


def _custom_tokens(model: GenerativeModel) -> list[int]:
    return [i for i, a in enumerate(model.actions) if a.kind == A_CUSTOM]


class RandomSupportPolicy:
    """Bring the tools, then per subtask do the shared action and guess among
    the others uniformly until one lands; repeat any other failed action."""

    def __init__(self, model: GenerativeModel, n_subtasks: int | None = None):
        self.model = model
        customs = _custom_tokens(model)
        if len(customs) < 2:
            raise ValueError("the random policy needs a shared token plus choices")
        self.shared = customs[0]
        self.choices = customs[1:]
        self.tools = _tool_actions(model)
        self.cleanups = _cleanup_actions(model)
        if n_subtasks is None:
            n_subtasks = len(model.instances[0]) // 2
        self.n_subtasks = n_subtasks
        self.rng: Random = Random(0)
        self.reset(self.rng)

    def reset(self, rng: Random) -> None:
        self.rng = rng
        self.phase = "tools"
        self.cursor = 0
        self.subtask = 0
        self.in_choice = False
        self.last_action: int | None = None
        self.retry = False

    def act(self) -> int:
        if self.retry and self.last_action is not None:
            return self.last_action
        if self.phase == "tools":
            return self.tools[self.cursor]
        if self.phase == "work":
            if self.in_choice:
                return self.choices[self.rng.randrange(len(self.choices))]
            return self.shared
        if self.phase == "clean" and self.cursor < len(self.cleanups):
            return self.cleanups[self.cursor]
        return 0  # wait; script exhausted

    def observe(self, action: int, obs: int) -> None:
        self.last_action = action
        ok = obs == OBS_NONE
        self.retry = False
        if self.phase == "tools":
            if ok:
                self.cursor += 1
                if self.cursor >= len(self.tools):
                    self.phase = "work"
            else:
                self.retry = True
            return
        if self.phase == "work":
            if self.in_choice:
                if ok:  # guessed right, next subtask
                    self.in_choice = False
                    self.subtask += 1
                    if self.subtask >= self.n_subtasks:
                        self.phase = "clean"
                        self.cursor = 0
                # a wrong guess just draws again
            else:
                if ok:
                    self.in_choice = True
                else:
                    self.retry = True
            return
        if self.phase == "clean":
            if ok:
                self.cursor += 1
            else:
                self.retry = True

    def summary(self) -> None:
        return None


class RepeatPolicy:
    """Bring the tools, then cycle the fixed two-action pattern a set number
    of times, then clean up; any failed action is retried until it lands."""

    def __init__(self, model: GenerativeModel, n_cycles: int | None = None):
        self.model = model
        customs = _custom_tokens(model)
        if len(customs) < 2:
            raise ValueError("the repeat policy needs two action tokens")
        self.pattern = (customs[0], customs[1])
        self.tools = _tool_actions(model)
        self.cleanups = _cleanup_actions(model)
        if n_cycles is None:
            n_cycles = len(model.instances[0]) // 2
        self.n_cycles = n_cycles
        self.reset(Random(0))

    def reset(self, rng: Random) -> None:
        self.script = (
            list(self.tools)
            + [tok for _ in range(self.n_cycles) for tok in self.pattern]
            + list(self.cleanups)
        )
        self.cursor = 0

    def act(self) -> int:
        if self.cursor < len(self.script):
            return self.script[self.cursor]
        return 0  # wait; script exhausted

    def observe(self, action: int, obs: int) -> None:
        if obs == OBS_NONE and self.cursor < len(self.script):
            self.cursor += 1

    def summary(self) -> None:
        return None


class FixedSupportPolicy:
    """Scripted per subtask: place what the subtask needs, then either always
    offer to hold (falling back to wait once holding fails there) or never
    offer and just wait.

    Follows the first linearized instance; meant for single-instance models.
    """

    ALWAYS_HOLD = "always-hold"
    NEVER_HOLD = "never-hold"

    def __init__(self, model: GenerativeModel, mode: str):
        if mode not in (self.ALWAYS_HOLD, self.NEVER_HOLD):
            raise ValueError(f"unknown fixed-support mode {mode!r}")
        self.model = model
        self.mode = mode
        self.wait = model.action_index("wait")
        self.hold = model.action_index("hold")
        self.script = model.instances[0]
        self.reset(Random(0))

    def reset(self, rng: Random) -> None:
        self.leaf = 0
        self.placed = 0  # believed workspace bitmask
        self.hold_failed_here = False

    def _missing_object(self) -> int | None:
        leaf = self.script[self.leaf]
        need = leaf.penalty_mask & ~self.placed
        if need:
            lowest = (need & -need).bit_length() - 1
            return lowest
        return None

    def act(self) -> int:
        if self.leaf >= len(self.script):
            # Cleanup phase: clear whatever we believe is still out.
            if self.placed:
                lowest = (self.placed & -self.placed).bit_length() - 1
                return self.model.action_index(
                    f"cleanup:{self.model.objects[lowest].id}"
                )
            return self.wait
        obj = self._missing_object()
        if obj is not None:
            return self.model.action_index(f"bring:{self.model.objects[obj].id}")
        if self.mode == self.ALWAYS_HOLD and not self.hold_failed_here:
            return self.hold
        return self.wait

    def observe(self, action: int, obs: int) -> None:
        ok = obs == OBS_NONE
        tok = self.model.actions[action]
        if tok.label.startswith("bring:"):
            if ok:
                self.placed |= 1 << tok.arg
            return
        if tok.label.startswith("cleanup:"):
            if ok:
                self.placed &= ~(1 << tok.arg)
            return
        if action == self.hold and not ok:
            self.hold_failed_here = True
            return
        if ok and self.leaf < len(self.script):
            # The subtask advanced; its consumed parts left the workspace.
            self.placed &= ~self.script[self.leaf].consumed_mask
            self.leaf += 1
            self.hold_failed_here = False

    def summary(self) -> None:
        return None
