"""Benchmark task models used by the offline evaluations.

Four families:

- ``sequential``: one long chain of identical two-step subtasks.
- ``uniform``: an alternative over every two-step-subtask word of a given
  length (16 words of length 4 by default).
- ``alternative``: an alternative over a fixed handful of words, so the
  hidden word constrains which action comes next.
- ``table``: the concrete furniture-assembly task with tools, consumable
  parts, and hold-gated subtasks; ``legs=1, attach=False, screw_steps=4``
  yields the single leg-assembly task used for the preference sweep.
"""
from __future__ import annotations

import itertools

from .htm import (
    ALWAYS,
    Gate,
    Htm,
    HtmNode,
    ObjectClass,
    ObjectDef,
    alternative,
    make_leaf,
    make_step_leaf,
    sequence,
)

__all__ = ["BENCHMARK_NAMES", "build_benchmark"]

BENCHMARK_NAMES = ("sequential", "uniform", "alternative", "table")

_WORD_TOKENS = {"B": "b", "C": "c"}


def _word_subtask(word: str, index: int, letter: str, tools: tuple[str, ...]) -> HtmNode:
    name = f"{word.lower()}.{index + 1}{letter}"
    return make_step_leaf(name, [["a"], [_WORD_TOKENS[letter]]], requires=tools)


def _word_sequence(word: str, tools: tuple[str, ...]) -> HtmNode:
    return sequence(
        *(_word_subtask(word, i, c, tools) for i, c in enumerate(word)),
        name=word.lower(),
    )


def _abstract_htm(root: HtmNode, n_tools: int) -> Htm:
    objects = tuple(
        ObjectDef(f"tool{i + 1}", ObjectClass.TOOL) for i in range(n_tools)
    )
    return Htm(root=root, objects=objects, preferences=(), actions=("a", "b", "c"))


def _sequential(n_subtasks: int = 20, n_tools: int = 2) -> Htm:
    tools = tuple(f"tool{i + 1}" for i in range(n_tools))
    subtasks = [
        make_step_leaf(f"B{i + 1:02d}", [["a"], ["b"]], requires=tools)
        for i in range(n_subtasks)
    ]
    return _abstract_htm(sequence(*subtasks, name="sequential"), n_tools)


def _uniform(length: int = 4, n_tools: int = 2) -> Htm:
    tools = tuple(f"tool{i + 1}" for i in range(n_tools))
    words = ["".join(w) for w in itertools.product("BC", repeat=length)]
    branches = [_word_sequence(w, tools) for w in words]
    return _abstract_htm(alternative(*branches, name="uniform"), n_tools)


def _alternative(
    words: tuple[str, ...] = ("BCCC", "BBBB", "CBBC", "CCBC"), n_tools: int = 2
) -> Htm:
    tools = tuple(f"tool{i + 1}" for i in range(n_tools))
    branches = [_word_sequence(w, tools) for w in words]
    return _abstract_htm(alternative(*branches, name="alternative"), n_tools)


_HOLDABLE = [("wait", ALWAYS), ("hold", Gate("hold", True))]


def _table(legs: int = 4, attach: bool = True, screw_steps: int = 1) -> Htm:
    """The furniture task: per leg, screw the linkages onto the leg, then
    (optionally) secure the assembly onto the top.  Every subtask accepts a
    wait and a preference-gated hold."""
    leg_ids = [f"leg{i + 1}" for i in range(legs)]
    objects = [ObjectDef("screwdriver", ObjectClass.TOOL)]
    if attach:
        objects += [
            ObjectDef("screws", ObjectClass.PART, "box of screws"),
            ObjectDef("joints", ObjectClass.TOOL, "box of brackets and feet"),
            ObjectDef("top", ObjectClass.PART, "tabletop"),
        ]
    objects += [ObjectDef(l, ObjectClass.PART) for l in leg_ids]

    subtasks: list[HtmNode] = []
    for i, leg in enumerate(leg_ids):
        base = ("screwdriver", "screws", "joints") if attach else ("screwdriver",)
        subtasks.append(
            make_step_leaf(
                f"assemble {leg}",
                [_HOLDABLE] * screw_steps,
                requires=base + (leg,),
                consumes=() if attach else (leg,),
            )
        )
        if attach:
            last = i == legs - 1
            subtasks.append(
                make_leaf(
                    f"attach {leg}",
                    _HOLDABLE,
                    requires=("screwdriver", "screws", "top", leg),
                    consumes=(leg, "top", "screws") if last else (leg,),
                )
            )
    return Htm(
        root=sequence(*subtasks, name="table"),
        objects=tuple(objects),
        preferences=("hold",),
        actions=(),
    )


def build_benchmark(name: str, **params) -> Htm:
    """Construct a benchmark model by name; params override the counts."""
    if name == "sequential":
        return _sequential(**params)
    if name == "uniform":
        return _uniform(**params)
    if name == "alternative":
        return _alternative(**params)
    if name == "table":
        return _table(**params)
    raise ValueError(f"unknown benchmark {name!r}; choose from {BENCHMARK_NAMES}")
