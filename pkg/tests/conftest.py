from __future__ import annotations

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cobot import build_benchmark, compile_model
from cobot.htm import ALWAYS, Gate, Htm, ObjectClass, ObjectDef, make_leaf, sequence
from cobot.model import NoiseConfig

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TABLE_DOC = os.path.join(REPO_ROOT, "demos", "table.htm.json")

HOLDABLE = [("wait", ALWAYS), ("hold", Gate("hold", True))]


def single_leaf_htm(
    requires=("screwdriver",), consumes=(), n_steps: int = 1
) -> Htm:
    """One hold-or-wait subtask with one tool; the smallest useful model."""
    from cobot.htm import make_step_leaf

    leaf = make_step_leaf("assemble", [HOLDABLE] * n_steps, requires, consumes)
    return Htm(
        root=leaf if n_steps > 1 else sequence(leaf, name="task"),
        objects=tuple(ObjectDef(o, ObjectClass.TOOL) for o in requires),
        preferences=("hold",),
    )


def two_step_htm() -> Htm:
    """The 2-micro-leaf, 1-tool, 1-preference model used against the exact
    planner oracle (12 states)."""
    return single_leaf_htm(n_steps=2)


@pytest.fixture(scope="session")
def table_htm():
    return build_benchmark("table")


@pytest.fixture(scope="session")
def table_model(table_htm):
    return compile_model(table_htm)


@pytest.fixture(scope="session")
def sweep_htm():
    return build_benchmark("table", legs=1, attach=False, screw_steps=4)


@pytest.fixture()
def exact_noise():
    return NoiseConfig.exact()
