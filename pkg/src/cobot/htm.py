"""Hierarchical task models: trees of primitive subtasks joined by operators.

A task model is a tree whose leaves are primitive subtasks and whose inner
nodes combine children sequentially, in parallel, or as mutually exclusive
alternatives.  Models declare up front the universes they draw from: workspace
objects (tools and parts), boolean human preferences, and any custom action
tokens used by abstract subtasks.  `linearize` resolves the operators into the
flat per-episode subtask sequences the compiler works with.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence, Union

__all__ = [
    "ObjectClass",
    "ObjectDef",
    "Gate",
    "ALWAYS",
    "LeafSpec",
    "Leaf",
    "OpKind",
    "Operator",
    "HtmNode",
    "Htm",
    "Diagnostic",
    "HtmError",
    "HtmSyntaxError",
    "UnknownReferenceError",
    "EmptyOperatorError",
    "InterleavingCapError",
    "TaskInstance",
    "make_leaf",
    "make_step_leaf",
    "sequence",
    "parallel",
    "alternative",
    "parse_htm",
    "parse_htm_file",
    "serialize_htm",
    "validate_htm",
    "linearize",
    "leaf_info",
    "micro_leaf_count",
]

FORMAT_TAG = "htm-v1"


class ObjectClass(str, Enum):
    TOOL = "tool"
    PART = "part"


@dataclass(frozen=True)
class ObjectDef:
    """A workspace object: a tool stays around, a part gets consumed."""

    id: str
    cls: ObjectClass = ObjectClass.TOOL
    display: str = ""

    @property
    def label(self) -> str:
        return self.display or self.id


@dataclass(frozen=True)
class Gate:
    """Condition on an advance action: always allowed, or gated on a preference."""

    pref: str | None = None
    want: bool = True

    def holds(self, prefs: Mapping[str, bool]) -> bool:
        if self.pref is None:
            return True
        return prefs.get(self.pref, False) == self.want


ALWAYS = Gate()


@dataclass(frozen=True)
class LeafSpec:
    """A primitive subtask.

    `advance` lists the (action token, gate) pairs that complete the subtask.
    Tokens are either the built-in "wait"/"hold" supports or custom tokens
    declared in the model's action universe.  `required_tools` must be on the
    workspace when the subtask completes; `consumed_parts` are erased from the
    workspace on completion.
    """

    name: str
    advance: tuple[tuple[str, Gate], ...]
    required_tools: frozenset[str] = frozenset()
    consumed_parts: frozenset[str] = frozenset()

    def referenced_objects(self) -> frozenset[str]:
        return self.required_tools | self.consumed_parts


@dataclass(frozen=True)
class Leaf:
    spec: LeafSpec

    @property
    def name(self) -> str:
        return self.spec.name


class OpKind(str, Enum):
    SEQUENCE = "seq"
    PARALLEL = "par"
    ALTERNATIVE = "alt"


@dataclass(frozen=True)
class Operator:
    kind: OpKind
    children: tuple["HtmNode", ...]
    name: str = ""


HtmNode = Union[Leaf, Operator]
TaskInstance = tuple[LeafSpec, ...]


@dataclass(frozen=True)
class Htm:
    """A parsed task model: the tree plus its declared universes."""

    root: HtmNode
    objects: tuple[ObjectDef, ...]
    preferences: tuple[str, ...] = ()
    actions: tuple[str, ...] = ()

    def object_ids(self) -> tuple[str, ...]:
        return tuple(o.id for o in self.objects)


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return f"{self.path}: {self.message}"


class HtmError(Exception):
    """Base class for task-model errors."""


class HtmSyntaxError(HtmError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column


class UnknownReferenceError(HtmError):
    pass


class EmptyOperatorError(HtmError):
    pass


class InterleavingCapError(HtmError):
    def __init__(self, node_name: str, cap: int):
        super().__init__(
            f"parallel node {node_name!r} exceeds the interleaving cap of {cap}; "
            "raise the cap to expand it"
        )
        self.node_name = node_name
        self.cap = cap


# ---------------------------------------------------------------------------
# Construction helpers


def make_leaf(
    name: str,
    advance: Iterable[tuple[str, Gate] | str],
    requires: Iterable[str] = (),
    consumes: Iterable[str] = (),
) -> Leaf:
    """Build a leaf; bare strings in `advance` mean ungated tokens."""
    pairs = tuple((a, ALWAYS) if isinstance(a, str) else a for a in advance)
    return Leaf(
        LeafSpec(
            name=name,
            advance=pairs,
            required_tools=frozenset(requires),
            consumed_parts=frozenset(consumes),
        )
    )


def make_step_leaf(
    name: str,
    steps: Sequence[Iterable[tuple[str, Gate] | str]],
    requires: Iterable[str] = (),
    consumes: Iterable[str] = (),
) -> HtmNode:
    """Expand a subtask with ordered within-subtask actions into micro-leaves.

    Each step becomes one micro-leaf named "<name>/<k>".  Required tools apply
    to every micro-leaf (the tool is in use throughout); consumed parts are
    erased by the last micro-leaf only.
    """
    if not steps:
        raise HtmError(f"subtask {name!r} has no steps")
    if len(steps) == 1:
        return make_leaf(name, steps[0], requires, consumes)
    last = len(steps) - 1
    micros = tuple(
        make_leaf(
            f"{name}/{k + 1}",
            adv,
            requires,
            consumes if k == last else (),
        )
        for k, adv in enumerate(steps)
    )
    return Operator(OpKind.SEQUENCE, micros, name=name)


def sequence(*children: HtmNode, name: str = "") -> Operator:
    return Operator(OpKind.SEQUENCE, tuple(children), name=name)


def parallel(*children: HtmNode, name: str = "") -> Operator:
    return Operator(OpKind.PARALLEL, tuple(children), name=name)


def alternative(*children: HtmNode, name: str = "") -> Operator:
    return Operator(OpKind.ALTERNATIVE, tuple(children), name=name)


# ---------------------------------------------------------------------------
# Parsing / serialization

_OP_KINDS = {k.value: k for k in OpKind}
_BUILTIN_TOKENS = ("wait", "hold")


def parse_htm(source: str) -> Htm:
    """Parse a task-model document (JSON text) and resolve its universes.

    Raises HtmSyntaxError on malformed documents, UnknownReferenceError when a
    leaf names an undeclared object or preference, EmptyOperatorError for an
    operator with no children.
    """
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as e:
        raise HtmSyntaxError(e.msg, e.lineno, e.colno) from e
    if not isinstance(doc, dict):
        raise HtmSyntaxError("document root must be an object")
    if "root" not in doc:
        raise HtmSyntaxError("missing required key 'root'")

    objects = []
    seen_obj: set[str] = set()
    for entry in doc.get("objects", []):
        if isinstance(entry, str):
            entry = {"id": entry}
        oid = entry.get("id")
        if not isinstance(oid, str) or not oid:
            raise HtmSyntaxError("object entries need a non-empty string 'id'")
        if oid in seen_obj:
            raise HtmSyntaxError(f"duplicate object id {oid!r}")
        seen_obj.add(oid)
        cls = ObjectClass(entry.get("class", "tool"))
        objects.append(ObjectDef(oid, cls, entry.get("display", "")))

    preferences = tuple(doc.get("preferences", []))
    if len(set(preferences)) != len(preferences):
        raise HtmSyntaxError("duplicate preference id")
    declared_actions = list(doc.get("actions", []))

    custom_tokens: list[str] = list(declared_actions)

    def resolve_node(raw: object, path: str) -> HtmNode:
        if not isinstance(raw, dict):
            raise HtmSyntaxError(f"{path}: node must be an object")
        if "leaf" in raw:
            return resolve_leaf(raw["leaf"], path + ".leaf")
        if "op" in raw:
            kind = raw["op"]
            if kind not in _OP_KINDS:
                raise HtmSyntaxError(f"{path}: unknown operator {kind!r}")
            children_raw = raw.get("children", [])
            if not children_raw:
                raise EmptyOperatorError(f"{path}: empty operator node")
            children = tuple(
                resolve_node(c, f"{path}.children[{i}]")
                for i, c in enumerate(children_raw)
            )
            return Operator(_OP_KINDS[kind], children, name=raw.get("name", ""))
        raise HtmSyntaxError(f"{path}: node needs either 'leaf' or 'op'")

    def resolve_advance(raw: object, path: str) -> tuple[tuple[str, Gate], ...]:
        if not isinstance(raw, list) or not raw:
            raise HtmSyntaxError(f"{path}: 'advance' must be a non-empty list")
        pairs = []
        for i, a in enumerate(raw):
            if isinstance(a, str):
                a = {"action": a}
            token = a.get("action")
            if not isinstance(token, str) or not token:
                raise HtmSyntaxError(f"{path}[{i}]: missing action token")
            if token not in _BUILTIN_TOKENS and token not in custom_tokens:
                custom_tokens.append(token)
            pref = a.get("pref")
            if pref is None:
                gate = ALWAYS
            else:
                if pref not in preferences:
                    raise UnknownReferenceError(
                        f"{path}[{i}]: unknown preference {pref!r}"
                    )
                gate = Gate(pref, bool(a.get("value", True)))
            pairs.append((token, gate))
        return tuple(pairs)

    def resolve_leaf(raw: object, path: str) -> HtmNode:
        if not isinstance(raw, dict):
            raise HtmSyntaxError(f"{path}: leaf must be an object")
        name = raw.get("name")
        if not isinstance(name, str) or not name:
            raise HtmSyntaxError(f"{path}: leaf needs a non-empty name")
        for key in ("requires", "consumes"):
            for oid in raw.get(key, []):
                if oid not in seen_obj:
                    raise UnknownReferenceError(
                        f"{path}: unknown object {oid!r} in {key!r}"
                    )
        requires = raw.get("requires", [])
        consumes = raw.get("consumes", [])
        if "steps" in raw:
            if "advance" in raw:
                raise HtmSyntaxError(f"{path}: leaf has both 'advance' and 'steps'")
            steps = [
                resolve_advance(step, f"{path}.steps[{k}]")
                for k, step in enumerate(raw["steps"])
            ]
            return make_step_leaf(name, steps, requires, consumes)
        advance = resolve_advance(raw.get("advance"), f"{path}.advance")
        return Leaf(LeafSpec(name, advance, frozenset(requires), frozenset(consumes)))

    root = resolve_node(doc["root"], "root")
    return Htm(
        root=root,
        objects=tuple(objects),
        preferences=preferences,
        actions=tuple(custom_tokens),
    )


def parse_htm_file(path: str) -> Htm:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_htm(fh.read())


def _gate_to_json(token: str, gate: Gate) -> dict:
    out: dict = {"action": token}
    if gate.pref is not None:
        out["pref"] = gate.pref
        out["value"] = gate.want
    return out


def _node_to_json(node: HtmNode) -> dict:
    if isinstance(node, Leaf):
        spec = node.spec
        leaf: dict = {
            "name": spec.name,
            "advance": [_gate_to_json(t, g) for t, g in spec.advance],
        }
        if spec.required_tools:
            leaf["requires"] = sorted(spec.required_tools)
        if spec.consumed_parts:
            leaf["consumes"] = sorted(spec.consumed_parts)
        return {"leaf": leaf}
    out: dict = {
        "op": node.kind.value,
        "children": [_node_to_json(c) for c in node.children],
    }
    if node.name:
        out["name"] = node.name
    return out


def serialize_htm(htm: Htm) -> str:
    """Emit the document form of a model; micro-leaf expansion is preserved."""
    doc = {
        "format": FORMAT_TAG,
        "objects": [
            {"id": o.id, "class": o.cls.value, **({"display": o.display} if o.display else {})}
            for o in htm.objects
        ],
        "preferences": list(htm.preferences),
        "actions": list(htm.actions),
        "root": _node_to_json(htm.root),
    }
    return json.dumps(doc, indent=2, sort_keys=False)


# ---------------------------------------------------------------------------
# Validation


def validate_htm(htm: Htm) -> list[Diagnostic]:
    """Check every model invariant; an empty list means the model is sound."""
    diags: list[Diagnostic] = []
    objects = set(htm.object_ids())
    prefs = set(htm.preferences)
    tokens = set(_BUILTIN_TOKENS) | set(htm.actions)
    leaf_paths: dict[str, str] = {}

    if len(objects) != len(htm.objects):
        diags.append(Diagnostic("objects", "duplicate object id"))

    def walk(node: HtmNode, path: str) -> None:
        if isinstance(node, Leaf):
            spec = node.spec
            if spec.name in leaf_paths:
                diags.append(
                    Diagnostic(
                        path,
                        f"duplicate leaf name {spec.name!r} "
                        f"(also at {leaf_paths[spec.name]})",
                    )
                )
            else:
                leaf_paths[spec.name] = path
            if not spec.advance:
                diags.append(Diagnostic(path, "leaf has no advance actions"))
            seen_tokens: set[str] = set()
            for token, gate in spec.advance:
                if token in seen_tokens:
                    diags.append(
                        Diagnostic(path, f"duplicate advance token {token!r}")
                    )
                seen_tokens.add(token)
                if token not in tokens:
                    diags.append(Diagnostic(path, f"unknown action token {token!r}"))
                if gate.pref is not None and gate.pref not in prefs:
                    diags.append(
                        Diagnostic(path, f"unknown preference {gate.pref!r}")
                    )
            for oid in sorted(spec.referenced_objects()):
                if oid not in objects:
                    diags.append(Diagnostic(path, f"unknown object {oid!r}"))
            return
        if not node.children:
            diags.append(Diagnostic(path, "empty operator node"))
        for i, child in enumerate(node.children):
            walk(child, f"{path}.children[{i}]")

    walk(htm.root, "root")
    return diags


# ---------------------------------------------------------------------------
# Linearization


def _interleavings(parts: Sequence[TaskInstance]) -> Iterator[TaskInstance]:
    """All order-preserving merges of the given sequences, lexicographic in the
    child-index choice sequence."""
    if not parts:
        yield ()
        return

    def rec(pointers: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
        if all(p == len(parts[i]) for i, p in enumerate(pointers)):
            yield ()
            return
        for i, p in enumerate(pointers):
            if p < len(parts[i]):
                nxt = pointers[:i] + (p + 1,) + pointers[i + 1 :]
                for rest in rec(nxt):
                    yield (i,) + rest

    for choice in rec(tuple(0 for _ in parts)):
        pointers = [0] * len(parts)
        merged: list[LeafSpec] = []
        for i in choice:
            merged.append(parts[i][pointers[i]])
            pointers[i] += 1
        yield tuple(merged)


def _linearize_node(node: HtmNode, cap: int) -> Iterator[TaskInstance]:
    if isinstance(node, Leaf):
        yield (node.spec,)
        return
    if node.kind is OpKind.SEQUENCE:
        child_lists = [list(_linearize_node(c, cap)) for c in node.children]
        for combo in itertools.product(*child_lists):
            yield tuple(itertools.chain.from_iterable(combo))
        return
    if node.kind is OpKind.ALTERNATIVE:
        for child in node.children:
            yield from _linearize_node(child, cap)
        return
    # Parallel: interleave every combination of child resolutions, stopping
    # as soon as the cap is exceeded rather than enumerating everything.
    child_lists = [list(_linearize_node(c, cap)) for c in node.children]
    count = 0
    for combo in itertools.product(*child_lists):
        for merged in _interleavings(combo):
            count += 1
            if count > cap:
                raise InterleavingCapError(node.name or "<parallel>", cap)
            yield merged


def linearize(htm: Htm | HtmNode, interleaving_cap: int = 64) -> list[TaskInstance]:
    """Resolve operators into the list of flat subtask sequences.

    Sequences multiply their children's resolutions, alternatives add them,
    and parallel nodes expand to all interleavings (capped; exceeding the cap
    raises InterleavingCapError naming the node).
    """
    root = htm.root if isinstance(htm, Htm) else htm
    return list(_linearize_node(root, interleaving_cap))


def leaf_info(instance: TaskInstance, pos: int) -> LeafSpec:
    """The subtask at `pos`; raises IndexError outside [0, len)."""
    if pos < 0 or pos >= len(instance):
        raise IndexError(f"position {pos} outside instance of length {len(instance)}")
    return instance[pos]


def micro_leaf_count(htm: Htm | HtmNode) -> int:
    """Number of leaf nodes in the tree (after any micro-leaf expansion)."""
    root = htm.root if isinstance(htm, Htm) else htm

    def count(node: HtmNode) -> int:
        if isinstance(node, Leaf):
            return 1
        return sum(count(c) for c in node.children)

    return count(root)
