"""Task-model parsing, validation, and linearization."""
from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cobot.htm import (
    ALWAYS,
    EmptyOperatorError,
    Gate,
    Htm,
    HtmSyntaxError,
    InterleavingCapError,
    Leaf,
    ObjectClass,
    ObjectDef,
    OpKind,
    Operator,
    UnknownReferenceError,
    alternative,
    leaf_info,
    linearize,
    make_leaf,
    make_step_leaf,
    micro_leaf_count,
    parallel,
    parse_htm,
    sequence,
    serialize_htm,
    validate_htm,
)
from conftest import TABLE_DOC

from oracles import enumerate_instances, satisfies_order_constraints


MINIMAL_DOC = """
{
  "objects": [{"id": "screwdriver", "class": "tool"}],
  "preferences": ["hold"],
  "root": {"leaf": {"name": "assemble leg",
                    "requires": ["screwdriver"],
                    "advance": [{"action": "wait"},
                                {"action": "hold", "pref": "hold"}]}}
}
"""


class TestParse:
    def test_single_leaf_document(self):
        htm = parse_htm(MINIMAL_DOC)
        assert isinstance(htm.root, Leaf)
        assert htm.root.spec.name == "assemble leg"
        assert htm.root.spec.required_tools == {"screwdriver"}
        assert htm.objects[0].cls is ObjectClass.TOOL
        assert htm.preferences == ("hold",)

    def test_table_document_has_eight_subtasks_under_a_sequence(self):
        with open(TABLE_DOC, encoding="utf-8") as fh:
            htm = parse_htm(fh.read())
        assert isinstance(htm.root, Operator)
        assert htm.root.kind is OpKind.SEQUENCE
        assert len(htm.root.children) == 8
        assert micro_leaf_count(htm) == 8

    def test_empty_operator_node_rejected(self):
        doc = '{"objects": [], "preferences": [], "root": {"op": "alt", "children": []}}'
        with pytest.raises(EmptyOperatorError, match="empty operator"):
            parse_htm(doc)

    def test_syntax_error_carries_position(self):
        with pytest.raises(HtmSyntaxError, match=r"line \d+"):
            parse_htm("{not valid json")

    def test_unknown_object_reference(self):
        doc = json.loads(MINIMAL_DOC)
        doc["root"]["leaf"]["requires"] = ["wrench"]
        with pytest.raises(UnknownReferenceError, match="wrench"):
            parse_htm(json.dumps(doc))

    def test_unknown_preference_reference(self):
        doc = json.loads(MINIMAL_DOC)
        doc["root"]["leaf"]["advance"][1]["pref"] = "speed"
        with pytest.raises(UnknownReferenceError, match="speed"):
            parse_htm(json.dumps(doc))

    def test_steps_expand_to_micro_leaves(self):
        doc = json.loads(MINIMAL_DOC)
        doc["root"]["leaf"]["steps"] = [
            [{"action": "a"}],
            [{"action": "b"}],
        ]
        del doc["root"]["leaf"]["advance"]
        doc["root"]["leaf"]["consumes"] = ["screwdriver"]
        htm = parse_htm(json.dumps(doc))
        root = htm.root
        assert isinstance(root, Operator) and root.kind is OpKind.SEQUENCE
        names = [c.spec.name for c in root.children]
        assert names == ["assemble leg/1", "assemble leg/2"]
        # tools required throughout, consumption on the last micro-leaf only
        assert all(c.spec.required_tools == {"screwdriver"} for c in root.children)
        assert root.children[0].spec.consumed_parts == frozenset()
        assert root.children[1].spec.consumed_parts == {"screwdriver"}

    def test_round_trip_preserves_semantics(self):
        with open(TABLE_DOC, encoding="utf-8") as fh:
            source = fh.read()
        first = parse_htm(source)
        second = parse_htm(serialize_htm(first))
        assert first == second


class TestValidate:
    def test_table_model_is_clean(self, table_htm):
        assert validate_htm(table_htm) == []

    def test_duplicate_leaf_names_cite_both_paths(self):
        htm = Htm(
            root=sequence(make_leaf("x", ["wait"]), make_leaf("x", ["wait"])),
            objects=(),
        )
        diags = validate_htm(htm)
        assert len(diags) == 1
        assert "children[1]" in diags[0].path
        assert "children[0]" in diags[0].message

    def test_unknown_tool_flagged(self):
        htm = Htm(
            root=make_leaf("x", ["wait"], requires=["hammer"]),
            objects=(ObjectDef("screwdriver"),),
        )
        diags = validate_htm(htm)
        assert any("unknown object 'hammer'" in d.message for d in diags)

    def test_duplicate_advance_token_flagged(self):
        from cobot.htm import LeafSpec

        bad = Leaf(LeafSpec("x", (("wait", ALWAYS), ("wait", ALWAYS))))
        diags = validate_htm(Htm(root=bad, objects=()))
        assert any("duplicate advance token" in d.message for d in diags)

    def test_empty_operator_flagged(self):
        htm = Htm(root=Operator(OpKind.PARALLEL, ()), objects=())
        diags = validate_htm(htm)
        assert any("empty operator" in d.message for d in diags)


class TestLinearize:
    def test_sequence_of_two_leaves_is_one_instance(self):
        b1 = make_leaf("b1", ["b"])
        b2 = make_leaf("b2", ["b"])
        instances = linearize(sequence(b1, b2))
        assert len(instances) == 1
        assert [l.name for l in instances[0]] == ["b1", "b2"]

    def test_alternative_over_four_words_yields_four_instances(self):
        from cobot import build_benchmark

        htm = build_benchmark("alternative")
        instances = linearize(htm)
        assert len(instances) == 4

    def test_parallel_of_two_leaves_yields_both_orders(self):
        x = make_leaf("x", ["wait"])
        y = make_leaf("y", ["wait"])
        instances = linearize(parallel(x, y))
        got = [[l.name for l in inst] for inst in instances]
        # oracle: exhaustive interleaving enumeration
        expected = enumerate_instances(parallel(x, y))
        assert got == [list(e) for e in expected]
        assert got == [["x", "y"], ["y", "x"]]

    def test_cap_exceeded_names_the_parallel_node(self):
        leaves = [make_leaf(f"l{i}", ["wait"]) for i in range(6)]
        node = parallel(*leaves, name="big-par")
        with pytest.raises(InterleavingCapError, match="big-par"):
            linearize(node, interleaving_cap=64)

    def test_leaf_info(self):
        b = make_leaf("b", ["b"]).spec
        c = make_leaf("c", ["c"]).spec
        assert leaf_info((b, c), 1) is c
        with pytest.raises(IndexError):
            leaf_info((b,), 1)


# hypothesis: random small trees, checked against the tree-walk oracle


def _trees(max_depth: int):
    def build(depth: int):
        leaf = st.builds(
            lambda i: make_leaf(f"leaf{i}", ["wait"]), st.integers(0, 2**30)
        )
        if depth == 0:
            return leaf
        sub = build(depth - 1)
        op = st.builds(
            lambda kind, children: Operator(kind, tuple(children), name="op"),
            st.sampled_from([OpKind.SEQUENCE, OpKind.ALTERNATIVE, OpKind.PARALLEL]),
            st.lists(sub, min_size=1, max_size=3),
        )
        return st.one_of(leaf, op)

    return build(max_depth)


def _rename_unique(node, counter=None):
    """Make leaf names unique; the generators can repeat them."""
    if counter is None:
        counter = itertools_count()
    if isinstance(node, Leaf):
        return make_leaf(f"leaf{next(counter)}", ["wait"])
    return Operator(node.kind, tuple(_rename_unique(c, counter) for c in node.children), node.name)


def itertools_count():
    import itertools

    return itertools.count()


@settings(max_examples=60, deadline=None)
@given(_trees(2))
def test_linearization_counts_match_tree_walk_oracle(tree):
    tree = _rename_unique(tree)
    expected = enumerate_instances(tree)
    if len(expected) > 512:
        return  # oracle stays cheap; the cap path is tested separately
    got = linearize(tree, interleaving_cap=100_000)
    assert len(got) == len(expected)
    assert [tuple(l.name for l in inst) for inst in got] == expected


@settings(max_examples=40, deadline=None)
@given(_trees(2))
def test_every_instance_respects_tree_constraints(tree):
    tree = _rename_unique(tree)
    if len(enumerate_instances(tree)) > 256:
        return
    for inst in linearize(tree, interleaving_cap=100_000):
        names = tuple(l.name for l in inst)
        assert satisfies_order_constraints(tree, names)
