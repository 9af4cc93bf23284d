import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import WORKED_ACTIONS, WORKED_PARENTS
from treegan.generator import GeneratorModel, sample_tree
from treegan.grammar import build_mask
from treegan.parse_tree import (
    ActionSequence,
    ReplayError,
    TreeError,
    TwistInapplicable,
    actions_to_tree,
    canonical,
    corrupt,
    is_valid,
    make_twisted_set,
    node_valid,
    tree_from_nested,
    tree_to_actions,
    twist,
    validate,
    yield_of,
)


def test_worked_tree_yield(pal, worked_tree):
    assert yield_of(worked_tree, pal) == list("010010")


def test_epsilon_tree_yield(pal):
    t = tree_from_nested(pal, ("P", ["eps"]))
    assert yield_of(t, pal) == []


def test_textual_derivation_matches_yield(pal, worked_tree):
    # rewrite the leftmost P four times, as a string
    s = "P"
    for rhs in ("0P0", "1P1", "0P0", ""):
        s = s.replace("P", rhs, 1)
    assert s == "".join(yield_of(worked_tree, pal))


def test_worked_tree_actions(pal, worked_tree):
    seq = tree_to_actions(worked_tree, pal)
    assert seq.actions == WORKED_ACTIONS
    assert seq.parent_steps == WORKED_PARENTS
    # nodes created by step 1: the first 0, the inner P and the last 0;
    # ε emits no action, so the last 0 is step 10
    assert seq.parent_steps[1] == seq.parent_steps[2] == seq.parent_steps[9] == 1


def test_single_rule_tree_actions(pal):
    t = tree_from_nested(pal, ("P", ["0"]))
    seq = tree_to_actions(t, pal)
    assert seq.actions == (1, 5)
    assert seq.parent_steps == (0, 1)


def test_actions_to_tree_worked(pal, worked_tree):
    t = actions_to_tree(WORKED_ACTIONS, pal)
    assert t == canonical(worked_tree)
    assert "".join(yield_of(t, pal)) == "010010"


def test_actions_to_tree_epsilon(pal):
    t = actions_to_tree((0,), pal)
    assert len(t) == 2 and pal.symbols[t.labels[1]].is_epsilon


def test_actions_to_tree_premature_end(pal):
    with pytest.raises(ReplayError, match="premature"):
        actions_to_tree((3, 5, 0), pal)


def test_actions_to_tree_trailing(pal):
    with pytest.raises(ReplayError, match="trailing"):
        actions_to_tree((1, 5, 5), pal)


def test_actions_to_tree_illegal(pal):
    with pytest.raises(ReplayError):
        actions_to_tree((3, 6), pal)  # pending terminal 0, got 1
    with pytest.raises(ReplayError):
        actions_to_tree((5,), pal)  # terminal action for the start symbol


def test_action_json_roundtrip(pal):
    seq = ActionSequence.from_actions(WORKED_ACTIONS, pal)
    line = seq.to_json()
    assert line.startswith('[{"a":3,"p":0}')
    assert ActionSequence.from_json(line, pal) == seq
    with pytest.raises(ReplayError):
        ActionSequence.from_json('[{"a":1,"p":0},{"a":5,"p":0}]', pal)


def test_validate_reports_property(pal, worked_tree):
    validate(worked_tree, pal)
    bad_root = tree_from_nested(pal, ("P", ["0"]))
    object.__setattr__(bad_root, "labels", (pal.terminal("0").id, pal.terminal("0").id))
    with pytest.raises(TreeError) as e:
        validate(bad_root, pal)
    assert e.value.property == 1
    bad_leaf = tree_from_nested(pal, ("P", ["0", "P", "0"]))
    with pytest.raises(TreeError) as e:
        validate(bad_leaf, pal)
    assert e.value.property == 3
    bad_rule = tree_from_nested(pal, ("P", ["0", "1"]))
    with pytest.raises(TreeError) as e:
        validate(bad_rule, pal)
    assert e.value.property == 4
    with pytest.raises(TreeError):
        yield_of(bad_rule, pal)


def test_twist_inapplicable_on_palindromes(pal, worked_tree, rng):
    with pytest.raises(TwistInapplicable):
        twist(worked_tree, pal, rng)


def test_twist_breaks_both_splices(sql_demo, rng):
    g, schema = sql_demo
    from treegan.datasets import sample_query
    from treegan.earley import parser_for
    p = parser_for(g)
    for _ in range(50):
        t = p.parse_tree(sample_query(g, schema, rng))
        out = twist(t, g, rng)
        assert not is_valid(out, g)
        moved = [i for i in range(1, len(t)) if out.parent[i] != t.parent[i]
                 or out.children[out.parent[i]].index(i) != t.children[t.parent[i]].index(i)]
        assert len(moved) == 2
        for i in moved:
            assert not node_valid(out, g, out.parent[i])


def test_twist_property_on_sql_trees(sql_a, rng):
    g, schema = sql_a
    from treegan.datasets import gen_sql_corpus
    from treegan.earley import parser_for
    p = parser_for(g)
    trees = [p.parse_tree(q) for q in gen_sql_corpus(g, schema, 1000, rng)]
    n_twisted = 0
    for t in trees:
        try:
            out = twist(t, g, rng)
        except TwistInapplicable:
            continue
        n_twisted += 1
        assert not is_valid(out, g)
    assert n_twisted >= 990


def test_twisted_sets(pal, sql_a):
    g, schema = sql_a
    from treegan.datasets import gen_sql_corpus
    from treegan.earley import parser_for
    trees = [parser_for(g).parse_tree(q) for q in gen_sql_corpus(g, schema, 1000, np.random.default_rng(1))]
    neg = make_twisted_set(trees, g, np.random.default_rng(2))
    assert len(neg) == 1000
    assert not any(is_valid(t, g) for t in neg)
    again = make_twisted_set(trees, g, np.random.default_rng(2))
    assert neg == again

    model = GeneratorModel.create(pal, 4, 4, np.random.default_rng(0))
    mask = build_mask(pal)
    r = np.random.default_rng(3)
    pal_trees = [sample_tree(model, pal, mask, 40, r) for _ in range(300)]
    pal_neg = make_twisted_set(pal_trees, pal, np.random.default_rng(4))
    assert not any(is_valid(t, pal) for t in pal_neg)


def test_corrupt_small_trees(pal, rng):
    for nested in (("P", ["eps"]), ("P", ["0"]), ("P", ["1", ("P", ["eps"]), "1"])):
        t = tree_from_nested(pal, nested)
        assert not is_valid(corrupt(t, pal, rng), pal)


@st.composite
def pal_actions(draw):
    """Random complete palindrome action sequences."""
    depth = draw(st.integers(0, 12))
    outer = draw(st.lists(st.sampled_from([3, 4]), min_size=depth, max_size=depth))
    inner = draw(st.sampled_from([0, 1, 2]))
    acts = []
    for r in outer:
        acts += [r, 5 if r == 3 else 6]
    acts.append(inner)
    if inner:
        acts.append(5 if inner == 1 else 6)
    for r in reversed(outer):
        acts.append(5 if r == 3 else 6)
    return tuple(acts)


@settings(max_examples=100, deadline=None)
@given(pal_actions())
def test_roundtrip_actions_tree(acts):
    from treegan.grammar import palindrome_grammar
    g = palindrome_grammar()
    t = actions_to_tree(acts, g)
    validate(t, g)
    assert tree_to_actions(t, g).actions == acts
    assert actions_to_tree(tree_to_actions(t, g), g) == t
    y = yield_of(t, g)
    assert y == y[::-1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roundtrip_sampled_sql_trees(seed):
    from treegan.datasets import demo_sql_grammar
    g = demo_sql_grammar()
    model = GeneratorModel.create(g, 4, 4, np.random.default_rng(seed))
    t = sample_tree(model, g, build_mask(g), 200, np.random.default_rng(seed))
    assert actions_to_tree(tree_to_actions(t, g), g) == t
