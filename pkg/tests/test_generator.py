import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import WORKED_ACTIONS
from treegan import autodiff as ad
from treegan import generator as gen
from treegan.earley import parses
from treegan.grammar import build_mask
from treegan.parse_tree import ActionSequence, ReplayError, is_valid, tree_to_actions, yield_of


def _zero_head(model):
    model.store.values["gen.out.W"][...] = 0.0
    model.store.values["gen.out.b"][...] = 0.0
    return model


@pytest.fixture
def pal_model(pal):
    return gen.GeneratorModel.create(pal, 4, 6, np.random.default_rng(0))


def test_init_state(pal, pal_model):
    s = gen.init_state(pal_model, pal)
    assert s.children_stack[-1] == (pal.start.id, -1)
    assert s.parent_stack[0] is gen.GAMMA and s.children_stack[0] is gen.GAMMA
    assert len(s.parent_stack) == len(s.children_stack) == 2
    assert s.step == 1 and s.last_action == pal_model.root_action
    t = gen.init_state(pal_model, pal)
    assert s.children_stack == t.children_stack and np.array_equal(s.lstm.h, t.lstm.h)


def test_dimension_mismatch(pal, sql_demo):
    m = gen.GeneratorModel.create(sql_demo[0], 4, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen.init_state(m, pal)


def test_head_p_samples_only_p_rules(pal, pal_model, rng):
    mask = build_mask(pal)
    for _ in range(10_000):
        s = gen.init_state(pal_model, pal)
        a, _ = gen.step(s, pal_model, pal, mask, rng)
        assert a < 5


def test_reversed_push(pal, pal_model):
    mask = build_mask(pal)
    # rig the head so P -> 0 P 0 is the only choice with nonzero mass
    m = gen.GeneratorModel.create(pal, 4, 6, np.random.default_rng(0))
    m.store.values["gen.out.W"][...] = 0
    m.store.values["gen.out.b"][...] = -1e3
    m.store.values["gen.out.b"][3] = 0
    s = gen.init_state(m, pal)
    a, s = gen.step(s, m, pal, mask, np.random.default_rng(0))
    assert a == 3
    top = [pal.symbols[c[0]].text for c in reversed(s.children_stack[1:])]
    assert top == ["0", "P", "0"]
    assert len(s.parent_stack) == len(s.children_stack)
    # a pending terminal is emitted without sampling or pushes
    depth = len(s.children_stack)
    h_before = s.lstm.h.copy()
    a, s = gen.step(s, m, pal, mask, np.random.default_rng(0))
    assert a == 5 and len(s.children_stack) == depth - 1
    assert np.array_equal(s.lstm.h, h_before)


def test_stack_balance_and_budget(pal, pal_model):
    mask = build_mask(pal)
    for seed in range(1000):
        r = np.random.default_rng(seed)
        s = gen.init_state(pal_model, pal)
        while not s.closed:
            assert len(s.parent_stack) == len(s.children_stack)
            gen.step(s, pal_model, pal, mask, r, budget=12)
        assert s.parent_stack == [gen.GAMMA] and s.children_stack == [gen.GAMMA]
        assert len(s.emitted) <= 12


def test_syntax_guarantee_palindromes(pal, pal_model, rng):
    mask = build_mask(pal)
    for _ in range(10_000):
        tree, seq = gen.generate(pal_model, pal, mask, 200, rng)
        assert is_valid(tree, pal)
        y = yield_of(tree, pal)
        assert y == y[::-1]
        assert tree_to_actions(tree, pal).actions == seq.actions


def test_syntax_guarantee_sql(sql_demo, rng):
    g, _ = sql_demo
    m = gen.GeneratorModel.create(g, 4, 6, np.random.default_rng(1))
    mask = build_mask(g)
    for _ in range(500):
        tree = gen.sample_tree(m, g, mask, 60, rng)
        assert is_valid(tree, g) and parses(yield_of(tree, g), g)


def test_minimum_budget(pal, pal_model, rng):
    mask = build_mask(pal)
    seen = set()
    for _ in range(200):
        _, seq = gen.generate(pal_model, pal, mask, 2, rng)
        seen.add(seq.actions)
    assert seen <= {(0,), (1, 5), (2, 6)} and len(seen) == 3
    with pytest.raises(ValueError):
        gen.generate(pal_model, pal, mask, 1, rng)


def test_zero_leakage(sql_demo, pal, rng):
    for g in (pal, sql_demo[0]):
        m = gen.GeneratorModel.create(g, 4, 4, rng)
        mask = build_mask(g)
        hits = []
        trace = lambda sid, a, row, probs: hits.append(bool(row[a]) and abs(probs.sum() - 1) < 1e-12)
        for _ in range(200):
            gen.generate(m, g, mask, 40, rng, trace=trace)
        assert hits and all(hits)


def test_uniform_head_log_probs(pal, pal_model):
    _zero_head(pal_model)
    lp = gen.action_log_probs(pal_model, pal, build_mask(pal), ActionSequence.from_actions(WORKED_ACTIONS, pal))
    assert np.count_nonzero(lp) == 4
    np.testing.assert_allclose(lp[lp != 0], math.log(1 / 5), atol=1e-14)
    assert np.all(lp[[1, 3, 5, 7, 8, 9]] == 0)


def test_worked_sequence_has_four_free_steps(pal):
    assert ActionSequence.from_actions(WORKED_ACTIONS, pal).n_free(pal) == 4


def test_enumerated_probabilities_sum_to_one(pal, pal_model):
    seqs = gen.enumerate_sequences(pal, 6)
    assert len(seqs) == 9
    lp = gen.sequence_log_probs(pal_model, pal, seqs, budget=6)
    assert abs(np.exp(lp).sum() - 1) < 1e-12


def test_teacher_forcing_matches_sampler(pal, pal_model, rng):
    """Log-probs from the batched teacher path equal those seen while sampling."""
    mask = build_mask(pal)
    for _ in range(30):
        seen = []
        tree, seq = gen.generate(pal_model, pal, mask, 16, rng,
                                 trace=lambda sid, a, row, probs: seen.append(math.log(probs[a])))
        lp = gen.action_log_probs(pal_model, pal, mask, seq, budget=16)
        np.testing.assert_allclose(lp[lp != 0], seen, atol=1e-12)


def test_budget_violation_rejected(pal, pal_model):
    seq = ActionSequence.from_actions(WORKED_ACTIONS, pal)
    with pytest.raises(ReplayError):
        gen.prepare_sequence(pal_model, pal, seq, build_mask(pal), budget=6)


def test_step_nll_gradient(pal):
    for seed in range(3):
        r = np.random.default_rng(seed)
        m = gen.GeneratorModel.create(pal, 3, 3, r)
        for n in m.store.names():
            m.store.values[n][...] = r.normal(scale=0.5, size=m.store.values[n].shape)
        batch = gen.teacher_batch(m, pal, [WORKED_ACTIONS, (1, 5), (4, 6, 0, 6)])
        rep = ad.grad_check(lambda P: gen.nll_loss(m, batch, P), m.store)
        assert rep["max_rel_error"] < 1e-4


def test_default_budget(pal):
    seqs = [ActionSequence.from_actions(a, pal) for a in [(0,), (1, 5), WORKED_ACTIONS]]
    assert gen.default_budget(seqs) == 4 * 10


def test_sample_index_never_picks_zero():
    r = np.random.default_rng(0)
    p = np.array([0.0, 0.3, 0.0, 0.7, 0.0])
    picks = {gen.sample_index(p, r) for _ in range(2000)}
    assert picks == {1, 3}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_budget_always_respected(seed, budget):
    from treegan.grammar import palindrome_grammar
    g = palindrome_grammar()
    m = gen.GeneratorModel.create(g, 3, 3, np.random.default_rng(seed))
    tree, seq = gen.generate(m, g, build_mask(g), budget, np.random.default_rng(seed))
    assert len(seq) <= budget and is_valid(tree, g)


def test_sampling_is_deterministic(pal, pal_model):
    a = gen.sample_batch(pal_model, pal, 30, 50, np.random.default_rng(9))
    b = gen.sample_batch(pal_model, pal, 30, 50, np.random.default_rng(9))
    assert [s.actions for _, s in a] == [s.actions for _, s in b]
