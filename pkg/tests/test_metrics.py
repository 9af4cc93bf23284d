import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import EXAMPLE_QUERIES, brute_bleu, brute_lcs, brute_meteor, brute_rouge_l
from treegan import metrics as M
from treegan.datasets import gen_sql_corpus, tokenize_sql

tokens = st.lists(st.sampled_from("abcde"), min_size=1, max_size=8)


def test_bleu_worked_example():
    assert abs(M.bleu3(["a b c d"], ["a b c e"]) - (3 / 4 * 2 / 3 * 1 / 2) ** (1 / 3)) < 1e-12
    assert round(M.bleu3(["a b c d"], ["a b c e"]), 5) == 0.62996


def test_bleu_identity_and_disjoint():
    refs = ["a b c d", "x y z", "p q r s t"]
    assert M.bleu3(refs, refs) == 1.0
    assert M.bleu3(["m n o"], ["a b c"]) <= 1e-6


def test_bleu_empty_inputs():
    with pytest.raises(ValueError):
        M.bleu3([], ["a"])
    with pytest.raises(ValueError):
        M.bleu3(["a"], [])


def test_bleu_clipping_and_brevity():
    # "the the the" clipped to the largest count in any single reference
    assert abs(M.bleu3(["a a a"], ["a b", "a a c"]) - brute_bleu([["a"] * 3], [["a", "b"], ["a", "a", "c"]])) < 1e-12
    # closest reference length, ties to the shorter one
    assert M._closest([2, 4], 3) == 2


def test_rouge_worked_example():
    assert M.rouge_l("a c e", "a b c d e") == pytest.approx(0.75, abs=1e-12)
    assert M.rouge_l("a b", "a b") == 1.0
    assert M.rouge_l("a b", "c d") == 0.0
    with pytest.raises(ValueError):
        M.rouge_l("", "a")


def test_meteor_worked_examples():
    assert M.meteor_exact("a b c", "a b c") == pytest.approx(1 - 0.5 / 27, abs=1e-15)
    assert round(M.meteor_exact("a b c", "a b c"), 5) == 0.98148
    assert M.meteor_exact("b a", "a b") == 0.5
    assert M.meteor_exact("x", "y") == 0.0
    assert M.meteor_alignment("b a", "a b") == (2, 2)


def test_meteor_prefers_fewest_chunks():
    # "a" can align to either occurrence; the best alignment keeps one chunk
    assert M.meteor_alignment("a b", "a x a b") == (2, 1)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens)
def test_lcs_and_rouge_match_brute_force(a, b):
    assert M.lcs_length(a, b) == brute_lcs(a, b)
    assert abs(M.rouge_l(a, b) - brute_rouge_l(a, b)) <= 1e-9


@settings(max_examples=150, deadline=None)
@given(st.lists(tokens, min_size=1, max_size=3), st.lists(tokens, min_size=1, max_size=3))
def test_bleu_matches_brute_force(cands, refs):
    assert abs(M.bleu3(cands, refs) - brute_bleu(cands, refs)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=6), st.lists(st.sampled_from("abc"), min_size=1, max_size=6))
def test_meteor_matches_enumeration(a, b):
    assert abs(M.meteor_exact(a, b) - brute_meteor(a, b)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(tokens, tokens, st.sampled_from("abcde"))
def test_metric_ranges_and_monotone_lcs(a, b, t):
    for v in (M.rouge_l(a, b), M.meteor_exact(a, b), M.bleu3([a], [b])):
        assert 0.0 <= v <= 1.0
    assert M.lcs_length(a + [t], b + [t]) >= M.lcs_length(a, b)


@settings(max_examples=50, deadline=None)
@given(tokens)
def test_self_scores_maximal(a):
    assert M.rouge_l(a, a) == 1.0
    assert M.bleu3([a], [a]) == 1.0
    assert M.meteor_exact(a, a) == pytest.approx(1 - 0.5 / len(a) ** 3, abs=1e-15)


def test_corpus_scores_use_best_reference():
    refs = ["a b c", "x y"]
    assert M.rouge_l_corpus(["x y", "a b c"], refs) == 1.0
    assert M.meteor_corpus(["a b c"], refs) == pytest.approx(1 - 0.5 / 27)


def test_syntax_rate(pal):
    assert M.syntax_rate(["0 1", "0 1 0"], pal) == 0.5
    assert M.syntax_rate([""], pal) == 1.0
    with pytest.raises(ValueError):
        M.syntax_rate([], pal)


def test_schema_rate(sql_demo, rng):
    g, schema = sql_demo
    good = [tokenize_sql(EXAMPLE_QUERIES[k]) for k in (1, 2, 3, 7, 8)]
    bad = [tokenize_sql(EXAMPLE_QUERIES[k]) for k in (4, 5, 6)]
    assert M.schema_rate(good, schema, g) == 1.0
    assert M.schema_rate(bad, schema, g) == 0.0
    assert M.schema_rate(good[:3] + bad, schema, g) == 0.5
    assert M.schema_rate(gen_sql_corpus(g, schema, 300, rng), schema, g) == 1.0


def test_evaluate_report(pal):
    rep = M.evaluate(["0 0", "1"], ["0 0", "1 1"], pal)
    d = rep.to_dict()
    assert "schema" not in d and d["syntax"] == 1.0 and d["n_candidates"] == 2
    assert '"bleu3"' in rep.to_json()
    assert "rouge_l" in rep.to_table()
    with pytest.raises(ValueError):
        M.EvalReport(1.5, 0, 0, 0, None, 1, 1)
