import math

import numpy as np
import pytest

from treegan import autodiff as ad
from treegan import discriminator as disc
from treegan import generator as gen
from treegan import training as tr
from treegan.datasets import pld_grammar, sample_derivation
from treegan.earley import parse_sequence
from treegan.grammar import build_mask
from treegan.parse_tree import actions_to_tree, yield_of


def _pal_corpus(g, n, seed, weights=(0.1, 0.1, 0.1, 0.35, 0.35)):
    r = np.random.default_rng(seed)
    return [sample_derivation(g, r, np.array(weights), max_actions=400) for _ in range(n)]


def test_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(baseline_decay=1.0)
    with pytest.raises(ValueError):
        tr.TrainConfig(lr_gen=0)
    assert tr.TrainConfig().batch_size == 64 and tr.TrainConfig().pretrain_epochs == 50


def test_history_rejects_non_finite():
    h = tr.TrainHistory()
    h.append({"epoch": 1, "x": 1.0})
    with pytest.raises(FloatingPointError):
        h.append({"epoch": 2, "x": float("nan")})
    assert h.to_jsonl() == '{"epoch": 1, "x": 1.0}\n'


def test_pretrain_generator_starts_uniform_and_descends(pal):
    corpus = _pal_corpus(pal, 300, 0)
    m = gen.GeneratorModel.create(pal, 8, 16, np.random.default_rng(0))
    m.store.values["gen.out.W"][...] = 0
    m.store.values["gen.out.b"][...] = 0
    cfg = tr.TrainConfig(batch_size=32, lr_gen=0.05)
    hist = tr.pretrain_generator(m, pal, corpus, cfg, np.random.default_rng(1), epochs=5)
    assert abs(hist.initial["gen_nll"] - math.log(5)) < 1e-12
    nll = hist.column("gen_nll")
    assert abs(nll[0] - math.log(5)) < 0.05
    assert all(b <= a + 1e-3 for a, b in zip(nll, nll[1:]))
    assert nll[-1] < nll[0]


def test_pretrain_generator_rejects_bad_corpus(pal):
    m = gen.GeneratorModel.create(pal, 4, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        tr.pretrain_generator(m, pal, [], tr.TrainConfig(), np.random.default_rng(0))
    with pytest.raises(tr.ReplayError, match="line 2"):
        tr.pretrain_generator(m, pal, [(0,), (3, 5)], tr.TrainConfig(), np.random.default_rng(0), epochs=1)


def test_discriminator_zero_model_loss(pal):
    corpus = [actions_to_tree(s, pal) for s in _pal_corpus(pal, 40, 0)]
    neg = tr.twisted_negatives(corpus, pal, np.random.default_rng(0))
    m = disc.DiscriminatorModel.create(pal, 4, 4, np.random.default_rng(0))
    for v in m.store.values.values():
        v[...] = 0
    hist = tr.pretrain_discriminator(m, pal, corpus, neg, tr.TrainConfig(batch_size=16), np.random.default_rng(0),
                                     epochs=3)
    assert abs(hist.initial["disc_loss"] - math.log(2)) < 1e-15
    assert all(math.isfinite(x) for x in hist.column("disc_loss"))


def test_discriminator_step_decreases(pal):
    r = np.random.default_rng(0)
    real = [actions_to_tree(s, pal) for s in _pal_corpus(pal, 16, 1)]
    fake = tr.twisted_negatives(real, pal, r)
    m = disc.DiscriminatorModel.create(pal, 4, 8, np.random.default_rng(0))
    losses = [tr.discriminator_step(m, pal, real, fake, 0.01) for _ in range(11)]
    assert losses[-1] < losses[0]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    with pytest.raises(ValueError):
        tr.discriminator_step(m, pal, [], fake, 0.01)


def _exact_gradient(m, g, budget, reward, b):
    seqs = gen.enumerate_sequences(g, budget)
    p = np.exp(gen.sequence_log_probs(m, g, seqs, budget=budget))
    S = tr.sequence_score_gradients(m, g, seqs, build_mask(g), budget)
    R = np.array([reward(s) for s in seqs])
    return (p * (R - b)) @ S, p, S


def test_score_function_identity(pal):
    m = gen.GeneratorModel.create(pal, 3, 3, np.random.default_rng(2))
    _, p, S = _exact_gradient(m, pal, 6, lambda s: 0.0, 0.0)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(p @ S, 0, atol=1e-12)


def test_constant_reward_zero_gradient(pal):
    m = gen.GeneratorModel.create(pal, 3, 3, np.random.default_rng(3))
    grad, _, _ = _exact_gradient(m, pal, 6, lambda s: 0.7, 0.7)
    assert np.all(grad == 0)


def test_baseline_shift_invariance(pal):
    m = gen.GeneratorModel.create(pal, 3, 3, np.random.default_rng(4))
    reward = lambda s: len(s) / 6
    g1, _, _ = _exact_gradient(m, pal, 6, reward, 0.2)
    g2, _, _ = _exact_gradient(m, pal, 6, lambda s: reward(s) + 5.0, 5.2)
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_baseline_ema():
    b = tr.Baseline(0.9)
    assert b.current(0.4) == 0.4
    b.update(0.4)
    b.update(0.5)
    assert abs(b.value - (0.9 * 0.4 + 0.1 * 0.5)) < 1e-15


def test_rigged_reward_shortens_yields(pal):
    m = gen.GeneratorModel.create(pal, 8, 16, np.random.default_rng(0))
    m.store.values["gen.out.b"][3:5] = 1.0  # start out preferring long strings
    cfg = tr.TrainConfig(batch_size=64, lr_gen=0.5)
    rng = np.random.default_rng(0)
    base = tr.Baseline(0.9)
    reward = lambda ts: np.array([float(len(yield_of(t, pal)) <= 4) for t in ts])
    lengths = []
    for _ in range(30):
        out = tr.policy_gradient_step(m, None, pal, cfg, rng, base, 40, reward_fn=reward)
        assert 0 <= out["mean_reward"] <= 1 and out["syntax_rate"] == 1.0
        lengths.append(np.mean([len(yield_of(t, pal)) for t in out["trees"]]))
    assert np.mean(lengths[-5:]) < np.mean(lengths[:5]) - 1.0


def _adv_setup(seed=0):
    g = pld_grammar()
    r = np.random.default_rng(seed)
    corpus = [actions_to_tree(sample_derivation(g, r, max_actions=60), g) for _ in range(64)]
    gm = gen.GeneratorModel.create(g, 8, 8, np.random.default_rng(seed))
    dm = disc.DiscriminatorModel.create(g, 8, 8, np.random.default_rng(seed + 1))
    return g, corpus, gm, dm


def test_adversarial_loop_properties():
    g, corpus, gm, dm = _adv_setup()
    cfg = tr.TrainConfig(batch_size=16, adv_epochs=3)
    hist, state = tr.adversarial_train(gm, dm, g, corpus, cfg, np.random.default_rng(0), budget=60)
    assert len(hist) == 3 and state.epoch == 3
    for rec in hist.records:
        assert rec["syntax_rate"] == 1.0
        assert 0 < rec["mean_reward"] < 1
        assert math.isfinite(rec["policy_loss"]) and math.isfinite(rec["disc_loss"])


def test_adversarial_deterministic():
    runs = []
    for _ in range(2):
        g, corpus, gm, dm = _adv_setup()
        hist, _ = tr.adversarial_train(gm, dm, g, corpus, tr.TrainConfig(batch_size=8, adv_epochs=2),
                                       np.random.default_rng(5), budget=60)
        runs.append(hist.to_jsonl())
    assert runs[0] == runs[1]


def test_no_discriminator_steps_leaves_it_unchanged():
    g, corpus, gm, dm = _adv_setup()
    before = {k: v.copy() for k, v in dm.store.values.items()}
    hist, _ = tr.adversarial_train(gm, dm, g, corpus, tr.TrainConfig(batch_size=8, adv_epochs=2, d_steps=0),
                                   np.random.default_rng(0), budget=60)
    assert all(np.array_equal(before[k], dm.store.values[k]) for k in before)
    assert hist.column("disc_loss") == [None, None]


def test_convergence_stop():
    g, corpus, gm, dm = _adv_setup()
    cfg = tr.TrainConfig(batch_size=8, adv_epochs=20, converge_tol=1e9)
    hist, state = tr.adversarial_train(gm, dm, g, corpus, cfg, np.random.default_rng(0), budget=60)
    assert state.converged and len(hist) == cfg.converge_window + 1


def test_twisted_negatives_for_pld_fail_validation():
    g = pld_grammar()
    r = np.random.default_rng(0)
    trees = [actions_to_tree(sample_derivation(g, r, max_actions=60), g) for _ in range(300)]
    from treegan.parse_tree import is_valid
    neg = tr.twisted_negatives(trees, g, r)
    assert len(neg) == 300 and not any(is_valid(t, g) for t in neg)


def test_corpus_pipeline_parse_then_train(pal):
    seqs = [parse_sequence(list(s), pal) for s in ("", "0", "0110", "10101", "111")]
    m = gen.GeneratorModel.create(pal, 4, 4, np.random.default_rng(0))
    hist = tr.pretrain_generator(m, pal, seqs, tr.TrainConfig(batch_size=2), np.random.default_rng(0), epochs=2)
    assert len(hist) == 2
