"""MLE pre-training, twisted-tree discriminator pre-training and the adversarial loop.

All randomness flows through a single ``numpy.random.Generator`` so a run
is reproducible from its seed and resumable from a saved generator state.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import discriminator as disc
from . import generator as gen
from .earley import parses
from .grammar import Grammar, MaskMatrix, build_mask
from .parse_tree import ActionSequence, ParseTree, ReplayError, make_twisted_set, yield_of


@dataclass
class TrainConfig:
    batch_size: int = 64
    pretrain_epochs: int = 50
    disc_epochs: int = 50
    adv_epochs: int = 50
    lr_gen: float = 0.01
    lr_disc: float = 0.01
    clip_norm: float = 5.0
    g_steps: int = 1
    d_steps: int = 1
    budget: int | None = None
    seed: int = 0
    baseline_decay: float = 0.9
    disc_holdout: float = 0.2
    converge_tol: float = 1e-4
    converge_window: int = 3

    def __post_init__(self):
        for name in ("batch_size", "pretrain_epochs", "disc_epochs", "adv_epochs", "g_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_steps < 0:
            raise ValueError("d_steps must be non-negative")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must lie in [0, 1)")
        if self.lr_gen <= 0 or self.lr_disc <= 0:
            raise ValueError("learning rates must be positive")
        if self.budget is not None and self.budget <= 0:
            raise ValueError("budget must be positive")
        if not 0.0 < self.disc_holdout < 1.0:
            raise ValueError("disc_holdout must lie in (0, 1)")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)

    def append(self, record: dict) -> None:
        for k, v in record.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise FloatingPointError(f"non-finite {k} at epoch {record.get('epoch')}")
        self.records.append(record)

    def column(self, key: str) -> list:
        return [r[key] for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write_jsonl(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for k in range(0, n, size):
        yield order[k:k + size]


# ---------------------------------------------------------------------------
# generator pre-training


def prepare_corpus(gmodel: gen.GeneratorModel, g: Grammar, corpus: Sequence[ActionSequence],
                   mask: MaskMatrix, budget: int | None = None) -> list:
    out = []
    for line, seq in enumerate(corpus, start=1):
        try:
            out.append(gen.prepare_sequence(gmodel, g, seq, mask, budget))
        except ReplayError as e:
            raise ReplayError(f"corpus line {line}: {e}", e.step) from e
    return out


def corpus_nll(gmodel: gen.GeneratorModel, prepared: list, n_actions: int, batch_size: int = 256) -> float:
    """Mean negative log-likelihood per free step over a prepared corpus."""
    total, count = 0.0, 0
    P = gmodel.store.bind(None)
    for k in range(0, len(prepared), batch_size):
        batch = gen.collate(prepared[k:k + batch_size], n_actions)
        total -= float(gen.weighted_log_prob(gmodel, batch, P, np.ones(batch.prev.shape[0])))
        count += batch.n_free
    return total / max(count, 1)


def pretrain_generator(gmodel: gen.GeneratorModel, g: Grammar, corpus: Sequence[ActionSequence],
                       cfg: TrainConfig, rng: np.random.Generator, epochs: int | None = None,
                       log: Callable[[dict], None] | None = None) -> TrainHistory:
    """Minimise the mean per-free-step NLL of ``corpus`` by mini-batch SGD."""
    if not corpus:
        raise ValueError("empty corpus")
    gmodel.check_grammar(g)
    mask = build_mask(g)
    prepared = prepare_corpus(gmodel, g, corpus, mask)
    names = gmodel.param_names()
    hist = TrainHistory(initial={"gen_nll": corpus_nll(gmodel, prepared, g.n_actions)})
    for epoch in range(1, (cfg.pretrain_epochs if epochs is None else epochs) + 1):
        total, count = 0.0, 0
        for idx in _batches(len(prepared), cfg.batch_size, rng):
            batch = gen.collate([prepared[i] for i in idx], g.n_actions)
            gmodel.store.zero_grad()
            P = gmodel.store.bind(ad.Tape())
            loss = gen.nll_loss(gmodel, batch, P)
            P.backward(loss)
            ad.sgd_step(gmodel.store, cfg.lr_gen, cfg.clip_norm, names)
            total += float(ad.value(loss)) * batch.n_free
            count += batch.n_free
        rec = {"epoch": epoch, "phase": "pretrain-gen", "gen_nll": total / max(count, 1)}
        hist.append(rec)
        if log:
            log(rec)
    return hist


# ---------------------------------------------------------------------------
# discriminator


def _disc_update(dmodel: disc.DiscriminatorModel, g: Grammar, trees, loss_fn, lr: float, clip: float) -> float:
    dmodel.store.zero_grad()
    P = dmodel.store.bind(ad.Tape())
    loss = loss_fn(disc.score_batch(dmodel, g, trees, P))
    P.backward(loss)
    ad.sgd_step(dmodel.store, lr, clip, dmodel.param_names())
    return float(ad.value(loss))


def discriminator_loss(dmodel: disc.DiscriminatorModel, g: Grammar, trees, labels, batch_size: int = 256) -> float:
    total = 0.0
    for k in range(0, len(trees), batch_size):
        psi = disc.score_batch(dmodel, g, trees[k:k + batch_size])
        total += float(disc.bce(psi, labels[k:k + batch_size])) * len(psi)
    return total / len(trees)


def pretrain_discriminator(dmodel: disc.DiscriminatorModel, g: Grammar, positives: Sequence[ParseTree],
                           negatives: Sequence[ParseTree], cfg: TrainConfig, rng: np.random.Generator,
                           epochs: int | None = None, target_accuracy: float | None = None,
                           log: Callable[[dict], None] | None = None) -> TrainHistory:
    """Binary cross-entropy training on real vs. twisted trees with a held-out split.

    The split is made per positive/negative pair so that a tree and its own
    twist never straddle train and held-out data.
    """
    if not positives or not negatives:
        raise ValueError("need both positive and negative trees")
    dmodel.check_grammar(g)
    n = min(len(positives), len(negatives))
    order = rng.permutation(n)
    n_hold = max(1, int(round(cfg.disc_holdout * n)))
    hold, train = order[:n_hold], order[n_hold:]
    tr_trees = [positives[i] for i in train] + [negatives[i] for i in train]
    tr_labels = np.r_[np.ones(len(train)), np.zeros(len(train))]
    ho_trees = [positives[i] for i in hold] + [negatives[i] for i in hold]
    ho_labels = np.r_[np.ones(len(hold)), np.zeros(len(hold))]
    hist = TrainHistory(initial={
        "disc_loss": discriminator_loss(dmodel, g, tr_trees, tr_labels),
        "heldout_acc": disc.accuracy(dmodel, g, ho_trees, ho_labels),
    })
    for epoch in range(1, (cfg.disc_epochs if epochs is None else epochs) + 1):
        total = 0.0
        for idx in _batches(len(tr_trees), cfg.batch_size, rng):
            lab = tr_labels[idx]
            loss = _disc_update(dmodel, g, [tr_trees[i] for i in idx], lambda psi: disc.bce(psi, lab),
                                cfg.lr_disc, cfg.clip_norm)
            total += loss * len(idx)
        rec = {"epoch": epoch, "phase": "pretrain-disc", "disc_loss": total / len(tr_trees),
               "heldout_acc": disc.accuracy(dmodel, g, ho_trees, ho_labels)}
        hist.append(rec)
        if log:
            log(rec)
        if target_accuracy is not None and rec["heldout_acc"] >= target_accuracy:
            break
    return hist


def discriminator_step(dmodel: disc.DiscriminatorModel, g: Grammar, real: Sequence[ParseTree],
                       fake: Sequence[ParseTree], lr: float, clip: float = 5.0) -> float:
    """One SGD step on ``-mean log D(real) - mean log(1 - D(fake))``; returns the pre-step loss."""
    if not real or not fake:
        raise ValueError("empty batch")
    nr = len(real)
    return _disc_update(dmodel, g, list(real) + list(fake),
                        lambda psi: disc.gan_loss(ad.take_rows(psi, np.arange(nr)),
                                                  ad.take_rows(psi, np.arange(nr, nr + len(fake)))),
                        lr, clip)


# ---------------------------------------------------------------------------
# policy gradient


@dataclass
class Baseline:
    """Exponential moving average of the mean reward; unset until the first batch."""

    decay: float = 0.9
    value: float | None = None

    def current(self, batch_mean: float) -> float:
        return batch_mean if self.value is None else self.value

    def update(self, batch_mean: float) -> None:
        if self.value is None:
            self.value = batch_mean
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * batch_mean


def reinforce_surrogate(gmodel: gen.GeneratorModel, batch: gen.TeacherBatch, P, advantages: np.ndarray):
    """``-mean_b adv_b * log G(y_b)``; its gradient is the REINFORCE estimate of ``-grad E[R]``."""
    B = batch.prev.shape[0]
    return ad.scale(gen.weighted_log_prob(gmodel, batch, P, np.asarray(advantages, dtype=np.float64)), -1.0 / B)


def reinforce_gradient(gmodel: gen.GeneratorModel, g: Grammar, seqs, advantages: np.ndarray,
                       mask: MaskMatrix, budget: int | None) -> np.ndarray:
    """Flat estimate of ``grad E[R]`` (ascent direction) from sampled sequences."""
    batch = gen.teacher_batch(gmodel, g, seqs, mask, budget)
    store = gmodel.store
    names = gmodel.param_names()
    store.zero_grad()
    P = store.bind(ad.Tape())
    P.backward(reinforce_surrogate(gmodel, batch, P, advantages))
    out = -store.flat_grad(names)
    store.zero_grad()
    return out


def sequence_score_gradients(gmodel: gen.GeneratorModel, g: Grammar, seqs, mask: MaskMatrix,
                             budget: int | None) -> np.ndarray:
    """Rows of ``grad log G(seq)``, one per sequence."""
    rows = []
    for s in seqs:
        rows.append(reinforce_gradient(gmodel, g, [s], np.ones(1), mask, budget))
    return np.stack(rows)


def syntax_ok(trees: Sequence[ParseTree], g: Grammar) -> np.ndarray:
    return np.array([parses(yield_of(t, g), g) for t in trees])


def policy_gradient_step(gmodel: gen.GeneratorModel, dmodel: disc.DiscriminatorModel | None, g: Grammar,
                         cfg: TrainConfig, rng: np.random.Generator, baseline: Baseline,
                         budget: int, mask: MaskMatrix | None = None,
                         reward_fn: Callable[[list], np.ndarray] | None = None) -> dict:
    """Sample a batch, reward it with the discriminator and take one REINFORCE step."""
    mask = build_mask(g) if mask is None else mask
    samples = gen.sample_batch(gmodel, g, budget, cfg.batch_size, rng, mask)
    trees = [t for t, _ in samples]
    if reward_fn is None:
        rewards = np.asarray(disc.score_batch(dmodel, g, trees), dtype=np.float64)
    else:
        rewards = np.asarray(reward_fn(trees), dtype=np.float64)
    mean_r = float(rewards.mean())
    b = baseline.current(mean_r)
    batch = gen.teacher_batch(gmodel, g, [s for _, s in samples], mask, budget)
    store = gmodel.store
    store.zero_grad()
    P = store.bind(ad.Tape())
    loss = reinforce_surrogate(gmodel, batch, P, rewards - b)
    P.backward(loss)
    ad.sgd_step(store, cfg.lr_gen, cfg.clip_norm, gmodel.param_names())
    baseline.update(mean_r)
    return {"mean_reward": mean_r, "policy_loss": float(ad.value(loss)), "baseline": b,
            "syntax_rate": float(syntax_ok(trees, g).mean()), "trees": trees}


# ---------------------------------------------------------------------------
# adversarial loop


@dataclass
class AdversarialState:
    epoch: int = 0
    baseline: float | None = None
    recent_losses: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AdversarialState":
        return cls(**d)


def adversarial_train(gmodel: gen.GeneratorModel, dmodel: disc.DiscriminatorModel, g: Grammar,
                      corpus_trees: Sequence[ParseTree], cfg: TrainConfig, rng: np.random.Generator,
                      budget: int, state: AdversarialState | None = None, epochs: int | None = None,
                      log: Callable[[dict], None] | None = None) -> tuple[TrainHistory, AdversarialState]:
    """Alternate policy-gradient and discriminator steps.

    Stops after ``cfg.adv_epochs`` in total (or ``epochs`` more in this call)
    or once the policy loss moved less than ``cfg.converge_tol`` across
    ``cfg.converge_window`` consecutive epochs.
    """
    if not corpus_trees:
        raise ValueError("empty corpus")
    gmodel.check_grammar(g)
    dmodel.check_grammar(g)
    state = AdversarialState() if state is None else state
    mask = build_mask(g)
    baseline = Baseline(cfg.baseline_decay, state.baseline)
    hist = TrainHistory()
    stop_at = cfg.adv_epochs if epochs is None else min(cfg.adv_epochs, state.epoch + epochs)
    while state.epoch < stop_at and not state.converged:
        pg = [policy_gradient_step(gmodel, dmodel, g, cfg, rng, baseline, budget, mask)
              for _ in range(cfg.g_steps)]
        d_losses = []
        for _ in range(cfg.d_steps):
            real = [corpus_trees[i] for i in rng.integers(0, len(corpus_trees), cfg.batch_size)]
            fake = [t for t, _ in gen.sample_batch(gmodel, g, budget, cfg.batch_size, rng, mask)]
            d_losses.append(discriminator_step(dmodel, g, real, fake, cfg.lr_disc, cfg.clip_norm))
        state.epoch += 1
        policy_loss = float(np.mean([r["policy_loss"] for r in pg]))
        rec = {
            "epoch": state.epoch,
            "phase": "adversarial",
            "policy_loss": policy_loss,
            "disc_loss": float(np.mean(d_losses)) if d_losses else None,
            "mean_reward": float(np.mean([r["mean_reward"] for r in pg])),
            "syntax_rate": float(np.mean([r["syntax_rate"] for r in pg])),
        }
        hist.append(rec)
        if log:
            log(rec)
        state.baseline = baseline.value
        state.recent_losses = (state.recent_losses + [policy_loss])[-(cfg.converge_window + 1):]
        if len(state.recent_losses) > cfg.converge_window:
            diffs = np.abs(np.diff(state.recent_losses))
            state.converged = bool(np.all(diffs < cfg.converge_tol))
    return hist, state


def twisted_negatives(trees: Sequence[ParseTree], g: Grammar, rng: np.random.Generator) -> list[ParseTree]:
    return make_twisted_set(trees, g, rng)
