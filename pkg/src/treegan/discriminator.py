"""Tree discriminator: label embeddings, Child-Sum Tree-LSTM, sigmoid confidence.

Trees are encoded bottom-up.  A batch of trees is flattened into one node
list and processed one height level at a time, so every node of a given
height across the whole batch goes through the cell in a single call.

Optionally each node input is augmented with an embedding of the production
used at the node: interior nodes whose children match a rule get that rule's
row, leaves get a shared "leaf" row and interior nodes with no matching rule
get a shared "no rule" row.  The child sum discards child order, so this is
the only place ordering information enters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .grammar import Grammar
from .nn import affine_sigmoid, init_affine, init_lstm, init_uniform, treelstm_level
from .parse_tree import ParseTree

PREFIX = "disc"
PSI_CLAMP = 1e-7


@dataclass
class DiscriminatorModel:
    store: ad.ParamStore
    n_symbols: int
    n_productions: int
    embed_dim: int
    hidden: int
    use_rule_ids: bool = True

    @classmethod
    def create(cls, g: Grammar, embed_dim: int, hidden: int, rng: np.random.Generator,
               use_rule_ids: bool = True, store: ad.ParamStore | None = None) -> "DiscriminatorModel":
        store = ad.ParamStore() if store is None else store
        store.add(f"{PREFIX}.emb_label", init_uniform(rng, (len(g.symbols), embed_dim)))
        in_dim = embed_dim
        if use_rule_ids:
            store.add(f"{PREFIX}.emb_rule", init_uniform(rng, (g.n_productions + 2, embed_dim)))
            in_dim *= 2
        init_lstm(store, f"{PREFIX}.tree", in_dim, hidden, rng)
        init_affine(store, f"{PREFIX}.out", 1, hidden, rng)
        return cls(store, len(g.symbols), g.n_productions, embed_dim, hidden, use_rule_ids)

    def param_names(self) -> list[str]:
        return self.store.names(PREFIX + ".")

    def check_grammar(self, g: Grammar) -> None:
        if (len(g.symbols), g.n_productions) != (self.n_symbols, self.n_productions):
            raise ValueError(
                f"discriminator built for {self.n_symbols} symbols / {self.n_productions} rules; "
                f"grammar has {len(g.symbols)} / {g.n_productions}")

    def hyper(self) -> dict:
        return {"embed_dim": self.embed_dim, "hidden": self.hidden,
                "n_symbols": self.n_symbols, "n_productions": self.n_productions,
                "use_rule_ids": self.use_rule_ids}


def node_rule_ids(tree: ParseTree, g: Grammar) -> np.ndarray:
    """Production id per node; ``|P|`` for leaves, ``|P|+1`` for unmatched nodes."""
    out = np.empty(len(tree), dtype=np.int64)
    leaf, none = g.n_productions, g.n_productions + 1
    for i, kids in enumerate(tree.children):
        if not kids:
            out[i] = leaf
        else:
            rid = g.rule_lookup.get((tree.labels[i], tuple(tree.labels[k] for k in kids)))
            out[i] = none if rid is None else rid
    return out


@dataclass
class _Plan:
    """Level schedule for a batch of trees."""

    levels: list       # per level: global node ids
    labels: np.ndarray
    rules: np.ndarray
    child_src: list    # per level: list of (source level, rows in that level, parent row)
    roots: list        # (level, row) of each tree root


def _plan(trees: Sequence[ParseTree], g: Grammar, model: DiscriminatorModel) -> _Plan:
    labels, rules, children, heights = [], [], [], []
    roots = []
    off = 0
    n_sym = model.n_symbols
    for tree in trees:
        for lab in tree.labels:
            if not 0 <= lab < n_sym:
                raise ValueError(f"unknown node label {lab}")
        labels.extend(tree.labels)
        rules.extend(node_rule_ids(tree, g) if model.use_rule_ids else np.zeros(len(tree), dtype=np.int64))
        children.extend(tuple(off + k for k in kids) for kids in tree.children)
        h = [0] * len(tree)
        for i in reversed(list(tree.preorder())):
            kids = tree.children[i]
            h[i] = 1 + max(h[k] for k in kids) if kids else 0
        heights.extend(h)
        roots.append(off + tree.root)
        off += len(tree)
    heights_arr = np.array(heights, dtype=np.int64)
    n_levels = int(heights_arr.max()) + 1 if off else 0
    levels = [np.flatnonzero(heights_arr == k) for k in range(n_levels)]
    where = np.empty(off, dtype=np.int64)  # row within its level
    for nodes in levels:
        where[nodes] = np.arange(len(nodes))
    child_src = []
    for nodes in levels:
        by_level: dict[int, tuple[list, list]] = {}
        for r, node in enumerate(nodes):
            for c in children[node]:
                rows, segs = by_level.setdefault(int(heights_arr[c]), ([], []))
                rows.append(int(where[c]))
                segs.append(r)
        child_src.append([(lv, np.array(rows), np.array(segs)) for lv, (rows, segs) in sorted(by_level.items())])
    root_pos = [(int(heights_arr[r]), int(where[r])) for r in roots]
    return _Plan(levels, np.array(labels, dtype=np.int64), np.array(rules, dtype=np.int64), child_src, root_pos)


def encode_batch(model: DiscriminatorModel, g: Grammar, trees: Sequence[ParseTree], P=None):
    """Root hidden states of ``trees`` as a (B, H') array or Var."""
    P = model.store.bind(None) if P is None else P
    plan = _plan(trees, g, model)
    emb_label = P[f"{PREFIX}.emb_label"]
    emb_rule = P[f"{PREFIX}.emb_rule"] if model.use_rule_ids else None
    hs, cs = [], []
    for nodes, src in zip(plan.levels, plan.child_src):
        x = ad.take_rows(emb_label, plan.labels[nodes])
        if emb_rule is not None:
            x = ad.concat([x, ad.take_rows(emb_rule, plan.rules[nodes])], axis=1)
        if src:
            ch_h = ad.concat([ad.take_rows(hs[lv], rows) for lv, rows, _ in src], axis=0)
            ch_c = ad.concat([ad.take_rows(cs[lv], rows) for lv, rows, _ in src], axis=0)
            seg = np.concatenate([segs for _, _, segs in src])
        else:
            ch_h = ch_c = None
            seg = np.zeros(0, dtype=np.int64)
        h, c = treelstm_level(P, f"{PREFIX}.tree", x, ch_h, ch_c, seg)
        hs.append(h)
        cs.append(c)
    # gather roots level by level, then restore batch order
    order, parts = [], []
    by_level: dict[int, list[tuple[int, int]]] = {}
    for b, (lv, row) in enumerate(plan.roots):
        by_level.setdefault(lv, []).append((b, row))
    for lv, items in sorted(by_level.items()):
        order.extend(b for b, _ in items)
        parts.append(ad.take_rows(hs[lv], np.array([row for _, row in items])))
    stacked = ad.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    inv = np.empty(len(order), dtype=np.int64)
    inv[np.array(order)] = np.arange(len(order))
    return ad.take_rows(stacked, inv)


def encode_tree(model: DiscriminatorModel, g: Grammar, tree: ParseTree, P=None):
    """Root hidden state ``h_r`` of a single tree, shape (H',)."""
    h = encode_batch(model, g, [tree], P)
    return ad.reshape(h, (model.hidden,))


def score_batch(model: DiscriminatorModel, g: Grammar, trees: Sequence[ParseTree], P=None):
    P = model.store.bind(None) if P is None else P
    return affine_sigmoid(P, f"{PREFIX}.out", encode_batch(model, g, trees, P))


def score(model: DiscriminatorModel, g: Grammar, tree: ParseTree) -> float:
    """Confidence that ``tree`` is real, in (0, 1)."""
    return float(score_batch(model, g, [tree])[0])


def bce(psi, labels: np.ndarray):
    """Mean binary cross-entropy with the confidence clamped away from 0 and 1."""
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    p = ad.clip(psi, PSI_CLAMP, 1.0 - PSI_CLAMP)
    pos = ad.dot_const(ad.log(p), labels / n)
    neg = ad.dot_const(ad.log(ad.sub(1.0, p)), (1.0 - labels) / n)
    return ad.scale(ad.add(pos, neg), -1.0)


def gan_loss(psi_real, psi_fake):
    """``-mean log D(real) - mean log(1 - D(fake))``."""
    pr = ad.clip(psi_real, PSI_CLAMP, 1.0 - PSI_CLAMP)
    pf = ad.clip(psi_fake, PSI_CLAMP, 1.0 - PSI_CLAMP)
    nr, nf = len(ad.value(pr)), len(ad.value(pf))
    a = ad.dot_const(ad.log(pr), np.full(nr, 1.0 / nr))
    b = ad.dot_const(ad.log(ad.sub(1.0, pf)), np.full(nf, 1.0 / nf))
    return ad.scale(ad.add(a, b), -1.0)


def accuracy(model: DiscriminatorModel, g: Grammar, trees: Sequence[ParseTree], labels: np.ndarray,
             batch_size: int = 256) -> float:
    preds = []
    for k in range(0, len(trees), batch_size):
        preds.append(score_batch(model, g, trees[k:k + batch_size]) > 0.5)
    return float(np.mean(np.concatenate(preds) == (np.asarray(labels) > 0.5)))
