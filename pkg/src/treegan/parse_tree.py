"""Parse trees, their yields, and the tree <-> action-sequence bijection.

Trees live in index arenas: ``labels[i]`` is a symbol id, ``children[i]``
the ordered child indices and ``parent[i]`` the parent index (``-1`` at the
root).  Action sequences number their steps from 1; ``parent_step == 0``
refers to the pseudo-root that initiates the start symbol.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .grammar import Grammar, Symbol


class TreeError(ValueError):
    """A tree violates one of the four parse-tree properties."""

    def __init__(self, prop: int, node: int, message: str):
        self.property = prop
        self.node = node
        super().__init__(f"property {prop} violated at node {node}: {message}")


class ReplayError(ValueError):
    """An action sequence cannot be replayed under the grammar."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


class TwistInapplicable(ValueError):
    """No pair of differently-labelled, non-nested subtrees breaks the tree."""


@dataclass(frozen=True)
class ParseTree:
    labels: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    parent: tuple[int, ...]
    root: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    def is_leaf(self, i: int) -> bool:
        return not self.children[i]

    def preorder(self) -> Iterator[int]:
        stack = [self.root]
        while stack:
            i = stack.pop()
            yield i
            stack.extend(reversed(self.children[i]))

    def depth(self) -> int:
        best = 0
        stack = [(self.root, 1)]
        while stack:
            i, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in self.children[i])
        return best

    def pretty(self, g: Grammar) -> str:
        def fmt(i: int) -> str:
            lab = str(g.symbols[self.labels[i]])
            if not self.children[i]:
                return lab
            return f"({lab} " + " ".join(fmt(c) for c in self.children[i]) + ")"
        return fmt(self.root)


class TreeBuilder:
    """Mutable arena used while constructing a tree."""

    def __init__(self):
        self.labels: list[int] = []
        self.children: list[list[int]] = []
        self.parent: list[int] = []

    def add(self, label: int, parent: int = -1) -> int:
        i = len(self.labels)
        self.labels.append(label)
        self.children.append([])
        self.parent.append(parent)
        if parent >= 0:
            self.children[parent].append(i)
        return i

    def freeze(self) -> ParseTree:
        return ParseTree(tuple(self.labels), tuple(tuple(c) for c in self.children), tuple(self.parent), 0)


@dataclass(frozen=True)
class ActionStep:
    action: int
    parent_step: int
    head: int  # symbol id being expanded or emitted


@dataclass(frozen=True)
class ActionSequence:
    steps: tuple[ActionStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(s.action for s in self.steps)

    @property
    def parent_steps(self) -> tuple[int, ...]:
        return tuple(s.parent_step for s in self.steps)

    def n_free(self, g: Grammar) -> int:
        return sum(1 for s in self.steps if s.action < g.n_productions)

    def to_json(self) -> str:
        return json.dumps([{"a": s.action, "p": s.parent_step} for s in self.steps], separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str, g: Grammar) -> "ActionSequence":
        data = json.loads(line)
        seq = replay_actions([d["a"] for d in data], g)
        for t, (d, step) in enumerate(zip(data, seq.steps), start=1):
            if d.get("p", step.parent_step) != step.parent_step:
                raise ReplayError(f"parent step {d['p']} inconsistent with replay ({step.parent_step})", t)
        return seq

    @classmethod
    def from_actions(cls, actions: Sequence[int], g: Grammar) -> "ActionSequence":
        return replay_actions(actions, g)


# ---------------------------------------------------------------------------
# validation and yields


def validate(tree: ParseTree, g: Grammar) -> None:
    """Raise :class:`TreeError` unless ``tree`` has properties 1-4 under ``g``."""
    n = len(tree.labels)
    if tree.labels[tree.root] != g.start.id:
        raise TreeError(1, tree.root, f"root labelled {g.symbols[tree.labels[tree.root]]}, expected {g.start}")
    syms = g.symbols
    for i in range(n):
        lab = tree.labels[i]
        if not 0 <= lab < len(syms):
            raise TreeError(2, i, f"unknown label {lab}")
        kids = tree.children[i]
        if kids:
            if syms[lab].is_terminal:
                raise TreeError(2, i, f"interior node labelled by terminal {syms[lab]}")
            for c in kids:
                if tree.parent[c] != i:
                    raise TreeError(4, i, f"child {c} has inconsistent parent link")
            rhs = tuple(tree.labels[c] for c in kids)
            if (lab, rhs) not in g.rule_lookup:
                body = " ".join(str(syms[s]) for s in rhs)
                raise TreeError(4, i, f"{syms[lab]} -> {body} is not a production")
        elif not syms[lab].is_terminal:
            raise TreeError(3, i, f"leaf labelled by nonterminal {syms[lab]}")


def is_valid(tree: ParseTree, g: Grammar) -> bool:
    try:
        validate(tree, g)
    except TreeError:
        return False
    return True


def node_valid(tree: ParseTree, g: Grammar, i: int) -> bool:
    """Property 4 (or 3 for leaves) at a single node."""
    kids = tree.children[i]
    lab = tree.labels[i]
    if not kids:
        return g.symbols[lab].is_terminal
    return (lab, tuple(tree.labels[c] for c in kids)) in g.rule_lookup


def yield_of(tree: ParseTree, g: Grammar, check: bool = True) -> list[str]:
    if check:
        validate(tree, g)
    out = []
    for i in tree.preorder():
        if not tree.children[i]:
            s = g.symbols[tree.labels[i]]
            if not s.is_epsilon:
                out.append(s.text)
    return out


# ---------------------------------------------------------------------------
# tree <-> actions


def tree_to_actions(tree: ParseTree, g: Grammar) -> ActionSequence:
    """Depth-first, left-to-right linearisation; epsilon leaves emit nothing."""
    nP = g.n_productions
    steps: list[ActionStep] = []
    step_of: dict[int, int] = {}
    stack = [tree.root]
    while stack:
        i = stack.pop()
        par = tree.parent[i]
        pstep = step_of[par] if par >= 0 else 0
        lab = tree.labels[i]
        sym = g.symbols[lab]
        kids = tree.children[i]
        if kids:
            pid = g.rule_lookup.get((lab, tuple(tree.labels[c] for c in kids)))
            if pid is None:
                raise TreeError(4, i, f"{sym} -> {' '.join(str(g.symbols[tree.labels[c]]) for c in kids)} is not a production")
            steps.append(ActionStep(pid, pstep, lab))
            step_of[i] = len(steps)
            stack.extend(reversed(kids))
        elif sym.kind == "terminal":
            steps.append(ActionStep(nP + g.term_index[lab], pstep, lab))
            step_of[i] = len(steps)
        elif not sym.is_epsilon:
            raise TreeError(3, i, f"leaf labelled by nonterminal {sym}")
    return ActionSequence(tuple(steps))


class Replay:
    """Pushdown replay of actions under a grammar.

    The pending stack holds ``(symbol id, parent node, parent step)``;
    epsilon children are attached at expansion time and never pushed.
    ``pending_cost`` is the fewest actions that can still close the tree.
    """

    def __init__(self, g: Grammar):
        self.g = g
        self.builder = TreeBuilder()
        self.stack: list[tuple[int, int, int]] = [(g.start.id, -1, 0)]
        self.t = 0
        self.steps: list[ActionStep] = []
        self.step_action: list[int] = [-1]  # step_action[t] for t >= 1
        self._cost = g.completion_cost
        self.pending_cost = self._sym_cost(g.start.id)

    def _sym_cost(self, sid: int) -> int:
        s = self.g.symbols[sid]
        if s.is_epsilon:
            return 0
        return 1 if s.is_terminal else self._cost[sid]

    @property
    def done(self) -> bool:
        return not self.stack

    def peek(self) -> tuple[int, int, int]:
        return self.stack[-1]

    def apply(self, action: int) -> ActionStep:
        g = self.g
        if not self.stack:
            raise ReplayError("trailing action after the tree is complete", self.t + 1)
        sid, pnode, pstep = self.stack[-1]
        sym = g.symbols[sid]
        nP = g.n_productions
        if sym.is_terminal:
            expected = nP + g.term_index[sid]
            if action != expected:
                raise ReplayError(f"pending terminal {sym} requires action {expected}, got {action}", self.t + 1)
            self.stack.pop()
            self.builder.add(sid, pnode)
            self.pending_cost -= 1
        else:
            if not (0 <= action < nP) or g.productions[action].head.id != sid:
                raise ReplayError(f"action {action} is not a production of {sym}", self.t + 1)
            self.stack.pop()
            node = self.builder.add(sid, pnode)
            rule = g.productions[action]
            self.pending_cost += int(g.rule_cost[action]) - 1 - self._cost[sid]
            t_new = self.t + 1
            if rule.is_epsilon:
                self.builder.add(rule.rhs[0].id, node)
            else:
                for s in reversed(rule.rhs):
                    self.stack.append((s.id, node, t_new))
        self.t += 1
        step = ActionStep(action, pstep, sid)
        self.steps.append(step)
        self.step_action.append(action)
        return step

    def sequence(self) -> ActionSequence:
        return ActionSequence(tuple(self.steps))

    def tree(self) -> ParseTree:
        if self.stack:
            raise ReplayError(f"premature end: {len(self.stack)} pending node(s)")
        return self.builder.freeze()


def replay_actions(actions: Iterable[int], g: Grammar) -> ActionSequence:
    r = Replay(g)
    for a in actions:
        r.apply(int(a))
    if not r.done:
        raise ReplayError(f"premature end: {len(r.stack)} pending node(s)")
    return r.sequence()


def actions_to_tree(seq: ActionSequence | Sequence[int], g: Grammar) -> ParseTree:
    steps = seq.steps if isinstance(seq, ActionSequence) else None
    actions = seq.actions if isinstance(seq, ActionSequence) else seq
    r = Replay(g)
    for t, a in enumerate(actions, start=1):
        step = r.apply(int(a))
        if steps is not None and steps[t - 1].parent_step != step.parent_step:
            raise ReplayError(f"parent step {steps[t - 1].parent_step} inconsistent with replay", t)
    return r.tree()


# ---------------------------------------------------------------------------
# twisted trees


def _copy_builder(tree: ParseTree) -> tuple[list[int], list[list[int]], list[int]]:
    return list(tree.labels), [list(c) for c in tree.children], list(tree.parent)


def _freeze(labels, children, parent, root) -> ParseTree:
    return ParseTree(tuple(labels), tuple(tuple(c) for c in children), tuple(parent), root)


def _ancestors(tree: ParseTree, i: int) -> set[int]:
    out = set()
    while i >= 0:
        out.add(i)
        i = tree.parent[i]
    return out


def _swap(tree: ParseTree, a: int, b: int) -> ParseTree:
    labels, children, parent = _copy_builder(tree)
    pa, pb = parent[a], parent[b]
    ia = children[pa].index(a)
    ib = children[pb].index(b)
    children[pa][ia] = b
    children[pb][ib] = a
    parent[a], parent[b] = pb, pa
    return _freeze(labels, children, parent, tree.root)


def _disjoint_pairs(tree: ParseTree, g: Grammar, same_label: bool) -> list[tuple[int, int]]:
    interior = [i for i in range(len(tree.labels)) if tree.children[i] and i != tree.root]
    anc = {i: _ancestors(tree, i) for i in interior}
    pairs = []
    for x, a in enumerate(interior):
        for b in interior[x + 1:]:
            if (tree.labels[a] == tree.labels[b]) != same_label:
                continue
            if a in anc[b] or b in anc[a]:
                continue
            pairs.append((a, b))
    return pairs


def twist(tree: ParseTree, g: Grammar, rng: np.random.Generator) -> ParseTree:
    """Swap two non-nested subtrees with different head nonterminals.

    Only swaps that break property 4 at both splice points are accepted;
    raises :class:`TwistInapplicable` when no such swap exists.
    """
    pairs = _disjoint_pairs(tree, g, same_label=False)
    if not pairs:
        raise TwistInapplicable("no two non-nested subtrees with different head types")
    for k in rng.permutation(len(pairs)):
        a, b = pairs[k]
        out = _swap(tree, a, b)
        if not node_valid(out, g, out.parent[a]) and not node_valid(out, g, out.parent[b]):
            return out
    raise TwistInapplicable("every candidate swap still matches a production")


def corrupt(tree: ParseTree, g: Grammar, rng: np.random.Generator) -> ParseTree:
    """Negative example for grammars where :func:`twist` does not apply.

    Swaps two same-head subtrees with different yields when possible, then
    breaks one node by relabelling a leaf (or, for tiny trees, inserting a
    leaf) so that property 4 fails.
    """
    pairs = [(a, b) for a, b in _disjoint_pairs(tree, g, same_label=True)
             if _subtree_yield(tree, a) != _subtree_yield(tree, b)]
    if pairs:
        a, b = pairs[int(rng.integers(len(pairs)))]
        tree = _swap(tree, a, b)

    terms = [s.id for s in g.terminals]
    leaves = [i for i in range(len(tree.labels)) if not tree.children[i] and tree.parent[i] >= 0]
    relabels = []
    for leaf in leaves:
        p = tree.parent[leaf]
        base = [tree.labels[c] for c in tree.children[p]]
        pos = tree.children[p].index(leaf)
        for t in terms:
            if t == tree.labels[leaf]:
                continue
            base[pos] = t
            if (tree.labels[p], tuple(base)) not in g.rule_lookup:
                relabels.append((leaf, t))
        base[pos] = tree.labels[leaf]
    labels, children, parent = _copy_builder(tree)
    if relabels:
        leaf, t = relabels[int(rng.integers(len(relabels)))]
        labels[leaf] = t
        return _freeze(labels, children, parent, tree.root)

    # every relabel is grammatical: grow a node until no production matches
    interior = [i for i in range(len(labels)) if children[i]]
    node = interior[int(rng.integers(len(interior)))]
    while True:
        t = terms[int(rng.integers(len(terms)))]
        pos = int(rng.integers(len(children[node]) + 1))
        new = len(labels)
        labels.append(t)
        children.append([])
        parent.append(node)
        children[node].insert(pos, new)
        if (labels[node], tuple(labels[c] for c in children[node])) not in g.rule_lookup:
            return _freeze(labels, children, parent, tree.root)


def _subtree_yield(tree: ParseTree, i: int) -> tuple[int, ...]:
    out = []
    stack = [i]
    while stack:
        j = stack.pop()
        if not tree.children[j]:
            out.append(tree.labels[j])
        stack.extend(reversed(tree.children[j]))
    return tuple(out)


def make_negative(tree: ParseTree, g: Grammar, rng: np.random.Generator) -> ParseTree:
    try:
        return twist(tree, g, rng)
    except TwistInapplicable:
        return corrupt(tree, g, rng)


def make_twisted_set(trees: Sequence[ParseTree], g: Grammar, rng: np.random.Generator) -> list[ParseTree]:
    """One syntactically broken counterpart per real tree."""
    if not trees:
        raise ValueError("empty corpus")
    out = []
    for t in trees:
        neg = make_negative(t, g, rng)
        assert not is_valid(neg, g)
        out.append(neg)
    return out


def canonical(tree: ParseTree) -> ParseTree:
    """Renumber the arena in pre-order."""
    b = TreeBuilder()
    stack = [(tree.root, -1)]
    while stack:
        i, p = stack.pop()
        j = b.add(tree.labels[i], p)
        stack.extend((c, j) for c in reversed(tree.children[i]))
    return b.freeze()


def tree_from_nested(g: Grammar, nested) -> ParseTree:
    """Build from ``(label, [children...])`` / ``label`` nesting; labels are symbol texts ('' = ε)."""
    b = TreeBuilder()

    def sid(text: str) -> int:
        return g.epsilon.id if text in ("", "eps") else g.symbol(text).id

    def rec(node, parent):
        if isinstance(node, tuple):
            lab, kids = node
            i = b.add(sid(lab), parent)
            for k in kids:
                rec(k, i)
        else:
            b.add(sid(node), parent)

    rec(nested, -1)
    return b.freeze()


def symbols_of(tree: ParseTree, g: Grammar) -> list[Symbol]:
    return [g.symbols[i] for i in tree.labels]
