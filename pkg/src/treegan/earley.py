"""Earley recognition with deterministic derivation extraction.

Prediction is filtered by one token of lookahead and nullable symbols are
handled with the Aycock-Horspool advance, so epsilon rules need no special
completion pass.  On ambiguity the lowest production id wins at every
choice point, which keeps parsed corpora reproducible.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Sequence

from .grammar import Grammar
from .parse_tree import ActionSequence, ParseTree, TreeBuilder, tree_to_actions


class ParseFailure(ValueError):
    def __init__(self, message: str, prefix_length: int):
        self.prefix_length = prefix_length
        super().__init__(f"{message} (longest recognised prefix: {prefix_length} tokens)")


class EarleyParser:
    def __init__(self, g: Grammar):
        self.g = g
        self.head = [p.head.id for p in g.productions]
        self.rhs = [tuple(s.id for s in p.rhs if not s.is_epsilon) for p in g.productions]
        self.is_nt = [not s.is_terminal for s in g.symbols]
        self.rules_of = {nt.id: g.rules_by_head[nt.id] for nt in g.nonterminals}
        self._analyse()

    def _analyse(self) -> None:
        g = self.g
        nullable: set[int] = set()
        changed = True
        while changed:
            changed = False
            for r, rhs in enumerate(self.rhs):
                h = self.head[r]
                if h not in nullable and all(s in nullable for s in rhs):
                    nullable.add(h)
                    changed = True
        first: dict[int, set[int]] = {nt.id: set() for nt in g.nonterminals}
        changed = True
        while changed:
            changed = False
            for r, rhs in enumerate(self.rhs):
                acc = first[self.head[r]]
                before = len(acc)
                for s in rhs:
                    if self.is_nt[s]:
                        acc |= first[s]
                        if s not in nullable:
                            break
                    else:
                        acc.add(s)
                        break
                if len(acc) != before:
                    changed = True
        self.nullable = nullable
        self.rule_nullable = [all(s in nullable for s in rhs) for rhs in self.rhs]
        self.rule_first = []
        for rhs in self.rhs:
            acc: set[int] = set()
            for s in rhs:
                if self.is_nt[s]:
                    acc |= first[s]
                    if s not in nullable:
                        break
                else:
                    acc.add(s)
                    break
            self.rule_first.append(frozenset(acc))

    # ------------------------------------------------------------------

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        out = []
        for k, tok in enumerate(tokens):
            if not self.g.has_symbol(tok) or not self.g.symbol(tok).is_terminal:
                raise ParseFailure(f"unknown token {tok!r} at position {k}", k)
            out.append(self.g.symbol(tok).id)
        return out

    def _chart(self, toks: list[int]):
        n = len(toks)
        items: list[list[tuple[int, int, int]]] = [[] for _ in range(n + 1)]
        itemsets: list[set[tuple[int, int, int]]] = [set() for _ in range(n + 1)]
        waiting: list[dict[int, list]] = [defaultdict(list) for _ in range(n + 1)]
        completed: list[dict[tuple[int, int], list[int]]] = [defaultdict(list) for _ in range(n + 1)]
        rhs, head, is_nt = self.rhs, self.head, self.is_nt
        rule_nullable, rule_first, nullable = self.rule_nullable, self.rule_first, self.nullable

        def add(k, item):
            if item not in itemsets[k]:
                itemsets[k].add(item)
                items[k].append(item)

        def predict(k, s):
            la = toks[k] if k < n else None
            for r in self.rules_of[s]:
                if rule_nullable[r] or la in rule_first[r]:
                    add(k, (r, 0, k))

        predict(0, self.g.start.id)
        last = 0
        for k in range(n + 1):
            cur = items[k]
            if not cur:
                break
            last = k
            predicted: set[int] = set()
            i = 0
            while i < len(cur):
                r, d, o = cur[i]
                i += 1
                body = rhs[r]
                if d == len(body):
                    h = head[r]
                    completed[k][(h, o)].append(r)
                    for (r2, d2, o2) in list(waiting[o].get(h, ())):
                        add(k, (r2, d2 + 1, o2))
                    continue
                s = body[d]
                if is_nt[s]:
                    waiting[k][s].append((r, d, o))
                    if s not in predicted:
                        predicted.add(s)
                        predict(k, s)
                    if s in nullable:
                        add(k, (r, d + 1, o))
                elif k < n and toks[k] == s:
                    add(k + 1, (r, d + 1, o))
        return itemsets, completed, last

    def recognize(self, tokens: Sequence[str]) -> bool:
        try:
            self.parse_tree(tokens)
        except ParseFailure:
            return False
        return True

    def parse_tree(self, tokens: Sequence[str]) -> ParseTree:
        toks = self.token_ids(tokens)
        n = len(toks)
        itemsets, completed, last = self._chart(toks)
        start = self.g.start.id
        if last < n:
            raise ParseFailure("input not in language", last)
        if not completed[n].get((start, 0)):
            raise ParseFailure("input not in language: incomplete derivation", n)
        nested = self._extract(toks, itemsets, completed)
        return self._to_tree(nested)

    def parse(self, tokens: Sequence[str]) -> ActionSequence:
        return tree_to_actions(self.parse_tree(tokens), self.g)

    # ------------------------------------------------------------------

    def _extract(self, toks, itemsets, completed):
        rhs, is_nt = self.rhs, self.is_nt
        active: set[tuple[int, int, int]] = set()

        def build(x, i, j):
            key = (x, i, j)
            if key in active:
                return None
            active.add(key)
            try:
                for r in sorted(completed[j].get((x, i), ())):
                    kids = split(r, len(rhs[r]), i, j)
                    if kids is not None:
                        return (r, kids)
                return None
            finally:
                active.discard(key)

        def split(r, d, i, q):
            # derive rhs[r][:d] over toks[i:q], returns child list or None
            if d == 0:
                return [] if q == i else None
            s = rhs[r][d - 1]
            if not is_nt[s]:
                p = q - 1
                if p < i or toks[p] != s or (r, d - 1, i) not in itemsets[p]:
                    return None
                rest = split(r, d - 1, i, p)
                return None if rest is None else rest + [s]
            for p in range(q, i - 1, -1):
                if (r, d - 1, i) not in itemsets[p] or (s, p) not in completed[q]:
                    continue
                sub = build(s, p, q)
                if sub is None:
                    continue
                rest = split(r, d - 1, i, p)
                if rest is not None:
                    return rest + [sub]
            return None

        out = build(self.g.start.id, 0, len(toks))
        if out is None:
            raise ParseFailure("no acyclic derivation", len(toks))
        return out

    def _to_tree(self, nested) -> ParseTree:
        g = self.g
        b = TreeBuilder()
        stack = [(nested, -1)]
        while stack:
            node, parent = stack.pop()
            if isinstance(node, int):
                b.add(node, parent)
                continue
            r, kids = node
            i = b.add(self.head[r], parent)
            if g.productions[r].is_epsilon:
                b.add(g.epsilon.id, i)
            else:
                stack.extend((k, i) for k in reversed(kids))
        return b.freeze()


_PARSERS: dict[int, EarleyParser] = {}


def parser_for(g: Grammar) -> EarleyParser:
    p = _PARSERS.get(id(g))
    if p is None or p.g is not g:
        p = EarleyParser(g)
        _PARSERS[id(g)] = p
    return p


def parse_sequence(tokens: Sequence[str], g: Grammar) -> ActionSequence:
    """Leftmost derivation of ``tokens`` as an action sequence."""
    return parser_for(g).parse(tokens)


def parses(tokens: Sequence[str], g: Grammar) -> bool:
    return parser_for(g).recognize(tokens)
