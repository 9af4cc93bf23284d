"""Context-free grammars: loading, validation, action vocabulary and masks.

Grammar files are line oriented::

    # palindromes over {0, 1}
    start P;
    term 0 1;
    P -> eps | 0 | 1 | 0 P 0 | 1 P 1

A statement ends at a newline or at an unquoted ``;``.  Tokens are
whitespace separated; a token wrapped in single quotes is always a literal
terminal name, which is how ``';'``, ``'|'`` or ``'eps'`` are written.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

NONTERMINAL = "nonterminal"
TERMINAL = "terminal"
EPSILON = "epsilon"

_RESERVED = {"->", "|", "eps", "start", "term"}


class GrammarError(ValueError):
    """Raised for malformed or invalid grammars.

    ``line`` is set for syntax errors, ``problems`` lists every validation
    failure found (undeclared, unproductive or unreachable symbols, ...).
    """

    def __init__(self, message: str, line: int | None = None, problems: Sequence[str] = ()):
        self.line = line
        self.problems = list(problems) or [message]
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Symbol:
    id: int
    text: str
    kind: str

    @property
    def is_terminal(self) -> bool:
        return self.kind != NONTERMINAL

    @property
    def is_epsilon(self) -> bool:
        return self.kind == EPSILON

    def __str__(self) -> str:
        return "ε" if self.is_epsilon else self.text


@dataclass(frozen=True)
class Production:
    id: int
    head: Symbol
    rhs: tuple[Symbol, ...]

    @property
    def is_epsilon(self) -> bool:
        return len(self.rhs) == 1 and self.rhs[0].is_epsilon

    def __str__(self) -> str:
        return f"{self.head} -> {' '.join(str(s) for s in self.rhs)}"


class Grammar:
    """An immutable, validated CFG with interned symbols.

    Build one with :func:`parse_grammar_text` or :meth:`Grammar.from_rules`.
    Nonterminals and terminals are kept in id order; ``terminals`` always
    contains the epsilon symbol.
    """

    def __init__(self, symbols: Sequence[Symbol], productions: Sequence[Production], start: Symbol):
        self.symbols = tuple(symbols)
        self.productions = tuple(productions)
        self.start = start
        self.nonterminals = tuple(s for s in self.symbols if s.kind == NONTERMINAL)
        self.terminals = tuple(s for s in self.symbols if s.is_terminal)
        self.epsilon = next(s for s in self.symbols if s.is_epsilon)
        self._by_text = {s.text: s for s in self.symbols if not s.is_epsilon}
        # dense row / column positions
        self.nt_index = {s.id: k for k, s in enumerate(self.nonterminals)}
        self.term_index = {s.id: k for k, s in enumerate(self.terminals)}
        by_head: dict[int, list[int]] = {s.id: [] for s in self.nonterminals}
        for p in self.productions:
            by_head[p.head.id].append(p.id)
        self.rules_by_head = {h: tuple(ids) for h, ids in by_head.items()}
        self.rule_lookup = {(p.head.id, tuple(s.id for s in p.rhs)): p.id for p in self.productions}
        self._validate()

    # construction ---------------------------------------------------------

    @classmethod
    def from_rules(
        cls,
        start: str,
        terminals: Iterable[str],
        rules: Iterable[tuple[str, Sequence[str]]],
    ) -> "Grammar":
        """Build from plain names; ``"eps"`` in a rhs denotes epsilon."""
        lines = [f"start {_quote(start)}", "term " + " ".join(_quote(t) for t in terminals)]
        for head, rhs in rules:
            body = " ".join("eps" if s == "eps" else _quote(s) for s in rhs)
            lines.append(f"{_quote(head)} -> {body}")
        return parse_grammar_text("\n".join(lines))

    # lookups --------------------------------------------------------------

    def symbol(self, text: str) -> Symbol:
        try:
            return self._by_text[text]
        except KeyError:
            raise KeyError(f"unknown symbol {text!r}") from None

    def has_symbol(self, text: str) -> bool:
        return text in self._by_text

    def terminal(self, text: str) -> Symbol:
        s = self.symbol(text)
        if not s.is_terminal:
            raise KeyError(f"{text!r} is a nonterminal")
        return s

    def rules_for(self, head: Symbol) -> tuple[Production, ...]:
        return tuple(self.productions[i] for i in self.rules_by_head[head.id])

    def find_rule(self, head: Symbol | int, rhs: Sequence[Symbol | int]) -> int | None:
        hid = head if isinstance(head, int) else head.id
        key = (hid, tuple(s if isinstance(s, int) else s.id for s in rhs))
        return self.rule_lookup.get(key)

    @property
    def n_productions(self) -> int:
        return len(self.productions)

    @property
    def n_terminals(self) -> int:
        return len(self.terminals)

    @property
    def n_actions(self) -> int:
        return len(self.productions) + len(self.terminals)

    @cached_property
    def completion_cost(self) -> dict[int, int]:
        return min_completion_cost(self)

    @cached_property
    def rule_cost(self) -> np.ndarray:
        """Minimum number of actions to finish a subtree started with each rule."""
        cost = self.completion_cost
        out = np.empty(len(self.productions), dtype=np.int64)
        for p in self.productions:
            out[p.id] = 1 + sum(symbol_cost(s, cost) for s in p.rhs)
        return out

    def render(self) -> str:
        return render_grammar(self)

    def fingerprint(self) -> int:
        digest = hashlib.blake2b(self.render().encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def summary(self) -> dict[str, int]:
        return {"nonterminals": len(self.nonterminals), "terminals": len(self.terminals),
                "productions": len(self.productions), "actions": self.n_actions}

    def __repr__(self) -> str:
        s = self.summary()
        return f"Grammar(|V|={s['nonterminals']}, |T|={s['terminals']}, |P|={s['productions']}, start={self.start})"

    # validation -----------------------------------------------------------

    def _validate(self) -> None:
        problems = []
        if self.start.kind != NONTERMINAL:
            problems.append(f"start symbol {self.start} is not a nonterminal")
        for nt in self.nonterminals:
            if not self.rules_by_head[nt.id]:
                problems.append(f"nonterminal {nt} heads no production")
        cost = _fixed_point_costs(self)
        for nt in self.nonterminals:
            if not math.isfinite(cost[nt.id]):
                problems.append(f"nonterminal {nt} is unproductive")
        reach = _reachable(self)
        for nt in self.nonterminals:
            if nt.id not in reach:
                problems.append(f"nonterminal {nt} is unreachable from {self.start}")
        if problems:
            raise GrammarError("; ".join(problems), problems=problems)


def symbol_cost(s: Symbol, cost: dict[int, int]) -> int:
    if s.is_epsilon:
        return 0
    if s.is_terminal:
        return 1
    return cost[s.id]


def _fixed_point_costs(g: Grammar) -> dict[int, float]:
    cost: dict[int, float] = {nt.id: math.inf for nt in g.nonterminals}
    changed = True
    while changed:
        changed = False
        for p in g.productions:
            c = 1.0
            for s in p.rhs:
                c += 0 if s.is_epsilon else 1 if s.is_terminal else cost[s.id]
            if c < cost[p.head.id]:
                cost[p.head.id] = c
                changed = True
    return cost


def _reachable(g: Grammar) -> set[int]:
    seen = {g.start.id}
    todo = [g.start.id]
    while todo:
        h = todo.pop()
        for pid in g.rules_by_head.get(h, ()):
            for s in g.productions[pid].rhs:
                if s.kind == NONTERMINAL and s.id not in seen:
                    seen.add(s.id)
                    todo.append(s.id)
    return seen


def min_completion_cost(g: Grammar) -> dict[int, int]:
    """Fewest actions (rule + terminal emissions) that complete a subtree.

    Keyed by nonterminal symbol id.  Epsilon is never emitted, so a rule
    ``v -> eps`` costs exactly one action.
    """
    return {k: int(v) for k, v in _fixed_point_costs(g).items()}


# ---------------------------------------------------------------------------
# action vocabulary and mask


@dataclass(frozen=True)
class ActionVocabulary:
    """Actions ``0..|P|-1`` are productions, ``|P|..|P|+|T|-1`` terminals."""

    n_productions: int
    terminals: tuple[Symbol, ...]

    @property
    def size(self) -> int:
        return self.n_productions + len(self.terminals)

    def __len__(self) -> int:
        return self.size

    @cached_property
    def _terminal_pos(self) -> dict[int, int]:
        return {s.id: k for k, s in enumerate(self.terminals)}

    def is_production(self, action: int) -> bool:
        return 0 <= action < self.n_productions

    def production_action(self, pid: int) -> int:
        return pid

    def terminal_action(self, sym: Symbol | int) -> int:
        sid = sym if isinstance(sym, int) else sym.id
        return self.n_productions + self._terminal_pos[sid]

    def terminal_of(self, action: int) -> Symbol:
        return self.terminals[action - self.n_productions]

    @property
    def actions(self) -> list[tuple[str, int]]:
        out = [("production", p) for p in range(self.n_productions)]
        out += [("terminal", s.id) for s in self.terminals]
        return out


def action_vocab(g: Grammar) -> ActionVocabulary:
    return ActionVocabulary(len(g.productions), g.terminals)


@dataclass(frozen=True)
class MaskMatrix:
    rows: np.ndarray  # (|V|, L) bool, read-only

    def row(self, k: int) -> np.ndarray:
        return self.rows[k]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape


def build_mask(g: Grammar) -> MaskMatrix:
    m = np.zeros((len(g.nonterminals), g.n_actions), dtype=bool)
    for p in g.productions:
        m[g.nt_index[p.head.id], p.id] = True
    m.setflags(write=False)
    return MaskMatrix(m)


# ---------------------------------------------------------------------------
# text format


def _quote(tok: str) -> str:
    needs = (not tok or tok in _RESERVED or any(c in tok for c in " \t\n;#'|")
             or tok.startswith("->"))
    if not needs:
        return tok
    if "'" in tok:
        raise GrammarError(f"cannot write token containing a quote: {tok!r}")
    return f"'{tok}'"


def _lex(text: str) -> list[tuple[int, list[tuple[str, bool]]]]:
    """Split into statements of (token, quoted) pairs tagged with line numbers."""
    statements = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        cur: list[tuple[str, bool]] = []
        i, n = 0, len(line)
        while i < n:
            ch = line[i]
            if ch.isspace():
                i += 1
            elif ch == "#":
                break
            elif ch == ";":
                if cur:
                    statements.append((lineno, cur))
                cur = []
                i += 1
            elif ch == "'":
                j = line.find("'", i + 1)
                if j < 0:
                    raise GrammarError("unterminated quoted token", line=lineno)
                cur.append((line[i + 1:j], True))
                i = j + 1
            else:
                j = i
                while j < n and not line[j].isspace() and line[j] not in ";#'":
                    j += 1
                cur.append((line[i:j], False))
                i = j
        if cur:
            statements.append((lineno, cur))
    return statements


def _split_alts(toks, lineno: int) -> list[list[tuple[str, bool]]]:
    alts: list[list[tuple[str, bool]]] = [[]]
    for tok in toks:
        if tok == ("|", False):
            alts.append([])
        elif tok == ("->", False):
            raise GrammarError("unexpected '->'", line=lineno)
        else:
            alts[-1].append(tok)
    for alt in alts:
        if not alt:
            raise GrammarError("empty alternative (write 'eps')", line=lineno)
        if ("eps", False) in alt and len(alt) > 1:
            raise GrammarError("'eps' must stand alone in its alternative", line=lineno)
    return alts


def parse_grammar_text(text: str) -> Grammar:
    start_name: str | None = None
    start_line = 0
    term_names: dict[str, int] = {}
    raw_rules: list[tuple[int, str, list[list[tuple[str, bool]]]]] = []
    order: list[str] = []  # first appearance of every name

    def see(name: str) -> None:
        if name not in seen:
            seen.add(name)
            order.append(name)

    seen: set[str] = set()
    last_rule_line = -1
    for lineno, toks in _lex(text):
        head, head_quoted = toks[0]
        if head == "start" and not head_quoted:
            if start_name is not None:
                raise GrammarError("duplicate start statement", line=lineno)
            if len(toks) != 2:
                raise GrammarError("expected 'start <nonterminal>'", line=lineno)
            start_name, start_line = toks[1][0], lineno
            see(start_name)
            last_rule_line = -1
        elif head == "term" and not head_quoted:
            if len(toks) < 2:
                raise GrammarError("empty term statement", line=lineno)
            for name, quoted in toks[1:]:
                if not quoted and name in _RESERVED:
                    raise GrammarError(f"reserved word {name!r} used as terminal", line=lineno)
                term_names.setdefault(name, lineno)
                see(name)
            last_rule_line = -1
        elif head == "|" and not head_quoted:
            # continuation line: more alternatives for the previous rule
            if not raw_rules or raw_rules[-1][0] != last_rule_line:
                raise GrammarError("'|' continuation without a preceding rule", line=lineno)
            toks = [(raw_rules[-1][1], False), ("->", False)] + toks[1:]
            _, h, alts = raw_rules.pop()
            rest = _split_alts(toks[2:], lineno)
            for alt in rest:
                for name, quoted in alt:
                    see("\0eps" if (name, quoted) == ("eps", False) else name)
            raw_rules.append((lineno, h, alts + rest))
            last_rule_line = lineno
        else:
            if len(toks) < 3 or toks[1] != ("->", False):
                raise GrammarError("expected '<nonterminal> -> ...'", line=lineno)
            if not head_quoted and head in _RESERVED:
                raise GrammarError(f"reserved word {head!r} on rule left side", line=lineno)
            alts = _split_alts(toks[2:], lineno)
            see(head)
            for alt in alts:
                for name, quoted in alt:
                    see("\0eps" if (name, quoted) == ("eps", False) else name)
            raw_rules.append((lineno, head, alts))
            last_rule_line = lineno

    if start_name is None:
        raise GrammarError("no start symbol")

    heads = {h for _, h, _ in raw_rules}
    problems = []
    for lineno, h, _ in raw_rules:
        if h in term_names:
            problems.append(f"terminal {h!r} on a rule's left side (line {lineno})")
    if start_name in term_names:
        problems.append(f"start symbol {start_name!r} declared as terminal (line {start_line})")
    for lineno, h, alts in raw_rules:
        for alt in alts:
            for name, quoted in alt:
                if (name, quoted) == ("eps", False):
                    continue
                if name not in term_names and name not in heads:
                    problems.append(f"undeclared symbol {name!r} (line {lineno})")
    if start_name not in heads and start_name not in term_names:
        problems.append(f"start symbol {start_name!r} heads no production")

    if problems:
        # still report productivity issues that are visible without the bad symbols
        problems += _prevalidate_productive(start_name, term_names, raw_rules)
        raise GrammarError("; ".join(dict.fromkeys(problems)), problems=list(dict.fromkeys(problems)))

    symbols: list[Symbol] = []
    by_name: dict[str, Symbol] = {}
    for name in order:
        if name == "\0eps":
            sym = Symbol(len(symbols), "", EPSILON)
        elif name in term_names:
            sym = Symbol(len(symbols), name, TERMINAL)
        else:
            sym = Symbol(len(symbols), name, NONTERMINAL)
        symbols.append(sym)
        by_name[name] = sym
    if "\0eps" not in by_name:
        by_name["\0eps"] = Symbol(len(symbols), "", EPSILON)
        symbols.append(by_name["\0eps"])

    productions: list[Production] = []
    seen_rules: set[tuple] = set()
    for lineno, h, alts in raw_rules:
        for alt in alts:
            rhs = tuple(by_name["\0eps" if t == ("eps", False) else t[0]] for t in alt)
            key = (h, tuple(s.id for s in rhs))
            if key in seen_rules:
                raise GrammarError(f"duplicate production {h} -> {' '.join(str(s) for s in rhs)}", line=lineno)
            seen_rules.add(key)
            productions.append(Production(len(productions), by_name[h], rhs))
    return Grammar(symbols, productions, by_name[start_name])


def _prevalidate_productive(start, term_names, raw_rules) -> list[str]:
    productive: set[str] = set()
    changed = True
    while changed:
        changed = False
        for _, h, alts in raw_rules:
            if h in productive:
                continue
            for alt in alts:
                if all(t == ("eps", False) or t[0] in term_names or t[0] in productive for t in alt):
                    productive.add(h)
                    changed = True
                    break
    heads = dict.fromkeys(h for _, h, _ in raw_rules)
    return [f"nonterminal {h} is unproductive" for h in heads if h not in productive and h not in term_names]


def render_grammar(g: Grammar) -> str:
    """Canonical text for ``g``; reparsing yields an isomorphic grammar."""
    lines = [f"start {_quote(g.start.text)};"]
    terms = [s for s in g.terminals if not s.is_epsilon]
    for i in range(0, len(terms), 16):
        lines.append("term " + " ".join(_quote(s.text) for s in terms[i:i + 16]) + ";")
    run_head, run = None, []
    for p in g.productions:
        alt = "eps" if p.is_epsilon else " ".join(_quote(s.text) for s in p.rhs)
        if p.head is not run_head and run:
            lines.append(f"{_quote(run_head.text)} -> " + " | ".join(run))
            run = []
        run_head = p.head
        run.append(alt)
    if run:
        lines.append(f"{_quote(run_head.text)} -> " + " | ".join(run))
    return "\n".join(lines) + "\n"


def load_grammar(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar_text(fh.read())


PALINDROME_01 = """\
start P;
term 0 1;
P -> eps | 0 | 1 | 0 P 0 | 1 P 1
"""


def palindrome_grammar() -> Grammar:
    """The five-rule palindrome grammar over {0, 1}."""
    return parse_grammar_text(PALINDROME_01)
