"""Synthetic corpora: letter palindromes and schema-bearing SELECT queries.

Every corpus is a deterministic function of its :class:`CorpusSpec`
(including the seed).  SQL grammars are schema-free in structure but their
lexical rules are drawn from a schema, so a generated grammar can derive
queries that violate the schema; the corpus sampler never does.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .earley import ParseFailure, parser_for
from .grammar import Grammar, render_grammar
from .parse_tree import ActionSequence, replay_actions

NUMERIC, TEXT = "numeric", "text"
LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
SQL_KEYWORDS = ("select", "from", "where", "and", "count", "min", "max",
                ",", "(", ")", ";", "=", "!=", ">", "<")
AGGREGATES = ("count", "min", "max")
OPERATORS = ("=", "!=", ">", "<")
TEXT_OPERATORS = ("=", "!=")


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Column:
    name: str
    type: str

    def __post_init__(self):
        if self.type not in (NUMERIC, TEXT):
            raise ValueError(f"column type must be {NUMERIC!r} or {TEXT!r}, got {self.type!r}")


@dataclass
class Schema:
    tables: dict  # name -> list[Column]

    def __post_init__(self):
        for name, cols in self.tables.items():
            if not cols:
                raise ValueError(f"table {name!r} has no columns")
            names = [c.name for c in cols]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate column in table {name!r}")

    def columns(self, table: str) -> list[Column]:
        return self.tables[table]

    def column(self, table: str, name: str) -> Column | None:
        for c in self.tables.get(table, ()):
            if c.name == name:
                return c
        return None

    def all_columns(self) -> list[str]:
        """Distinct column names in first-appearance order."""
        seen: dict[str, None] = {}
        for cols in self.tables.values():
            for c in cols:
                seen.setdefault(c.name)
        return list(seen)

    def to_json(self) -> str:
        return json.dumps({"tables": {t: [{"col": c.name, "type": c.type} for c in cols]
                                      for t, cols in self.tables.items()}}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Schema":
        data = json.loads(text)
        return cls({t: [Column(c["col"], c["type"]) for c in cols] for t, cols in data["tables"].items()})

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def demo_schema() -> Schema:
    """A small schema using the table and column names of the sample queries."""
    N, T = NUMERIC, TEXT
    return Schema({
        "America": [Column("authenticated", T), Column("alight", N), Column("cookstove", N)],
        "Danmark": [Column("driftpin", N), Column("deject", N), Column("gainfully", T)],
        "Hungary": [Column("hedy", T), Column("acoustically", N)],
        "Jamaica": [Column("jacarta", N), Column("hanuman", T)],
        "Brazil": [Column("endogenous", N), Column("epigraphical", N), Column("aalesund", T)],
    })


# ---------------------------------------------------------------------------
# word list

COUNTRIES = (
    "America", "Danmark", "Hungary", "Jamaica", "Brazil", "Argentina", "Austria", "Belgium",
    "Bolivia", "Canada", "Chile", "Colombia", "Cuba", "Ecuador", "Egypt", "Estonia", "Finland",
    "France", "Germany", "Ghana", "Greece", "Iceland", "India", "Ireland", "Italy", "Japan",
    "Kenya", "Latvia", "Malta", "Mexico", "Morocco", "Nepal", "Norway", "Panama", "Peru",
    "Poland", "Portugal", "Romania", "Senegal", "Spain", "Sweden", "Tunisia", "Uganda",
    "Uruguay", "Vietnam", "Zambia",
)
SAMPLE_WORDS = ("authenticated", "alight", "driftpin", "deject", "hedy", "acoustically", "cookstove",
                "gainfully", "aalesund", "hanuman", "jacarta", "endogenous", "epigraphical")
_ONSETS = ("b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
           "br", "ch", "dr", "fl", "gr", "kl", "pr", "sh", "st", "tr")
_NUCLEI = ("a", "e", "i", "o", "u", "ai", "ea", "ou")
_CODAS = ("", "", "", "n", "r", "s", "t", "l", "m", "ck", "nd")


def word_list(n: int, seed: int = 20240101) -> list[str]:
    """``n`` distinct lowercase pseudo-words; the sample words come first."""
    rng = np.random.default_rng(seed)
    out = list(SAMPLE_WORDS[:n])
    seen = set(out) | {c.lower() for c in COUNTRIES} | set(SQL_KEYWORDS)
    while len(out) < n:
        k = int(rng.integers(2, 5))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _NUCLEI[rng.integers(len(_NUCLEI))]
                    + _CODAS[rng.integers(len(_CODAS))] for _ in range(k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class CorpusSpec:
    kind: str                     # "PLD" or "SQL"
    n_train: int = 10_000
    n_test: int = 1_000
    n_letters: int = 52
    n_tables: int = 12
    n_numeric_cols: int = 5
    n_text_cols: int = 3
    n_numbers: int = 60
    n_strings: int = 44
    vocab_size: int = 1000
    termination_bias: float = 2.0
    max_actions: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("PLD", "SQL"):
            raise ValueError(f"unknown corpus kind {self.kind!r}")
        for name in ("n_train", "n_test", "n_letters", "n_tables", "n_numbers", "n_strings",
                     "vocab_size", "max_actions"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_numeric_cols < 0 or self.n_text_cols < 0 or self.n_numeric_cols + self.n_text_cols == 0:
            raise ValueError("tables need at least one column")
        if self.n_letters > len(LETTERS):
            raise ValueError(f"at most {len(LETTERS)} letters")
        if not (np.isfinite(self.termination_bias) and self.termination_bias > 0):
            raise ValueError("termination_bias must be positive and finite")


PRESETS = {
    "pld": CorpusSpec("PLD", 10_000, 1_000),
    "sql-a": CorpusSpec("SQL", 50_000, 5_000, n_tables=12, n_numeric_cols=5, n_text_cols=3,
                        n_numbers=60, n_strings=44, vocab_size=1000),
    "sql-b": CorpusSpec("SQL", 100_000, 5_000, n_tables=20, n_numeric_cols=6, n_text_cols=4,
                        n_numbers=100, n_strings=83, vocab_size=5000),
}
PRESETS["pld-desk"] = replace(PRESETS["pld"], n_train=2_000, n_test=200)
PRESETS["sql-a-desk"] = replace(PRESETS["sql-a"], n_train=2_000, n_test=200)
PRESETS["sql-b-desk"] = replace(PRESETS["sql-b"], n_train=2_000, n_test=200)


@dataclass
class Dataset:
    grammar: Grammar
    train: list  # token tuples
    test: list
    schema: Schema | None = None
    spec: CorpusSpec | None = None

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"grammar": out / "grammar.g", "train": out / "train.txt", "test": out / "test.txt"}
        paths["grammar"].write_text(render_grammar(self.grammar), encoding="utf-8")
        write_corpus(paths["train"], self.train)
        write_corpus(paths["test"], self.test)
        if self.schema is not None:
            paths["schema"] = out / "schema.json"
            self.schema.save(paths["schema"])
        if self.spec is not None:
            paths["spec"] = out / "spec.json"
            paths["spec"].write_text(json.dumps(asdict(self.spec), indent=1) + "\n", encoding="utf-8")
        return paths


def write_corpus(path, lines: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for toks in lines:
            fh.write(" ".join(toks) + "\n")


def read_corpus(path) -> list[tuple[str, ...]]:
    with open(path, encoding="utf-8") as fh:
        return [tuple(line.split()) for line in fh.read().splitlines()]


# ---------------------------------------------------------------------------
# derivation sampling


def default_rule_weights(g: Grammar, termination_bias: float = 2.0) -> np.ndarray:
    """Uniform weights, multiplied by ``termination_bias`` for rules that do not recurse."""
    w = np.ones(g.n_productions)
    for p in g.productions:
        if all(s.id != p.head.id for s in p.rhs):
            w[p.id] = termination_bias
    return w


def sample_derivation(g: Grammar, rng: np.random.Generator, weights: np.ndarray | None = None,
                      max_actions: int = 200, max_tries: int = 1000) -> ActionSequence:
    """Stochastic leftmost derivation; retries derivations longer than ``max_actions``."""
    weights = default_rule_weights(g) if weights is None else np.asarray(weights, dtype=np.float64)
    nP = g.n_productions
    probs = {}
    for head, ids in g.rules_by_head.items():
        w = weights[list(ids)]
        probs[head] = (np.array(ids), w / w.sum())
    for _ in range(max_tries):
        actions: list[int] = []
        stack = [g.start.id]
        while stack and len(actions) <= max_actions:
            sid = stack.pop()
            sym = g.symbols[sid]
            if sym.is_terminal:
                actions.append(nP + g.term_index[sid])
                continue
            ids, p = probs[sid]
            r = int(ids[np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right").clip(0, len(ids) - 1)])
            actions.append(r)
            stack.extend(s.id for s in reversed(g.productions[r].rhs) if not s.is_epsilon)
        if not stack and len(actions) <= max_actions:
            return replay_actions(actions, g)
    raise RuntimeError(f"no derivation within {max_actions} actions after {max_tries} tries")


def derivation_tokens(seq: ActionSequence, g: Grammar) -> tuple[str, ...]:
    nP = g.n_productions
    return tuple(g.terminals[a - nP].text for a in seq.actions if a >= nP)


# ---------------------------------------------------------------------------
# palindromes


def pld_grammar(n_letters: int = 52) -> Grammar:
    """``Pal -> eps | c | c Pal c`` for each of the first ``n_letters`` letters.

    The nonterminal is not called ``P`` because ``P`` is one of the letters.
    """
    letters = LETTERS[:n_letters]
    rules = [("Pal", ["eps"])] + [("Pal", [c]) for c in letters] + [("Pal", [c, "Pal", c]) for c in letters]
    return Grammar.from_rules("Pal", letters, rules)


def gen_pld(spec: CorpusSpec, rng: np.random.Generator | None = None) -> Dataset:
    if spec.kind != "PLD":
        raise ValueError("spec.kind must be PLD")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    g = pld_grammar(spec.n_letters)
    w = default_rule_weights(g, spec.termination_bias)
    lines = [derivation_tokens(sample_derivation(g, rng, w, spec.max_actions), g)
             for _ in range(spec.n_train + spec.n_test)]
    return Dataset(g, lines[:spec.n_train], lines[spec.n_train:], None, spec)


# ---------------------------------------------------------------------------
# SQL


def sql_grammar(schema: Schema, n_numbers: int, n_strings: int, vocab_size: int | None = None,
                strings: Sequence[str] | None = None, extra_words: Sequence[str] = ()) -> Grammar:
    """SELECT grammar whose lexical rules list the schema's tables and columns.

    ``vocab_size`` pads the terminal set with unused pool words so the
    action vocabulary reaches the requested size.
    """
    tables = list(schema.tables)
    cols = schema.all_columns()
    strings = list(strings) if strings is not None else [f'"{w}"' for w in word_list(n_strings, seed=7)]
    nums = [str(k) for k in range(n_numbers)]
    used = list(SQL_KEYWORDS) + tables + cols + nums + strings
    terms = list(used)
    if vocab_size is not None:
        taken = set(used)
        pad = [w for w in extra_words if w not in taken]
        need = vocab_size - len(used)
        if need > len(pad):
            raise ValueError(f"vocabulary of {vocab_size} needs {need} padding words, have {len(pad)}")
        terms += pad[:max(need, 0)]
    rules = [
        ("Q", ["select", "SELS", "from", "TABLE", "WHERE_OPT", ";"]),
        ("SELS", ["SEL"]), ("SELS", ["SEL", ",", "SELS"]),
        ("SEL", ["COL"]), ("SEL", ["AGG", "(", "COL", ")"]),
        *[("AGG", [a]) for a in AGGREGATES],
        ("WHERE_OPT", ["eps"]), ("WHERE_OPT", ["where", "CONDS"]),
        ("CONDS", ["COND"]), ("CONDS", ["COND", "and", "CONDS"]),
        ("COND", ["COL", "OP", "LIT"]),
        *[("OP", [o]) for o in OPERATORS],
        ("LIT", ["NUM"]), ("LIT", ["STR"]),
        *[("TABLE", [t]) for t in tables],
        *[("COL", [c]) for c in cols],
        *[("NUM", [x]) for x in nums],
        *[("STR", [x]) for x in strings],
    ]
    return Grammar.from_rules("Q", terms, rules)


def gen_sql_spec(spec: CorpusSpec, rng: np.random.Generator | None = None) -> tuple[Grammar, Schema]:
    """Random schema plus its SELECT grammar, sized by ``spec``."""
    if spec.kind != "SQL":
        raise ValueError("spec.kind must be SQL")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    per_table = spec.n_numeric_cols + spec.n_text_cols
    n_cols = spec.n_tables * per_table
    if spec.n_tables > len(COUNTRIES):
        raise ValueError(f"at most {len(COUNTRIES)} tables available")
    need = n_cols + spec.n_strings + len(SQL_KEYWORDS) + spec.n_tables + spec.n_numbers
    if spec.vocab_size < need:
        raise ValueError(f"vocab_size {spec.vocab_size} below the {need} words the grammar needs")
    pool = word_list(spec.vocab_size + n_cols + spec.n_strings)
    order = rng.permutation(len(pool))
    words = [pool[i] for i in order]
    col_words, str_words, pad = words[:n_cols], words[n_cols:n_cols + spec.n_strings], words[n_cols + spec.n_strings:]
    tables = [COUNTRIES[i] for i in sorted(rng.choice(len(COUNTRIES), spec.n_tables, replace=False))]
    schema_tables = {}
    k = 0
    for t in tables:
        cols = []
        types = [NUMERIC] * spec.n_numeric_cols + [TEXT] * spec.n_text_cols
        for ty in rng.permutation(types):
            cols.append(Column(col_words[k], str(ty)))
            k += 1
        schema_tables[t] = cols
    schema = Schema(schema_tables)
    g = sql_grammar(schema, spec.n_numbers, spec.n_strings, spec.vocab_size,
                    strings=[f'"{w}"' for w in str_words], extra_words=pad)
    return g, schema


def sql_literals(g: Grammar) -> tuple[list[str], list[str]]:
    """Numeric and string literal terminals of a SQL grammar."""
    def alts(head: str) -> list[str]:
        return [p.rhs[0].text for p in g.rules_for(g.symbol(head))]
    return alts("NUM"), alts("STR")


def _choose(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def sample_query(g: Grammar, schema: Schema, rng: np.random.Generator, termination_bias: float = 2.0,
                 max_items: int = 8) -> tuple[str, ...]:
    """One schema-consistent query; recursion follows the grammar's rule weights."""
    nums, strs = sql_literals(g)
    stop = termination_bias / (termination_bias + 1.0)
    table = _choose(rng, list(schema.tables))
    cols = schema.columns(table)
    toks = ["select"]
    n_sel = 1
    while n_sel < max_items and rng.random() >= stop:
        n_sel += 1
    for k in range(n_sel):
        if k:
            toks.append(",")
        col = _choose(rng, cols)
        if rng.random() < 0.5:
            toks.append(col.name)
        else:
            toks += [_choose(rng, AGGREGATES), "(", col.name, ")"]
    toks += ["from", table]
    if rng.random() >= 0.5:
        toks.append("where")
        n_cond = 1
        while n_cond < max_items and rng.random() >= stop:
            n_cond += 1
        for k in range(n_cond):
            if k:
                toks.append("and")
            col = _choose(rng, cols)
            if col.type == NUMERIC:
                toks += [col.name, _choose(rng, OPERATORS), _choose(rng, nums)]
            else:
                toks += [col.name, _choose(rng, TEXT_OPERATORS), _choose(rng, strs)]
    toks.append(";")
    return tuple(toks)


def gen_sql_corpus(g: Grammar, schema: Schema, n: int, rng: np.random.Generator,
                   termination_bias: float = 2.0) -> list[tuple[str, ...]]:
    return [sample_query(g, schema, rng, termination_bias) for _ in range(n)]


def gen_sql(spec: CorpusSpec, rng: np.random.Generator | None = None) -> Dataset:
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    g, schema = gen_sql_spec(spec, rng)
    lines = gen_sql_corpus(g, schema, spec.n_train + spec.n_test, rng, spec.termination_bias)
    return Dataset(g, lines[:spec.n_train], lines[spec.n_train:], schema, spec)


def generate_dataset(spec: CorpusSpec) -> Dataset:
    return gen_pld(spec) if spec.kind == "PLD" else gen_sql(spec)


def demo_sql_grammar() -> Grammar:
    """Grammar over :func:`demo_schema` with numbers 0..19 and a few string literals."""
    return sql_grammar(demo_schema(), 20, 4, strings=['"red"', '"blue"', '"north"', '"south"'])


# ---------------------------------------------------------------------------
# schema checking

_SQL_TOKEN = re.compile(r'"[^"]*"|!=|[(),;=<>]|[^\s(),;=<>!"]+|!')


def tokenize_sql(text: str) -> tuple[str, ...]:
    """Split raw query text such as ``select count(x) from T where y>3;``."""
    return tuple(_SQL_TOKEN.findall(text))


def _is_number(tok: str) -> bool:
    return tok.isdigit()


def _is_string(tok: str) -> bool:
    return len(tok) >= 2 and tok[0] == tok[-1] == '"'


@dataclass
class SchemaReport:
    valid: bool
    violations: list = field(default_factory=list)


def schema_check(tokens: Sequence[str] | str, schema: Schema, g: Grammar | None = None) -> SchemaReport:
    """Entity and relation checks for one query.

    With a grammar, a query that does not parse is reported as a syntax
    violation.  The checks themselves are token-level and tolerate broken
    queries: a missing or unknown table, columns outside the table,
    literal/column type mismatches and aggregates over non-columns.
    """
    toks = tokenize_sql(tokens) if isinstance(tokens, str) else tuple(tokens)
    out: list = []
    if g is not None:
        try:
            parser_for(g).parse_tree(toks)
        except ParseFailure as e:
            out.append(("syntax", str(e)))
    try:
        f = toks.index("from")
    except ValueError:
        f = len(toks)
    table = toks[f + 1] if f + 1 < len(toks) and toks[f + 1] not in SQL_KEYWORDS else None
    if table is None:
        out.append(("missing-table",))
    elif table not in schema.tables:
        out.append(("unknown-table", table))
    known = table in schema.tables if table else False

    def col_ref(tok: str):
        if known and schema.column(table, tok) is None:
            out.append(("column-not-in-table", table, tok))
        return schema.column(table, tok) if known else None

    # select list
    i = 1 if toks[:1] == ("select",) else 0
    while i < f:
        tok = toks[i]
        if tok in AGGREGATES:
            arg = toks[i + 2] if i + 2 < f and toks[i + 1] == "(" else None
            if arg is None or arg in (")", ","):
                out.append(("aggregate-without-column", tok))
            elif _is_number(arg) or _is_string(arg):
                out.append(("aggregate-over-literal", tok, arg))
            else:
                col_ref(arg)
            while i < f and toks[i] != ",":
                i += 1
            continue
        if tok not in (",", "(", ")"):
            if _is_number(tok) or _is_string(tok):
                out.append(("literal-in-select", tok))
            else:
                col_ref(tok)
        i += 1
    # where clause
    if "where" in toks:
        w = toks.index("where")
        i = w + 1
        while i < len(toks) and toks[i] != ";":
            if toks[i] == "and":
                i += 1
                continue
            col = toks[i]
            op = toks[i + 1] if i + 1 < len(toks) else None
            lit = toks[i + 2] if i + 2 < len(toks) else None
            if op not in OPERATORS or lit is None:
                out.append(("malformed-condition", col))
                break
            c = col_ref(col)
            if c is not None:
                if c.type == NUMERIC and not _is_number(lit):
                    out.append(("type-mismatch", table, col, lit))
                elif c.type == TEXT and not _is_string(lit):
                    out.append(("type-mismatch", table, col, lit))
                elif c.type == TEXT and op not in TEXT_OPERATORS:
                    out.append(("ordering-on-text", table, col, op))
            i += 3
    return SchemaReport(not out, out)
