"""BLEU-3, ROUGE-L, exact-match METEOR, and syntax/schema rates.

Inputs are token sequences or whitespace-separated strings.  Corpus scores
compare each candidate with the whole reference set.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_left
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

from .datasets import Schema, schema_check
from .earley import parses
from .grammar import Grammar

BLEU_SMOOTH = 1e-9
BLEU_ORDER = 3


def _toks(x) -> tuple[str, ...]:
    return tuple(x.split()) if isinstance(x, str) else tuple(x)


def _ngrams(toks: tuple, n: int) -> Counter:
    return Counter(toks[i:i + n] for i in range(len(toks) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def bleu3(candidates: Sequence, references: Sequence, order: int = BLEU_ORDER) -> float:
    """Corpus BLEU with uniform weights up to ``order``.

    Candidate n-gram counts are clipped by the largest count of that n-gram in
    any single reference.  The brevity penalty uses, per candidate, the
    reference length closest to the candidate's (ties go to the shorter).
    Orders for which no candidate is long enough are left out of the mean.
    """
    if not candidates or not references:
        raise ValueError("bleu3 needs nonempty candidates and references")
    cands = [_toks(c) for c in candidates]
    refs = [_toks(r) for r in references]
    max_ref: list[dict] = []
    for n in range(1, order + 1):
        best: dict = {}
        for r in refs:
            for gram, k in _ngrams(r, n).items():
                if k > best.get(gram, 0):
                    best[gram] = k
        max_ref.append(best)
    lengths = sorted({len(r) for r in refs})
    clipped = [0] * order
    totals = [0] * order
    c_len = r_len = 0
    for c in cands:
        c_len += len(c)
        r_len += _closest(lengths, len(c))
        for n in range(1, order + 1):
            grams = _ngrams(c, n)
            totals[n - 1] += sum(grams.values())
            clipped[n - 1] += sum(min(k, max_ref[n - 1].get(g, 0)) for g, k in grams.items())
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(order):
        if totals[n] == 0:
            continue  # no candidate has n-grams of this order: precision counts as 1
        num = clipped[n] if clipped[n] > 0 else BLEU_SMOOTH
        log_p += math.log(num / totals[n]) / order
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return min(1.0, bp * math.exp(log_p))


def _closest(lengths: list[int], n: int) -> int:
    k = bisect_left(lengths, n)
    if k == len(lengths):
        return lengths[-1]
    if lengths[k] == n or k == 0:
        return lengths[k]
    lo, hi = lengths[k - 1], lengths[k]
    return lo if n - lo <= hi - n else hi


# ---------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length via bit-parallel row updates."""
    if not a or not b:
        return 0
    masks: dict = {}
    for j, tok in enumerate(b):
        masks[tok] = masks.get(tok, 0) | (1 << j)
    full = (1 << len(b)) - 1
    v = full
    for tok in a:
        u = v & masks.get(tok, 0)
        v = ((v + u) | (v - u)) & full
    return len(b) - bin(v).count("1")


def _f_lcs(lcs: int, n_cand: int, n_ref: int) -> float:
    if lcs == 0:
        return 0.0
    p, r = lcs / n_cand, lcs / n_ref
    return 2 * p * r / (p + r)


def rouge_l(candidate, reference) -> float:
    c, r = _toks(candidate), _toks(reference)
    if not c or not r:
        raise ValueError("rouge_l needs nonempty token lists")
    return _f_lcs(lcs_length(c, r), len(c), len(r))


def rouge_l_corpus(candidates: Sequence, references: Sequence) -> float:
    """Mean over candidates of the best ROUGE-L F against any reference."""
    cands = [_toks(c) for c in candidates]
    refs = sorted({_toks(r) for r in references if len(_toks(r))}, key=len)
    if not cands or not refs:
        raise ValueError("rouge_l_corpus needs nonempty candidates and references")
    cache: dict = {}
    total = 0.0
    for c in cands:
        if c not in cache:
            cache[c] = _best_rouge(c, refs)
        total += cache[c]
    return total / len(cands)


def _best_rouge(c: tuple, refs: list) -> float:
    if not c:
        return 0.0
    best = 0.0
    for r in refs:
        # F is bounded by taking LCS = min(|c|, |r|)
        if _f_lcs(min(len(c), len(r)), len(c), len(r)) <= best:
            continue
        best = max(best, _f_lcs(lcs_length(c, r), len(c), len(r)))
        if best == 1.0:
            break
    return best


# ---------------------------------------------------------------------------
# METEOR (exact match only)


def meteor_alignment(candidate, reference) -> tuple[int, int]:
    """(matches, chunks) of an exact unigram alignment with the most matches and fewest chunks."""
    c, r = _toks(candidate), _toks(reference)
    cc, rc = Counter(c), Counter(r)
    target = sum(min(k, rc[t]) for t, k in cc.items())
    if target == 0:
        return 0, 0
    pos: dict = {}
    for j, tok in enumerate(r):
        pos.setdefault(tok, []).append(j)
    n = len(c)
    # suffix token counts of the candidate for the feasibility bound
    suffix = [Counter() for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1].copy()
        suffix[i][c[i]] += 1

    @lru_cache(maxsize=None)
    def go(i: int, used: int, prev: int, matched: int) -> float:
        need = target - matched
        if need > 0:
            avail = 0
            for tok, k in suffix[i].items():
                free = sum(1 for j in pos.get(tok, ()) if not used >> j & 1)
                avail += min(k, free)
            if avail < need:
                return math.inf
        if i == n:
            return 0 if need == 0 else math.inf
        best = go(i + 1, used, -2, matched)
        for j in pos.get(c[i], ()):
            if used >> j & 1:
                continue
            step = 0 if j == prev + 1 and prev >= 0 else 1
            best = min(best, step + go(i + 1, used | (1 << j), j, matched + 1))
        return best

    chunks = go(0, 0, -2, 0)
    return target, int(chunks)


def _fmean(m: int, n_cand: int, n_ref: int) -> float:
    if m == 0:
        return 0.0
    p, r = m / n_cand, m / n_ref
    return 10 * p * r / (r + 9 * p)


def meteor_exact(candidate, reference) -> float:
    c, r = _toks(candidate), _toks(reference)
    if not c or not r:
        raise ValueError("meteor_exact needs nonempty token lists")
    m, chunks = meteor_alignment(c, r)
    if m == 0:
        return 0.0
    return _fmean(m, len(c), len(r)) * (1.0 - 0.5 * (chunks / m) ** 3)


def meteor_corpus(candidates: Sequence, references: Sequence) -> float:
    """Mean over candidates of the best METEOR score against any reference."""
    cands = [_toks(c) for c in candidates]
    refs = list({_toks(r): None for r in references if len(_toks(r))})
    if not cands or not refs:
        raise ValueError("meteor_corpus needs nonempty candidates and references")
    ref_counts = [Counter(r) for r in refs]
    cache: dict = {}
    total = 0.0
    for c in cands:
        if c not in cache:
            cache[c] = _best_meteor(c, refs, ref_counts)
        total += cache[c]
    return total / len(cands)


def _best_meteor(c: tuple, refs: list, ref_counts: list) -> float:
    if not c:
        return 0.0
    cc = Counter(c)
    bounds = []
    for k, (r, rc) in enumerate(zip(refs, ref_counts)):
        m = sum(min(v, rc[t]) for t, v in cc.items())
        bounds.append((_fmean(m, len(c), len(r)), k))
    bounds.sort(reverse=True)
    best = 0.0
    for bound, k in bounds:
        if bound <= best:
            break
        best = max(best, meteor_exact(c, refs[k]))
    return best


# ---------------------------------------------------------------------------
# syntax / schema


def syntax_rate(candidates: Sequence, g: Grammar) -> float:
    if not candidates:
        raise ValueError("syntax_rate needs candidates")
    return sum(parses(_toks(c), g) for c in candidates) / len(candidates)


def schema_rate(candidates: Sequence, schema: Schema, g: Grammar) -> float:
    """Fraction of candidates that parse under ``g`` and pass :func:`schema_check`."""
    if not candidates:
        raise ValueError("schema_rate needs candidates")
    return sum(schema_check(_toks(c), schema, g).valid for c in candidates) / len(candidates)


@dataclass
class EvalReport:
    bleu3: float
    meteor: float
    rouge_l: float
    syntax: float
    schema: float | None
    n_candidates: int
    n_references: int

    def __post_init__(self):
        for k in ("bleu3", "meteor", "rouge_l", "syntax", "schema"):
            v = getattr(self, k)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{k}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["schema"] is None:
            del d["schema"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        rows = [(k, f"{v:.5f}" if isinstance(v, float) else str(v)) for k, v in self.to_dict().items()]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v:>10}" for k, v in rows)


def evaluate(candidates: Sequence, references: Sequence, g: Grammar, schema: Schema | None = None) -> EvalReport:
    return EvalReport(
        bleu3=bleu3(candidates, references),
        meteor=meteor_corpus(candidates, references),
        rouge_l=rouge_l_corpus(candidates, references),
        syntax=syntax_rate(candidates, g),
        schema=None if schema is None else schema_rate(candidates, schema, g),
        n_candidates=len(candidates),
        n_references=len(references),
    )
