"""Slow, independent reference computations used as test oracles."""
import itertools
import math

EXAMPLE_QUERIES = {
    1: "select count(authenticated) from America where alight>3;",
    2: "select driftpin, min(deject) from Danmark where driftpin=16;",
    3: "select hedy from Hungary;",
    4: "select count(17), min(acoustically) from;",
    5: "select max(cookstove), gainfully, min ()), min(buttonhole) from America;",
    6: "select aalesund from Brazil where hanuman acoustically Hungary;",
    7: "select min(jacarta) from Jamaica;",
    8: "select min(endogenous) from Brazil where epigraphical=1;",
    9: "select hedy from Hungary where deject!=2;",
}
MALFORMED_QUERIES = (4, 5, 6)


def brute_lcs(a, b):
    """Longest common subsequence by trying subsets of the shorter sequence."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(any(x == y for y in it) for x in sub):
                return k
    return 0


def brute_rouge_l(c, r):
    lcs = brute_lcs(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return 2 * p * rec / (p + rec)


def brute_bleu(cands, refs, order=3, eps=1e-9):
    """Corpus BLEU written from the definition with plain lists."""
    num = [0] * order
    den = [0] * order
    c_len = r_len = 0
    for c in cands:
        c_len += len(c)
        best = None
        for r in refs:
            d = abs(len(r) - len(c))
            if best is None or d < best[0] or (d == best[0] and len(r) < best[1]):
                best = (d, len(r))
        r_len += best[1]
        for n in range(1, order + 1):
            grams = [tuple(c[i:i + n]) for i in range(len(c) - n + 1)]
            den[n - 1] += len(grams)
            for gram in set(grams):
                ref_max = max(sum(1 for i in range(len(r) - n + 1) if tuple(r[i:i + n]) == gram) for r in refs)
                num[n - 1] += min(grams.count(gram), ref_max)
    if c_len == 0:
        return 0.0
    s = 0.0
    for n in range(order):
        if den[n]:
            s += math.log((num[n] or eps) / den[n]) / order
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return min(1.0, bp * math.exp(s))


def brute_meteor(c, r):
    """Exact-match METEOR by enumerating every maximal one-to-one alignment."""
    pairs = [(i, j) for i in range(len(c)) for j in range(len(r)) if c[i] == r[j]]
    best_m, best_chunks = 0, 0
    for k in range(min(len(c), len(r)), 0, -1):
        found = None
        for combo in itertools.combinations(pairs, k):
            if len({i for i, _ in combo}) < k or len({j for _, j in combo}) < k:
                continue
            al = sorted(combo)
            chunks = 1 + sum(1 for (i0, j0), (i1, j1) in zip(al, al[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1))
            found = chunks if found is None else min(found, chunks)
        if found is not None:
            best_m, best_chunks = k, found
            break
    if best_m == 0:
        return 0.0
    p, rec = best_m / len(c), best_m / len(r)
    f = 10 * p * rec / (rec + 9 * p)
    return f * (1 - 0.5 * (best_chunks / best_m) ** 3)
