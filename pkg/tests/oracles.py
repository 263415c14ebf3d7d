"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data types; each routine
enumerates directly from its definition.
"""

import math
from fractions import Fraction

INF = float("inf")


def floyd_warshall(facts, entities):
    """All-pairs undirected hop counts; unreachable pairs are inf."""
    ents = sorted(entities)
    d = {(u, v): (0 if u == v else INF) for u in ents for v in ents}
    for s, _, o, _ in facts:
        if s != o:
            d[s, o] = d[o, s] = 1
    for k in ents:
        for i in ents:
            dik = d[i, k]
            if dik == INF:
                continue
            for j in ents:
                if dik + d[k, j] < d[i, j]:
                    d[i, j] = dik + d[k, j]
    return d


def view_distances(facts, s_q, T):
    view = [f for f in facts if f[3] < T]
    ents = {x for f in facts for x in (f[0], f[2])} | {s_q}
    return floyd_warshall(view, ents)


def tlr_reference(facts, rules_by_head, s_q, p_q, T, k):
    """Facts on s_q before T with relation p_q or one of the first k bodies; one copy each, time order."""
    bodies = [body for body, *_ in rules_by_head.get(p_q, [])][:k]
    out = []
    for fact in facts:  # facts are given in time-sorted graph order
        s, p, o, t = fact
        if s == s_q and t < T and (p == p_q or p in bodies) and fact not in out:
            out.append(fact)
    return out


def weight_reference(facts, s_q, T, tlr_facts, cand, gammas, delta, dist=None):
    """Composite weight of ``cand`` evaluated from the closed forms by enumeration."""
    g1, g2, g3, g4 = gammas
    view = [f for f in facts if f[3] < T]
    d = dist if dist is not None else view_distances(facts, s_q, T)
    s, p, o, t = cand
    hs, ho = d[s, s_q], d[o, s_q]
    w_n = 0.0 if (hs == INF or ho == INF) else math.exp(-g1 * (hs + ho - 1))
    n_spo = sum(1 for f in view if (f[0], f[1], f[2]) == (s, p, o))
    w_f = 1.0 / (g2 * math.log(n_spo) + 1.0)
    w_t = math.exp(-g3 * (T - t) / delta)
    n_so = sum(1 for f in view if (f[0], f[2]) in ((s, o), (o, s)))
    x = math.log(1.0 + g4 * n_so)
    w_c = x / (1.0 + x)
    ctx = {e for f in tlr_facts for e in (f[0], f[2])}
    w_cp = 1.0 if (s in ctx or o in ctx) else 0.0
    return w_n * w_f * (w_t + w_c + w_cp)


def rbmh_reference(facts, rules_by_head, s_q, p_q, T, N, gammas, delta, seed, k, pool_multiplier=10):
    """Step-by-step two-stage sampler with the same draw protocol as the library.

    Returns (stage1, sampled) as lists of quadruples.
    """
    import numpy as np

    stage1 = tlr_reference(facts, rules_by_head, s_q, p_q, T, k)
    if len(stage1) >= N:
        return stage1[len(stage1) - N :], []
    M = N - len(stage1)
    pool = []
    for idx, f in enumerate(facts):
        if f[3] < T and f[0] != s_q and f not in [c for _, c in pool]:
            pool.append((idx, f))
    dist = view_distances(facts, s_q, T)
    scored = [(weight_reference(facts, s_q, T, stage1, f, gammas, delta, dist), idx, f) for idx, f in pool]
    scored.sort(key=lambda x: (-x[0], -x[2][3], x[1]))
    top = scored[: pool_multiplier * M]
    rng = np.random.default_rng([seed, s_q, p_q, T])
    u = rng.random(len(top))
    positives = [(i, w, f) for i, (w, _, f) in enumerate(top) if w > 0]
    if len(positives) <= M:
        sampled = [f for _, _, f in positives]
    else:
        keyed = [(math.log(u[i]) / w if u[i] > 0 else -INF, i, f) for i, w, f in positives]
        keyed.sort(key=lambda x: (-x[0], x[1]))
        sampled = [f for _, _, f in keyed[:M]]
    return stage1, sampled


def psi_argmax(history, beta):
    """Winner of the fallback score, by exhaustive enumeration with exact fractions."""
    n = len(history)
    best = None
    for h in set(history):
        count = history.count(h)
        last = max(i for i, x in enumerate(history) if x == h)
        pos = n - last  # 1 = newest
        psi = Fraction(beta).limit_denominator(10**6) * Fraction(count, n) + (
            1 - Fraction(beta).limit_denominator(10**6)
        ) * (1 - Fraction(pos, n))
        key = (psi, count, last)
        if best is None or key > best[0]:
            best = (key, h)
    return best[1]


def threshold_grid(records):
    """Smallest observed similarity maximising F_I - F_C, by brute force with exact fractions."""
    correct = [p for p, c in records if c]
    incorrect = [p for p, c in records if not c]
    best = None
    for tau in sorted({p for p, _ in records}):
        f_i = Fraction(sum(1 for p in incorrect if p <= tau), len(incorrect))
        f_c = Fraction(sum(1 for p in correct if p <= tau), len(correct))
        sep = f_i - f_c
        if best is None or sep > best[1]:
            best = (tau, sep)
    return best
