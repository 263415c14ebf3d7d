"""History sampling for a query: rule-guided retrieval plus weighted multi-hop expansion."""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .graph import ContractError, GraphView, Quadruple, Query, TemporalGraph
from .rules import RuleBank


@dataclass(frozen=True)
class SamplerConfig:
    max_history: int = 50
    gamma1: float = 0.6
    gamma2: float = 0.6
    gamma3: float = 0.01
    gamma4: float = 0.1
    pool_multiplier: int = 10
    seed: int = 0
    rule_top_k: int | None = None

    def __post_init__(self):
        if self.max_history < 1:
            raise ValueError("max_history must be >= 1")
        if self.pool_multiplier < 1:
            raise ValueError("pool_multiplier must be >= 1")
        if min(self.gammas) < 0:
            raise ValueError("gamma parameters must be nonnegative")

    @property
    def gammas(self) -> tuple[float, float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4)

    @classmethod
    def from_gammas(cls, gammas: Sequence[float], **kwargs) -> "SamplerConfig":
        g1, g2, g3, g4 = gammas
        return cls(gamma1=g1, gamma2=g2, gamma3=g3, gamma4=g4, **kwargs)


@dataclass(frozen=True)
class WeightedCandidate:
    quadruple: Quadruple
    w_n: float
    w_f: float
    w_t: float
    w_c: float
    w_cp: float

    @property
    def composite(self) -> float:
        return composite_weight(self.w_n, self.w_f, self.w_t, self.w_c, self.w_cp)


# Scalar weight components. Hops of ``None`` mean unreachable.


def neighbor_weight(hop_s: int | None, hop_o: int | None, gamma1: float) -> float:
    if hop_s is None or hop_o is None:
        return 0.0
    return math.exp(-gamma1 * (hop_s + hop_o - 1))


def frequency_weight(n_spo: int, gamma2: float) -> float:
    return 1.0 / (gamma2 * math.log(n_spo) + 1.0)


def time_weight(age: float, granularity: float, gamma3: float) -> float:
    return math.exp(-gamma3 * age / granularity)


def connection_weight(n_so: int, gamma4: float) -> float:
    x = math.log(1.0 + gamma4 * n_so)
    return x / (1.0 + x)


def composite_weight(w_n: float, w_f: float, w_t: float, w_c: float, w_cp: float) -> float:
    return w_n * w_f * (w_t + w_c + w_cp)


class _ViewStats:
    """Per-fact count arrays for one view, shared by every query at the same cutoff."""

    def __init__(self, view: GraphView):
        self.view = view

    @cached_property
    def arrays(self) -> tuple[np.ndarray, ...]:
        a = self.view.array
        return a[:, 0], a[:, 1], a[:, 2], a[:, 3]

    @cached_property
    def spo_counts(self) -> np.ndarray:
        s, p, o, _ = self.arrays
        if len(s) == 0:
            return np.zeros(0, dtype=np.int64)
        _, inv, counts = np.unique(np.stack([s, p, o], axis=1), axis=0, return_inverse=True, return_counts=True)
        return counts[inv.reshape(-1)]

    @cached_property
    def so_counts(self) -> np.ndarray:
        s, _, o, _ = self.arrays
        if len(s) == 0:
            return np.zeros(0, dtype=np.int64)
        pair = np.stack([np.minimum(s, o), np.maximum(s, o)], axis=1)
        _, inv, counts = np.unique(pair, axis=0, return_inverse=True, return_counts=True)
        return counts[inv.reshape(-1)]

    @cached_property
    def first_occurrence(self) -> np.ndarray:
        """Mask keeping the first row of every duplicated quadruple."""
        a = self.view.array
        mask = np.zeros(len(a), dtype=bool)
        if len(a):
            _, first = np.unique(a, axis=0, return_index=True)
            mask[first] = True
        return mask


_stats_cache_attr = "_sampler_stats"


def _stats(view: GraphView) -> _ViewStats:
    stats = view.__dict__.get(_stats_cache_attr)
    if stats is None:
        stats = _ViewStats(view)
        view.__dict__[_stats_cache_attr] = stats
    return stats


def _tlr_indices(view: GraphView, bank: RuleBank | None, query: Query, top_k: int | None) -> np.ndarray:
    s, p, _, _ = _stats(view).arrays
    allowed = [query.relation]
    if bank is not None:
        allowed += bank.bodies(query.relation, top_k)
    mask = (s == query.subject) & np.isin(p, allowed) & _stats(view).first_occurrence
    # Views are time-sorted prefixes, so index order is (time, insertion) order.
    return np.flatnonzero(mask)


def tlr_retrieve(
    graph: TemporalGraph, bank: RuleBank | None, query: Query, top_k: int | None = None, view: GraphView | None = None
) -> list[Quadruple]:
    """Facts on the query subject before T whose relation is the query relation or a top rule body."""
    view = view if view is not None else graph.snapshot_before(query.time)
    facts = view.quadruples
    return [facts[i] for i in _tlr_indices(view, bank, query, top_k)]


def context_entities(facts: Iterable[Quadruple]) -> set[int]:
    ents = set()
    for q in facts:
        ents.add(q.subject)
        ents.add(q.object)
    return ents


def score_candidate(
    view: GraphView, query: Query, tlr_context: set[int], quad: Quadruple, config: SamplerConfig
) -> WeightedCandidate:
    if quad.time >= query.time:
        raise ContractError(f"candidate time {quad.time} is not before query time {query.time}")
    if quad.subject == query.subject:
        raise ContractError("candidate subject equals the query subject")
    hops = view.hop_distances(query.subject)
    counts = view.triple_counts.get((quad.subject, quad.relation, quad.object), 0)
    if counts < 1:
        raise ContractError(f"candidate {quad} is not in the view")
    n_so = view.pair_counts.get((min(quad.subject, quad.object), max(quad.subject, quad.object)), 0)
    g1, g2, g3, g4 = config.gammas
    return WeightedCandidate(
        quad,
        w_n=neighbor_weight(hops.get(quad.subject), hops.get(quad.object), g1),
        w_f=frequency_weight(counts, g2),
        w_t=time_weight(query.time - quad.time, view.graph.granularity, g3),
        w_c=connection_weight(n_so, g4),
        w_cp=1.0 if (quad.subject in tlr_context or quad.object in tlr_context) else 0.0,
    )


def _by_value(values: np.ndarray, fn) -> np.ndarray:
    # Evaluate fn once per distinct input so equal inputs get bit-identical outputs.
    if len(values) == 0:
        return np.zeros(0, dtype=float)
    uniq, inv = np.unique(values, return_inverse=True)
    table = np.array([fn(v) for v in uniq.tolist()], dtype=float)
    return table[inv.reshape(-1)]


def _score_rows(view: GraphView, query: Query, tlr_context: set[int], rows: np.ndarray, config: SamplerConfig):
    stats = _stats(view)
    s, p, o, t = (x[rows] for x in stats.arrays)
    g1, g2, g3, g4 = config.gammas
    hops = view.hop_distances(query.subject)
    hop_s = np.array([hops.get(x, -1) for x in s.tolist()], dtype=np.int64)
    hop_o = np.array([hops.get(x, -1) for x in o.tolist()], dtype=np.int64)
    reachable = (hop_s >= 0) & (hop_o >= 0)
    w_n = np.where(reachable, _by_value(hop_s + hop_o, lambda h: math.exp(-g1 * (h - 1))), 0.0)
    w_f = _by_value(stats.spo_counts[rows], lambda n: frequency_weight(n, g2))
    w_t = _by_value(query.time - t, lambda age: time_weight(age, view.graph.granularity, g3))
    w_c = _by_value(stats.so_counts[rows], lambda n: connection_weight(n, g4))
    ctx = np.array(sorted(tlr_context), dtype=np.int64)
    w_cp = (np.isin(s, ctx) | np.isin(o, ctx)).astype(float)
    composite = w_n * w_f * (w_t + w_c + w_cp)
    return composite, (w_n, w_f, w_t, w_c, w_cp)


@dataclass
class SampleResult:
    facts: list[Quadruple]
    stage1: list[Quadruple]
    sampled: list[Quadruple] = field(default_factory=list)
    pool_size: int = 0


def rbmh_sample_detailed(
    graph: TemporalGraph,
    bank: RuleBank | None,
    query: Query,
    config: SamplerConfig,
    view: GraphView | None = None,
) -> SampleResult:
    view = view if view is not None else graph.snapshot_before(query.time)
    facts = view.quadruples
    stage1_rows = _tlr_indices(view, bank, query, config.rule_top_k)
    n = config.max_history
    if len(stage1_rows) >= n:
        kept = [facts[i] for i in stage1_rows[len(stage1_rows) - n :]]
        return SampleResult(kept, kept)
    stage1 = [facts[i] for i in stage1_rows]
    m = n - len(stage1_rows)

    stats = _stats(view)
    s = stats.arrays[0]
    rows = np.flatnonzero((s != query.subject) & stats.first_occurrence)
    if len(rows) == 0:
        return SampleResult(stage1, stage1)

    weights, _ = _score_rows(view, query, context_entities(stage1), rows, config)
    times = stats.arrays[3][rows]
    # Highest weight first; ties go to the more recent fact, then the earlier row.
    order = np.lexsort((rows, -times, -weights))
    top = order[: config.pool_multiplier * m]
    top_w = weights[top]

    rng = np.random.default_rng([config.seed, query.subject, query.relation, query.time])
    u = rng.random(len(top))
    positive = top_w > 0
    if positive.sum() <= m:
        chosen = top[positive]
    else:
        # Exponential-key sampling without replacement: the m largest log(u)/w.
        with np.errstate(divide="ignore"):
            keys = np.where(positive, np.log(u) / np.where(positive, top_w, 1.0), -np.inf)
        chosen = top[np.argsort(-keys, kind="stable")[:m]]

    picked_rows = np.sort(np.concatenate([stage1_rows, rows[chosen]]))
    return SampleResult(
        facts=[facts[i] for i in picked_rows],
        stage1=stage1,
        sampled=[facts[i] for i in np.sort(rows[chosen])],
        pool_size=len(rows),
    )


def rbmh_sample(
    graph: TemporalGraph,
    bank: RuleBank | None,
    query: Query,
    config: SamplerConfig,
    view: GraphView | None = None,
) -> list[Quadruple]:
    """At most ``config.max_history`` facts before the query time, oldest first."""
    return rbmh_sample_detailed(graph, bank, query, config, view).facts


def sample_histories(
    graph: TemporalGraph, bank: RuleBank | None, queries: Sequence[Query], config: SamplerConfig, jobs: int = 1
) -> list[SampleResult]:
    """Sample every query, reusing one view per distinct query time. Output follows input order."""
    by_time: dict[int, list[int]] = defaultdict(list)
    for i, q in enumerate(queries):
        by_time[q.time].append(i)
    results: list[SampleResult | None] = [None] * len(queries)

    def run(T: int) -> None:
        view = graph.snapshot_before(T)
        for i in by_time[T]:
            results[i] = rbmh_sample_detailed(graph, bank, queries[i], config, view)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, sorted(by_time)))
    else:
        for T in sorted(by_time):
            run(T)
    return results  # type: ignore[return-value]


REACH_CLASSES = ("1-hop", "multi-hop", "unreachable")


def classify_reachability(view: GraphView, query: Query) -> str:
    if query.gold is None:
        raise ContractError("query has no gold object")
    hop = view.hop_distances(query.subject).get(query.gold)
    if hop is None:
        return "unreachable"
    # A gold equal to the query subject (hop 0) is counted with direct neighbours.
    return "1-hop" if hop <= 1 else "multi-hop"


def analyze_reachability(graph: TemporalGraph, queries: Iterable[Query]) -> dict[str, int]:
    counts = dict.fromkeys(REACH_CLASSES, 0)
    views: dict[int, GraphView] = {}
    for q in queries:
        view = views.get(q.time)
        if view is None:
            view = views[q.time] = graph.snapshot_before(q.time)
        counts[classify_reachability(view, q)] += 1
    return counts
