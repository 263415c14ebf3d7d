"""Temporal-aware filtered Hits@k and the diagnostic breakdowns built on it."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .gateway import Embedder, cosine
from .graph import Query, TemporalGraph, canonical_label

logger = logging.getLogger(__name__)

KS = (1, 3, 10)
HISTORY_BINS = ((0, 2), (3, 9), (10, 19), (20, 50))


@dataclass(frozen=True)
class PredictionRecord:
    query: Query
    ranked_predictions: tuple[str, ...]
    history_entities: frozenset[str] = frozenset()
    history_length: int = 0
    gold_label: str | None = None

    def __post_init__(self):
        if len(set(self.ranked_predictions)) != len(self.ranked_predictions):
            raise ValueError("ranked predictions must be deduplicated")

    @property
    def historical(self) -> bool:
        return self.gold_label is not None and self.gold_label in self.history_entities


def make_record(
    graph: TemporalGraph,
    query: Query,
    ranked: Iterable[str],
    history_entities: Iterable[str] = (),
    history_length: int = 0,
) -> PredictionRecord:
    seen, ranked_clean = set(), []
    for r in ranked:
        r = canonical_label(r)
        if r not in seen:
            seen.add(r)
            ranked_clean.append(r)
    return PredictionRecord(
        query,
        tuple(ranked_clean),
        frozenset(canonical_label(h) for h in history_entities),
        history_length,
        graph.entities.label(query.gold) if query.gold is not None else None,
    )


class TrueFacts:
    """Objects known true for each ``(subject, relation, time)``."""

    def __init__(self, graph: TemporalGraph, splits: Sequence[str] | None = None):
        self.graph = graph
        facts = graph.quadruples if splits is None else [q for s in splits for q in graph.splits[s]]
        self._objects: dict[tuple[int, int, int], set[str]] = defaultdict(set)
        for s, p, o, t in facts:
            self._objects[s, p, t].add(graph.entities.label(o))

    def objects(self, subject: int, relation: int, time: int) -> set[str]:
        return self._objects.get((subject, relation, time), set())


def _as_truth(truth: "TrueFacts | TemporalGraph") -> "TrueFacts":
    return truth if isinstance(truth, TrueFacts) else TrueFacts(truth)


def filtered_rank(record: PredictionRecord, truth: TrueFacts) -> int | None:
    """1-based rank of the gold after dropping other answers true at the query time; None if absent."""
    gold = record.gold_label
    q = record.query
    co_true = truth.objects(q.subject, q.relation, q.time) - {gold}
    rank = 0
    for pred in record.ranked_predictions:
        if pred in co_true:
            continue
        rank += 1
        if pred == gold:
            return rank
    return None


def _scorable(records: Iterable[PredictionRecord]) -> list[PredictionRecord]:
    out = []
    for r in records:
        if r.query.gold is None:
            logger.warning("record without gold answer excluded: %s", r.query)
            continue
        out.append(r)
    return out


def hits_at_k(records: Iterable[PredictionRecord], truth: TrueFacts | TemporalGraph, k: int) -> float:
    truth = _as_truth(truth)
    if k not in KS:
        raise ValueError(f"k must be one of {KS}")
    recs = _scorable(records)
    if not recs:
        return 0.0
    hits = 0
    for r in recs:
        rank = filtered_rank(r, truth)
        hits += rank is not None and rank <= k
    return hits / len(recs)


def _hits_row(records: list[PredictionRecord], truth: TrueFacts) -> dict:
    ranks = [filtered_rank(r, truth) for r in records]
    row = {"count": len(records)}
    for k in KS:
        row[f"hits@{k}"] = (sum(1 for x in ranks if x is not None and x <= k) / len(records)) if records else 0.0
    return row


def history_bin(length: int) -> str:
    for lo, hi in HISTORY_BINS:
        if length <= hi:
            return f"{lo}-{hi}"
    lo, hi = HISTORY_BINS[-1]
    return f"{lo}-{hi}"


def bin_by_history(records: Iterable[PredictionRecord], truth: TrueFacts | TemporalGraph) -> dict[str, dict]:
    truth = _as_truth(truth)
    groups: dict[str, list[PredictionRecord]] = {f"{lo}-{hi}": [] for lo, hi in HISTORY_BINS}
    for r in _scorable(records):
        groups[history_bin(r.history_length)].append(r)
    return {name: _hits_row(recs, truth) for name, recs in groups.items()}


def split_by_historical(records: Iterable[PredictionRecord], truth: TrueFacts | TemporalGraph) -> dict[str, dict]:
    truth = _as_truth(truth)
    groups: dict[str, list[PredictionRecord]] = {"historical": [], "non-historical": []}
    for r in _scorable(records):
        groups["historical" if r.historical else "non-historical"].append(r)
    return {name: _hits_row(recs, truth) for name, recs in groups.items()}


@dataclass
class EvalReport:
    hits: dict[str, float]
    by_history: dict[str, dict]
    by_historical: dict[str, dict]
    count: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "count": self.count,
            "hits": self.hits,
            "by_history_length": self.by_history,
            "by_historical": self.by_historical,
        }
        d.update(self.extra)
        return d


def evaluate(records: Iterable[PredictionRecord], truth: TrueFacts | TemporalGraph) -> EvalReport:
    truth = _as_truth(truth)
    recs = _scorable(records)
    row = _hits_row(recs, truth)
    return EvalReport(
        hits={f"hits@{k}": row[f"hits@{k}"] for k in KS},
        by_history=bin_by_history(recs, truth),
        by_historical=split_by_historical(recs, truth),
        count=len(recs),
    )


def semantic_distance(prediction: str, gold: str, embedder: Embedder) -> float:
    return 1.0 - cosine(embedder.embed(prediction), embedder.embed(gold))


def semantic_distance_curve(records: Iterable[PredictionRecord], embedder: Embedder) -> dict[int, dict]:
    """Mean ``1 - cos(E(top1), E(gold))`` per history length; records without a prediction are skipped."""
    sums: dict[int, list[float]] = defaultdict(list)
    for r in _scorable(records):
        if not r.ranked_predictions:
            continue
        sums[r.history_length].append(semantic_distance(r.ranked_predictions[0], r.gold_label, embedder))
    return {n: {"mean": sum(v) / len(v), "count": len(v)} for n, v in sorted(sums.items())}
