"""Quadruple storage, vocabularies, time-restricted views and structural statistics."""

from __future__ import annotations

import bisect
import json
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class ParseError(ValueError):
    """A dataset row could not be parsed."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class VocabularyError(KeyError):
    """An id or label does not resolve in a vocabulary."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class Quadruple(NamedTuple):
    subject: int
    relation: int
    object: int
    time: int


@dataclass(frozen=True)
class Query:
    subject: int
    relation: int
    time: int
    gold: int | None = None

    def __post_init__(self):
        if self.time <= 0:
            raise ValueError(f"query time must be > 0, got {self.time}")


def canonical_label(label: str) -> str:
    """Underscore-joined form used in prompts and for label matching."""
    return "_".join(label.strip().split())


class Vocabulary:
    """Bijective id <-> label map."""

    def __init__(self, id_to_label: dict[int, str], name: str = "vocab"):
        self.name = name
        self._id_to_label = dict(id_to_label)
        self._label_to_id: dict[str, int] = {}
        for i, label in self._id_to_label.items():
            key = canonical_label(label)
            if key in self._label_to_id:
                raise VocabularyError(f"{name}: duplicate label {label!r}")
            self._label_to_id[key] = i

    @classmethod
    def from_file(cls, path: str | Path, name: str = "vocab") -> "Vocabulary":
        mapping: dict[int, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) < 2:
                    raise ParseError(f"{path}:{lineno}: expected 'label<TAB>id'")
                try:
                    idx = int(parts[-1])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-integer id {parts[-1]!r}") from None
                if idx in mapping:
                    raise VocabularyError(f"{path}:{lineno}: duplicate id {idx}")
                mapping[idx] = "\t".join(parts[:-1])
        return cls(mapping, name=name)

    def __len__(self) -> int:
        return len(self._id_to_label)

    def __contains__(self, idx: int) -> bool:
        return idx in self._id_to_label

    def label(self, idx: int) -> str:
        try:
            return canonical_label(self._id_to_label[idx])
        except KeyError:
            raise VocabularyError(f"{self.name}: unknown id {idx}") from None

    def id(self, label: str) -> int:
        try:
            return self._label_to_id[canonical_label(label)]
        except KeyError:
            raise VocabularyError(f"{self.name}: unknown label {label!r}") from None

    def get_id(self, label: str) -> int | None:
        return self._label_to_id.get(canonical_label(label))

    def ids(self) -> list[int]:
        return sorted(self._id_to_label)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_label == other._id_to_label


@dataclass(frozen=True)
class DatasetMeta:
    """How timestamps map onto the dataset's calendar.

    ``granularity`` is the decay divisor for recency weighting; ``epoch`` is an
    ISO date for day-indexed data (rendered dates are ``epoch + t // granularity``
    days). Without an epoch timestamps are rendered as ``time_prefix + str(t)``.
    """

    name: str = "dataset"
    granularity: int = 1
    epoch: str | None = None
    time_prefix: str = ""

    def __post_init__(self):
        if self.granularity <= 0:
            raise ValueError("granularity must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetMeta":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(**{k: raw[k] for k in ("name", "granularity", "epoch", "time_prefix") if k in raw})


class TemporalGraph:
    """Immutable collection of quadruples sorted by time (ties keep file order)."""

    def __init__(
        self,
        quadruples: list[Quadruple],
        entities: Vocabulary,
        relations: Vocabulary,
        meta: DatasetMeta | None = None,
        splits: dict[str, list[Quadruple]] | None = None,
    ):
        self.meta = meta or DatasetMeta()
        self.entities = entities
        self.relations = relations
        for q in quadruples:
            _check_quad(q, entities, relations)
        # sorted() is stable, so equal timestamps keep insertion order.
        self.quadruples: tuple[Quadruple, ...] = tuple(sorted(quadruples, key=lambda q: q.time))
        self.splits = {k: tuple(v) for k, v in (splits or {}).items()}
        self._times = [q.time for q in self.quadruples]
        arr = np.array(self.quadruples, dtype=np.int64).reshape(-1, 4)
        arr.setflags(write=False)
        self.array = arr

    @property
    def granularity(self) -> int:
        return self.meta.granularity

    def __len__(self) -> int:
        return len(self.quadruples)

    def snapshot_before(self, T: float) -> "GraphView":
        """View of the facts with timestamp strictly below ``T``."""
        if T < 0:
            raise ValueError("T must be >= 0")
        if math.isinf(T):
            return GraphView(self, len(self.quadruples), T)
        return GraphView(self, bisect.bisect_left(self._times, T), T)

    def queries(self, split: str) -> list[Query]:
        """One object-prediction query per fact of ``split`` (facts at t=0 have no history and are skipped)."""
        return [Query(q.subject, q.relation, q.time, q.object) for q in self.splits[split] if q.time > 0]

    def stats(self) -> dict:
        times = self._times
        return {
            "name": self.meta.name,
            "splits": {k: len(v) for k, v in self.splits.items()},
            "num_quadruples": len(self.quadruples),
            "num_entities": len(self.entities),
            "num_relations": len(self.relations),
            "timestamp_range": [times[0], times[-1]] if times else None,
            "granularity": self.meta.granularity,
        }

    def structurally_equal(self, other: "TemporalGraph") -> bool:
        return (
            self.quadruples == other.quadruples
            and self.splits == other.splits
            and self.entities == other.entities
            and self.relations == other.relations
            and self.meta == other.meta
        )


def _check_quad(q: Quadruple, entities: Vocabulary, relations: Vocabulary, where: str = "") -> None:
    if q.subject not in entities:
        raise VocabularyError(f"{where}unknown entity id {q.subject}")
    if q.object not in entities:
        raise VocabularyError(f"{where}unknown entity id {q.object}")
    if q.relation not in relations:
        raise VocabularyError(f"{where}unknown relation id {q.relation}")
    if q.time < 0:
        raise ParseError(f"{where}negative timestamp {q.time}")


@dataclass
class GraphView:
    """Prefix of a graph's time-sorted facts; statistics are computed lazily."""

    graph: TemporalGraph
    size: int
    cutoff: float
    _hop_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return self.size

    def __iter__(self):
        return iter(self.graph.quadruples[: self.size])

    @property
    def quadruples(self) -> tuple[Quadruple, ...]:
        return self.graph.quadruples[: self.size]

    @property
    def array(self) -> np.ndarray:
        return self.graph.array[: self.size]

    @cached_property
    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {}
        for s, _, o, _ in self.quadruples:
            adj.setdefault(s, set()).add(o)
            adj.setdefault(o, set()).add(s)
        return adj

    @cached_property
    def triple_counts(self) -> Counter:
        return Counter((s, p, o) for s, p, o, _ in self.quadruples)

    @cached_property
    def pair_counts(self) -> Counter:
        # Keyed by the unordered pair so both orientations share one count.
        return Counter((min(s, o), max(s, o)) for s, _, o, _ in self.quadruples)

    def hop_distances(self, source: int) -> dict[int, int]:
        if source not in self._hop_cache:
            self._hop_cache[source] = hop_distances(self, source)
        return self._hop_cache[source]


def hop_distances(view: GraphView, source: int) -> dict[int, int]:
    """Undirected BFS hop counts from ``source``; unreachable entities are absent."""
    if source not in view.graph.entities:
        raise VocabularyError(f"unknown entity id {source}")
    adj = view.adjacency
    dist = {source: 0}
    frontier = deque([source])
    while frontier:
        u = frontier.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                frontier.append(v)
    return dist


def triple_frequency(view: GraphView, s: int, p: int, o: int) -> int:
    return view.triple_counts.get((s, p, o), 0)


def pair_cooccurrence(view: GraphView, s: int, o: int) -> int:
    """Facts linking ``s`` and ``o`` in either orientation."""
    return view.pair_counts.get((min(s, o), max(s, o)), 0)


def snapshot_before(graph: TemporalGraph, T: float) -> GraphView:
    return graph.snapshot_before(T)


def read_quadruples(path: str | Path) -> list[Quadruple]:
    quads = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            # Some benchmark dumps carry a trailing fifth column; it is ignored.
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                s, p, o, t = (int(x) for x in parts[:4])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field in {line.strip()!r}") from None
            if t < 0:
                raise ParseError(f"{path}:{lineno}: negative timestamp {t}")
            quads.append(Quadruple(s, p, o, t))
    return quads


def ingest_dataset(
    train_path: str | Path,
    valid_path: str | Path,
    test_path: str | Path,
    entity_path: str | Path,
    relation_path: str | Path,
    granularity: int | None = None,
    meta: DatasetMeta | None = None,
) -> TemporalGraph:
    meta = meta or DatasetMeta()
    if granularity is not None:
        meta = DatasetMeta(meta.name, granularity, meta.epoch, meta.time_prefix)
    entities = Vocabulary.from_file(entity_path, "entities")
    relations = Vocabulary.from_file(relation_path, "relations")
    splits = {}
    for name, path in zip(SPLITS, (train_path, valid_path, test_path)):
        quads = read_quadruples(path)
        for lineno, q in enumerate(quads, start=1):
            _check_quad(q, entities, relations, where=f"{path}: fact {lineno}: ")
        if not quads:
            logger.warning("split %s (%s) is empty", name, path)
        splits[name] = quads
    graph = TemporalGraph(
        [q for name in SPLITS for q in splits[name]], entities, relations, meta=meta, splits=splits
    )
    logger.info("ingested %s: %s", meta.name, {k: len(v) for k, v in splits.items()})
    return graph


def load_dataset_dir(path: str | Path, granularity: int | None = None) -> TemporalGraph:
    """Load ``train/valid/test.txt`` plus ``entity2id.txt``/``relation2id.txt`` from a directory.

    An optional ``dataset.json`` supplies :class:`DatasetMeta`.
    """
    d = Path(path)
    meta = DatasetMeta.from_file(d / "dataset.json") if (d / "dataset.json").exists() else DatasetMeta(d.name)
    return ingest_dataset(
        d / "train.txt",
        d / "valid.txt",
        d / "test.txt",
        d / "entity2id.txt",
        d / "relation2id.txt",
        granularity=granularity,
        meta=meta,
    )
