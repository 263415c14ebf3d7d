"""Test-time filtering: accept, regenerate, or fall back to history-grounded entities."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .gateway import Embedder, GatewayError, GenerationRequest, Generator, cosine
from .graph import ContractError, canonical_label
from .prompts import PromptRecord, parse_prediction

ACCEPT_HISTORICAL = "accept-historical"
ACCEPT_SIMILAR = "accept-similar"
REJECT = "reject"


@dataclass(frozen=True)
class FilterConfig:
    tau: float = 0.6
    k: int = 1
    beta: float = 0.6
    num_sequences: int = 10
    max_new_tokens: int = 32
    temperature: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.k < 0:
            raise ValueError("k must be >= 0")


@dataclass
class Attempt:
    prediction: str | None
    similarity: float | None
    decision: str


@dataclass
class FilterTrace:
    query_id: int | str | None
    attempts: list[Attempt] = field(default_factory=list)
    fallback_used: bool = False
    final_prediction: str | None = None
    ranked_predictions: list[str] = field(default_factory=list)
    fallback_scores: dict[str, float] | None = None
    flagged: bool = False
    generation_calls: int = 0
    similarity_calls: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FilterTrace":
        d = dict(d)
        d["attempts"] = [Attempt(**a) for a in d.get("attempts", [])]
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


def similarity(prediction: str, context: str, embedder: Embedder) -> float:
    if not prediction or not context:
        raise ContractError("similarity needs two non-empty texts")
    return cosine(embedder.embed(prediction), embedder.embed(context))


def fallback_scores(history: Sequence[str], beta: float = 0.6) -> dict[str, float]:
    """Frequency/recency mix per entity of an oldest-first occurrence list.

    Recency is ``1 - pos/|H|`` with ``pos`` the 1-based position of the entity's
    latest occurrence counted from the newest end, so the newest entity scores
    highest.
    """
    if not history:
        raise ContractError("fallback scoring needs a non-empty history")
    n = len(history)
    counts = Counter(history)
    pos = {}
    for i, h in enumerate(reversed(history), start=1):
        pos.setdefault(h, i)
    return {h: beta * (counts[h] / n) + (1 - beta) * (1 - pos[h] / n) for h in counts}


def fallback_ranking(history: Sequence[str], beta: float = 0.6) -> list[str]:
    """Entities by score, then frequency, then recency.

    Scores are compared exactly (beta read as the decimal it prints as), so
    entities whose scores tie exactly fall through to the tie-breaks instead
    of being ordered by rounding noise.
    """
    if not history:
        raise ContractError("fallback scoring needs a non-empty history")
    b = Fraction(repr(float(beta)))
    counts = Counter(history)
    latest = {h: i for i, h in enumerate(history)}
    # score * n = b * count + (1 - b) * (n - pos), with n - pos = latest index + 1
    exact = {h: b * counts[h] + (1 - b) * (latest[h] + 1) for h in counts}
    return sorted(counts, key=lambda h: (-exact[h], -counts[h], -latest[h]))


def filter_predict(
    record: PromptRecord,
    generator: Generator,
    embedder: Embedder,
    config: FilterConfig = FilterConfig(),
    query_id: int | str | None = None,
) -> FilterTrace:
    history = [canonical_label(h) for h in record.history_objects()]
    history_set = set(history)
    context = record.context
    trace = FilterTrace(query_id)
    last_candidates: list[str] = []

    for attempt in range(config.k + 1):
        request = GenerationRequest(
            record.full_prompt,
            num_sequences=config.num_sequences,
            max_new_tokens=config.max_new_tokens,
            temperature=config.temperature,
            seed=config.seed + attempt,
        )
        trace.generation_calls += 1
        try:
            texts = generator.generate(request).texts
        except GatewayError:
            texts = ()
        candidates = _ranked_candidates(texts)
        if not candidates:
            trace.attempts.append(Attempt(None, None, REJECT))
            continue
        last_candidates = candidates
        pred = candidates[0]
        if pred in history_set:
            trace.attempts.append(Attempt(pred, None, ACCEPT_HISTORICAL))
        else:
            trace.similarity_calls += 1
            phi = similarity(pred, context, embedder)
            decision = ACCEPT_SIMILAR if phi >= config.tau else REJECT
            trace.attempts.append(Attempt(pred, phi, decision))
            if decision == REJECT:
                continue
        trace.final_prediction = pred
        trace.ranked_predictions = candidates
        return trace

    trace.fallback_used = True
    if history:
        trace.fallback_scores = fallback_scores(history, config.beta)
        trace.ranked_predictions = fallback_ranking(history, config.beta)
        trace.final_prediction = trace.ranked_predictions[0]
    else:
        trace.flagged = True
        trace.ranked_predictions = last_candidates
        trace.final_prediction = last_candidates[0] if last_candidates else None
    return trace


def _ranked_candidates(texts: Sequence[str]) -> list[str]:
    seen, out = set(), []
    for text in texts:
        for label in parse_prediction(text):
            label = canonical_label(label)
            if label not in seen:
                seen.add(label)
                out.append(label)
    return out


def calibrate_threshold(records: Sequence[tuple[float, bool]]) -> tuple[float, float]:
    """Observed similarity maximising ``F_incorrect(tau) - F_correct(tau)``.

    Returns ``(tau, separation)``; ties go to the smaller threshold.
    """
    phi = np.array([r[0] for r in records], dtype=float)
    correct = np.array([bool(r[1]) for r in records])
    if correct.all() or not correct.any():
        raise ValueError("calibration needs at least one correct and one incorrect record")
    c = np.sort(phi[correct])
    i = np.sort(phi[~correct])
    taus = np.unique(phi)
    # Integer numerators over the common denominator keep tie detection exact.
    below_i = np.searchsorted(i, taus, side="right").astype(np.int64)
    below_c = np.searchsorted(c, taus, side="right").astype(np.int64)
    sep = below_i * len(c) - below_c * len(i)
    best = int(np.argmax(sep))
    return float(taus[best]), float(sep[best]) / (len(c) * len(i))
