"""Polarity-driven contrastive groups, attention pooling of token vectors, and the hardest-pair margin loss.

Everything here works on plain numpy arrays supplied by the caller; no model
runtime is involved. Gradients are analytic and exact away from hinge kinks
and argmax/argmin switches.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .graph import ContractError, Quadruple, TemporalGraph

logger = logging.getLogger(__name__)

POLARITIES = ("positive", "negative", "neutral")


def load_polarity(path: str | Path, graph: TemporalGraph) -> dict[int, str]:
    """Read ``{relation_label: polarity}`` JSON into a map over every relation id.

    Relations missing from the file default to neutral.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {}
    for label, polarity in raw.items():
        if polarity not in POLARITIES:
            raise ValueError(f"{path}: bad polarity {polarity!r} for {label!r}")
        rid = graph.relations.get_id(label)
        if rid is None:
            logger.warning("%s: relation %r not in vocabulary, ignored", path, label)
            continue
        out[rid] = polarity
    missing = [r for r in graph.relations.ids() if r not in out]
    if missing:
        logger.warning("%d relations without polarity default to neutral", len(missing))
    for r in missing:
        out[r] = "neutral"
    return out


@dataclass(frozen=True)
class ContrastiveGroup:
    anchor: int
    positives: frozenset[int]
    negatives: frozenset[int]

    def to_dict(self) -> dict:
        return {"anchor": self.anchor, "positives": sorted(self.positives), "negatives": sorted(self.negatives)}


def build_groups(facts: Iterable[Quadruple], polarity: Mapping[int, str]) -> list[ContrastiveGroup]:
    edges: dict[int, dict[int, set[str]]] = {}
    entities = set()
    for s, p, o, _ in facts:
        entities.update((s, o))
        kind = polarity.get(p, "neutral")
        if kind == "neutral" or s == o:
            continue
        edges.setdefault(s, {}).setdefault(o, set()).add(kind)
        edges.setdefault(o, {}).setdefault(s, set()).add(kind)
    groups = []
    for anchor in sorted(entities):
        pos, neg = set(), set()
        for nb, kinds in edges.get(anchor, {}).items():
            if kinds == {"positive"}:
                pos.add(nb)
            elif kinds == {"negative"}:
                neg.add(nb)
        if pos and neg:
            groups.append(ContrastiveGroup(anchor, frozenset(pos), frozenset(neg)))
    return groups


def attention_weights(tokens: np.ndarray, params: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=float)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise ContractError("need k >= 1 token vectors as a (k, d) array")
    logits = tokens @ np.asarray(params, dtype=float)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def aggregate_entity(tokens: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Softmax-attention pooled entity vector ``sum_j lambda_j h_j``."""
    lam = attention_weights(tokens, params)
    return lam @ np.asarray(tokens, dtype=float)


@dataclass(frozen=True)
class HardestPair:
    anchor: int
    positive: int
    negative: int
    term: float


def _sqdist(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(d @ d)


def _mine(group: ContrastiveGroup, emb: Mapping[int, np.ndarray], margin: float) -> HardestPair:
    for e in (group.anchor, *group.positives, *group.negatives):
        if e not in emb:
            raise ContractError(f"no embedding for entity {e}")
    a = emb[group.anchor]
    # Sorted ids make the argmax/argmin tie-break deterministic.
    pos = max(sorted(group.positives), key=lambda e: _sqdist(a, emb[e]))
    neg = min(sorted(group.negatives), key=lambda e: _sqdist(a, emb[e]))
    term = max(0.0, _sqdist(a, emb[pos]) - _sqdist(a, emb[neg]) + margin)
    return HardestPair(group.anchor, pos, neg, term)


def contrastive_loss(
    groups: list[ContrastiveGroup], embeddings: Mapping[int, np.ndarray], margin: float = 1.0
) -> tuple[float, list[HardestPair]]:
    """Mean hinge over groups of ``|a - hardest_pos|^2 - |a - closest_neg|^2 + margin``."""
    emb = {k: np.asarray(v, dtype=float) for k, v in embeddings.items()}
    pairs = [_mine(g, emb, margin) for g in groups]
    if not pairs:
        return 0.0, []
    return sum(p.term for p in pairs) / len(pairs), pairs


def combined_objective(ce_loss: float, contrastive: float, alpha: float = 0.2) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return ce_loss
    if alpha == 1.0:
        return contrastive
    return alpha * contrastive + (1.0 - alpha) * ce_loss


def embed_entities(token_embeddings: Mapping[int, np.ndarray], params: np.ndarray) -> dict[int, np.ndarray]:
    return {e: aggregate_entity(h, params) for e, h in token_embeddings.items()}


def loss_from_tokens(
    groups: list[ContrastiveGroup], token_embeddings: Mapping[int, np.ndarray], params: np.ndarray, margin: float = 1.0
) -> float:
    return contrastive_loss(groups, embed_entities(token_embeddings, params), margin)[0]


def loss_gradients(
    groups: list[ContrastiveGroup], token_embeddings: Mapping[int, np.ndarray], params: np.ndarray, margin: float = 1.0
) -> tuple[float, dict[int, np.ndarray], np.ndarray]:
    """Loss plus gradients w.r.t. each entity's (k, d) token matrix and the attention vector."""
    params = np.asarray(params, dtype=float)
    tokens = {e: np.asarray(h, dtype=float) for e, h in token_embeddings.items()}
    emb = embed_entities(tokens, params)
    loss, pairs = contrastive_loss(groups, emb, margin)

    grad_e = {e: np.zeros_like(v) for e, v in emb.items()}
    scale = 1.0 / len(pairs) if pairs else 0.0
    for pair in pairs:
        if pair.term <= 0.0:
            continue
        a, p, n = emb[pair.anchor], emb[pair.positive], emb[pair.negative]
        grad_e[pair.anchor] += scale * (2 * (a - p) - 2 * (a - n))
        grad_e[pair.positive] += scale * (-2 * (a - p))
        grad_e[pair.negative] += scale * (2 * (a - n))

    grad_tokens = {}
    grad_params = np.zeros_like(params)
    for e, h in tokens.items():
        g = grad_e[e]
        lam = attention_weights(h, params)
        # d lambda_j / d z_i = lambda_j (delta_ij - lambda_i), z_j = h_j . params
        dz = lam * (h @ g - g @ emb[e])
        grad_tokens[e] = np.outer(lam, g) + np.outer(dz, params)
        grad_params += dz @ h
    return loss, grad_tokens, grad_params


def export_training_pairs(
    graph: TemporalGraph,
    bank,
    sampler_config,
    polarity: Mapping[int, str],
    shots: int,
    seed: int,
    out_path: str | Path,
    split: str = "train",
) -> int:
    """Write ``shots`` randomly chosen training examples as JSONL for an external fine-tuning job.

    The first line is a header carrying the seed and counts. Returns the number
    of records written.
    """
    from .prompts import build_prompt
    from .sampler import sample_histories

    queries = graph.queries(split)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if shots > len(queries):
        raise ValueError(f"requested {shots} shots but split {split!r} has only {len(queries)} usable queries")
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(queries), size=shots, replace=False).tolist())
    chosen = [queries[i] for i in picked]
    samples = sample_histories(graph, bank, chosen, sampler_config)

    lines = [
        json.dumps(
            {"header": True, "schema_version": 1, "split": split, "shots": shots, "seed": seed,
             "available": len(queries), "sampler_seed": sampler_config.seed},
            sort_keys=True,
        )
    ]
    for qi, q, sample in zip(picked, chosen, samples):
        record = build_prompt(graph, q, sample.facts)
        lines.append(
            json.dumps(
                {
                    "query_id": qi,
                    "prompt": record.full_prompt,
                    "gold": record.gold_answer,
                    "contrastive_groups": [g.to_dict() for g in build_groups(sample.facts, polarity)],
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return shots
