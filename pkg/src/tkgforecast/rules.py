"""Single-body temporal rules ``head <= body`` mined from same-subject fact orderings."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .graph import Quadruple

SCHEMA_VERSION = 1


class RuleFileError(ValueError):
    """Rule file is unreadable, malformed, or from another schema version."""


@dataclass(frozen=True)
class TemporalRule:
    head: int
    body: int
    support: int
    body_count: int

    def __post_init__(self):
        if not 0 < self.support <= self.body_count:
            raise ValueError(f"invalid rule counts support={self.support} body_count={self.body_count}")

    @property
    def confidence(self) -> float:
        return self.support / self.body_count


def _rank_key(rule: TemporalRule):
    return (-rule.confidence, -rule.support, rule.body)


@dataclass(frozen=True)
class RuleBank:
    top_k: int
    rules: dict[int, tuple[TemporalRule, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be positive")

    def bodies(self, head: int, k: int | None = None) -> list[int]:
        ranked = self.rules.get(head, ())
        return [r.body for r in ranked[: k or self.top_k]]

    def __len__(self) -> int:
        return sum(len(v) for v in self.rules.values())


def mine_rules(facts: Iterable[Quadruple], top_k: int = 20, min_support: int = 3) -> RuleBank:
    """Estimate ``head <= body`` confidences over subject instances.

    A subject witnesses the rule when some body fact on it is strictly older
    than some head fact on it. Confidence is the witnessing subject count over
    the number of subjects that ever carry the body relation.
    """
    first_seen: dict[int, dict[int, int]] = defaultdict(dict)
    last_seen: dict[int, dict[int, int]] = defaultdict(dict)
    for s, p, _, t in facts:
        rels_first = first_seen[s]
        if p not in rels_first or t < rels_first[p]:
            rels_first[p] = t
        rels_last = last_seen[s]
        if p not in rels_last or t > rels_last[p]:
            rels_last[p] = t

    body_count: dict[int, int] = defaultdict(int)
    support: dict[tuple[int, int], int] = defaultdict(int)
    for s, firsts in first_seen.items():
        lasts = last_seen[s]
        for body in firsts:
            body_count[body] += 1
        for head, t_head in lasts.items():
            for body, t_body in firsts.items():
                if t_body < t_head:
                    support[head, body] += 1

    grouped: dict[int, list[TemporalRule]] = defaultdict(list)
    for (head, body), n in support.items():
        if n >= min_support:
            grouped[head].append(TemporalRule(head, body, n, body_count[body]))
    rules = {head: tuple(sorted(lst, key=_rank_key)[:top_k]) for head, lst in sorted(grouped.items())}
    return RuleBank(top_k=top_k, rules=rules)


def save_rules(bank: RuleBank, path: str | Path, extra: dict | None = None) -> None:
    payload = {
        **(extra or {}),
        "schema_version": SCHEMA_VERSION,
        "top_k": bank.top_k,
        "rules": {
            str(head): [
                {"body_id": r.body, "support": r.support, "body_count": r.body_count, "confidence": r.confidence}
                for r in rules
            ]
            for head, rules in bank.rules.items()
        },
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_rules(path: str | Path) -> RuleBank:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RuleFileError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(payload, dict) or payload.get("schema_version") != SCHEMA_VERSION:
        found = payload.get("schema_version") if isinstance(payload, dict) else None
        raise RuleFileError(f"{path}: expected schema_version {SCHEMA_VERSION}, found {found!r}")
    try:
        rules = {
            int(head): tuple(
                TemporalRule(int(head), int(r["body_id"]), int(r["support"]), int(r["body_count"])) for r in lst
            )
            for head, lst in payload["rules"].items()
        }
        return RuleBank(top_k=int(payload["top_k"]), rules=rules)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise RuleFileError(f"{path}: malformed rule entry ({exc})") from None
