"""Instruction prompts for object prediction and regex extraction of predicted entities."""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass
from typing import Sequence

from .graph import DatasetMeta, Quadruple, Query, TemporalGraph

INSTRUCTION = (
    "You must be able to correctly predict the next {object} from a given text consisting of multiple "
    'quadruplets in the form of "{time}:[{subject}, {relation}, {object_label}.{object}]" and the query '
    'in the form of "{time}:[{subject}, {relation}," in the end. You must generate {object_label}.{object}.'
)

_ANSWER_RE = re.compile(r"(?<![\w.])(\d+)\.((?:[^\s,\[\]]|,(?=[^\s,\[\]]))+)")
_TRAILING = ".,;:!?\"'`"
_HISTORY_OBJECT_RE = re.compile(r", (\d+)\.([^\]]*)\]\s*$")


def render_time(t: int, meta: DatasetMeta) -> str:
    if meta.epoch:
        day = dt.date.fromisoformat(meta.epoch) + dt.timedelta(days=t // meta.granularity)
        return day.isoformat()
    return f"{meta.time_prefix}{t}"


def render_answer(entity_id: int, label: str) -> str:
    return f"{entity_id}.{label}"


@dataclass(frozen=True)
class PromptRecord:
    instruction: str
    history_lines: tuple[str, ...]
    query_line: str
    gold_answer: str | None = None

    @property
    def full_prompt(self) -> str:
        return "\n".join((self.instruction, *self.history_lines, self.query_line))

    @property
    def context(self) -> str:
        """Prompt without the constant instruction paragraph."""
        return "\n".join((*self.history_lines, self.query_line))

    @classmethod
    def from_text(cls, prompt: str, gold_answer: str | None = None) -> "PromptRecord":
        lines = prompt.split("\n")
        if len(lines) < 2:
            raise ValueError("prompt needs an instruction line and a query line")
        return cls(lines[0], tuple(lines[1:-1]), lines[-1], gold_answer)

    def history_objects(self) -> list[str]:
        """Object labels of the history lines, oldest first."""
        out = []
        for line in self.history_lines:
            m = _HISTORY_OBJECT_RE.search(line)
            if m:
                out.append(m.group(2))
        return out


def history_line(graph: TemporalGraph, q: Quadruple) -> str:
    ents, rels = graph.entities, graph.relations
    return (
        f"{render_time(q.time, graph.meta)}: [{ents.label(q.subject)}, {rels.label(q.relation)}, "
        f"{render_answer(q.object, ents.label(q.object))}]"
    )


def query_line(graph: TemporalGraph, query: Query) -> str:
    return (
        f"{render_time(query.time, graph.meta)}: [{graph.entities.label(query.subject)}, "
        f"{graph.relations.label(query.relation)},"
    )


def build_prompt(graph: TemporalGraph, query: Query, history: Sequence[Quadruple]) -> PromptRecord:
    if any(a.time > b.time for a, b in zip(history, history[1:])):
        raise ValueError("history must be sorted by time ascending")
    gold = None
    if query.gold is not None:
        gold = render_answer(query.gold, graph.entities.label(query.gold))
    return PromptRecord(
        instruction=INSTRUCTION,
        history_lines=tuple(history_line(graph, q) for q in history),
        query_line=query_line(graph, query),
        gold_answer=gold,
    )


def _clean(label: str) -> str:
    label = label.rstrip(_TRAILING)
    # Drop a closing parenthesis only when it is unbalanced, so "X_(Turkey)" survives.
    while label.endswith(")") and label.count(")") > label.count("("):
        label = label[:-1].rstrip(_TRAILING)
    return label


def parse_answers(text: str) -> list[tuple[int, str]]:
    """All ``{id}.{label}`` mentions in order, deduplicated by label."""
    seen = set()
    out = []
    for m in _ANSWER_RE.finditer(text):
        label = _clean(m.group(2))
        if label and label not in seen:
            seen.add(label)
            out.append((int(m.group(1)), label))
    return out


def parse_prediction(text: str) -> list[str]:
    return [label for _, label in parse_answers(text)]
