from pathlib import Path

import pytest

from tkgforecast.graph import DatasetMeta, Quadruple, TemporalGraph, Vocabulary, load_dataset_dir

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "src" / "tkgforecast" / "data" / "fixture"

_acceptance_lines: list[str] = []


def make_graph(quads, n_entities=None, n_relations=None, granularity=1, epoch=None, splits=None):
    quads = [Quadruple(*q) for q in quads]
    n_entities = n_entities or (max([max(q.subject, q.object) for q in quads], default=0) + 1)
    n_relations = n_relations or (max([q.relation for q in quads], default=0) + 1)
    ents = Vocabulary({i: f"E{i}" for i in range(n_entities)}, "entities")
    rels = Vocabulary({i: f"R{i}" for i in range(n_relations)}, "relations")
    return TemporalGraph(quads, ents, rels, DatasetMeta("synthetic", granularity, epoch), splits=splits)


@pytest.fixture(scope="session")
def fixture_graph():
    return load_dataset_dir(FIXTURE_DIR)


@pytest.fixture
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(label: str, ok: bool, detail: str = "") -> None:
        _acceptance_lines.append(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
