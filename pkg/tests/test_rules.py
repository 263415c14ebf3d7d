import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkgforecast.graph import Quadruple
from tkgforecast.rules import RuleBank, RuleFileError, TemporalRule, load_rules, mine_rules, save_rules


def brute_force_confidences(facts):
    """(head, body) -> (support, body_count) by scanning every ordered fact pair per subject."""
    subjects = {f[0] for f in facts}
    relations = {f[1] for f in facts}
    out = {}
    for body in relations:
        carriers = [s for s in subjects if any(f[0] == s and f[1] == body for f in facts)]
        for head in relations:
            witnesses = [
                s
                for s in carriers
                if any(
                    b[0] == s and h[0] == s and b[1] == body and h[1] == head and b[3] < h[3]
                    for b in facts
                    for h in facts
                )
            ]
            if witnesses:
                out[head, body] = (len(witnesses), len(carriers))
    return out


def test_perfect_precedence():
    facts = [Quadruple(s, 1, 9, 1) for s in range(4)] + [Quadruple(s, 0, 9, 2) for s in range(4)]
    bank = mine_rules(facts, min_support=1)
    (rule,) = [r for r in bank.rules[0] if r.body == 1]
    assert rule.confidence == 1.0


def test_half_confidence():
    # Relation 1 on four subjects; relation 0 follows it on two of them.
    facts = [Quadruple(s, 1, 9, 5) for s in range(4)]
    facts += [Quadruple(0, 0, 9, 6), Quadruple(1, 0, 9, 7), Quadruple(2, 0, 9, 1)]
    bank = mine_rules(facts, min_support=1)
    (rule,) = [r for r in bank.rules[0] if r.body == 1]
    assert (rule.support, rule.body_count, rule.confidence) == (2, 4, 0.5)


def test_head_without_predecessor_has_no_rules():
    facts = [Quadruple(s, 0, 9, 1) for s in range(3)] + [Quadruple(s, 1, 9, 4) for s in range(3)]
    bank = mine_rules(facts, min_support=1)
    assert 0 not in bank.rules


def test_matches_brute_force():
    rng = random.Random(11)
    for _ in range(10):
        facts = [Quadruple(rng.randrange(6), rng.randrange(4), rng.randrange(6), rng.randrange(8)) for _ in range(40)]
        bank = mine_rules(facts, top_k=50, min_support=1)
        expected = brute_force_confidences(facts)
        got = {(r.head, r.body): (r.support, r.body_count) for rs in bank.rules.values() for r in rs}
        assert got == expected
        for rs in bank.rules.values():
            keys = [(-Fraction(r.support, r.body_count), -r.support, r.body) for r in rs]
            assert keys == sorted(keys)


def test_min_support_and_top_k():
    rng = random.Random(5)
    facts = [Quadruple(rng.randrange(10), rng.randrange(6), 0, rng.randrange(20)) for _ in range(150)]
    bank = mine_rules(facts, top_k=2, min_support=4)
    for rs in bank.rules.values():
        assert len(rs) <= 2
        assert all(r.support >= 4 for r in rs)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3), st.integers(0, 4), st.integers(0, 9)), max_size=40))
def test_confidence_invariant_under_duplication(rows):
    facts = [Quadruple(*r) for r in rows]
    assert mine_rules(facts, min_support=1) == mine_rules(facts + facts, min_support=1)


def test_round_trip(tmp_path):
    bank = RuleBank(
        top_k=5,
        rules={0: (TemporalRule(0, 1, 3, 4), TemporalRule(0, 2, 2, 4)), 3: (TemporalRule(3, 3, 5, 5),)},
    )
    path = tmp_path / "rules.json"
    save_rules(bank, path)
    assert load_rules(path) == bank
    save_rules(RuleBank(top_k=5), path)
    assert load_rules(path) == RuleBank(top_k=5)


def test_fixture_rules_round_trip(tmp_path, fixture_graph):
    bank = mine_rules(fixture_graph.splits["train"])
    assert len(bank) > 0
    save_rules(bank, tmp_path / "r.json")
    assert load_rules(tmp_path / "r.json") == bank


def test_corrupted_file(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text("{not json")
    with pytest.raises(RuleFileError, match="not valid JSON"):
        load_rules(path)
    path.write_text(json.dumps({"schema_version": 1, "top_k": 3, "rules": {"0": [{"body_id": 1}]}}))
    with pytest.raises(RuleFileError, match="malformed"):
        load_rules(path)


def test_schema_mismatch(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"schema_version": 99, "top_k": 3, "rules": {}}))
    with pytest.raises(RuleFileError, match="schema_version"):
        load_rules(path)
