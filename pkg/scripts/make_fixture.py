"""Regenerate the committed 200-fact synthetic dataset under src/tkgforecast/data/fixture.

Entities sit in three blocs; cooperative relations mostly stay inside a bloc and
hostile ones cross blocs. A few planted follow-ups (consult -> cooperate,
threaten -> use force) give the rule miner something to find.

    python scripts/make_fixture.py [--out DIR] [--seed 7]
"""

import argparse
import json
import random
from pathlib import Path

ENTITIES = [
    "Barack Obama", "John Kerry", "Joseph Robinette Biden", "Angela Merkel", "Francois Hollande",
    "David Cameron", "Ban Ki-moon", "Catherine Ashton", "Vladimir Putin", "Sergey Lavrov",
    "Xi Jinping", "Wang Yi", "Hassan Rouhani", "Mohammad Javad Zarif", "Nuri al-Maliki",
    "Massoud Barzani", "Recep Tayyip Erdogan", "Mehmet Simsek", "Other Authorities (Turkey)",
    "Benjamin Netanyahu", "Mahmoud Abbas", "Militant (Syria)", "Bashar al-Assad", "Citizen (Iraq)",
    "Police (Ukraine)", "Viktor Yanukovych", "Arseniy Yatsenyuk", "Kim Jong-Un",
]
BLOCS = [list(range(0, 8)) + [19, 26], [8, 9, 10, 11, 22, 25, 27], [12, 13, 14, 15, 16, 17, 18, 20, 21, 23, 24]]
RELATIONS = {
    "Consult": "positive",
    "Make statement": "neutral",
    "Express intent to cooperate": "positive",
    "Make an appeal or request": "positive",
    "Engage in negotiation": "positive",
    "Criticize or denounce": "negative",
    "Threaten": "negative",
    "Use conventional military force": "negative",
    "Host a visit": "positive",
    "Reject": "negative",
}
FOLLOW_UPS = {"Consult": "Express intent to cooperate", "Threaten": "Use conventional military force"}
SPLIT_SIZES = {"train": 150, "valid": 25, "test": 25}
SPLIT_DAYS = {"train": (0, 44), "valid": (45, 51), "test": (52, 59)}


def bloc_of(e):
    return next(i for i, b in enumerate(BLOCS) if e in b)


def make_split(rng, rel_ids, lo, hi, size):
    names = list(RELATIONS)
    facts = []
    while len(facts) < size:
        s = rng.randrange(len(ENTITIES))
        rel = rng.choice(names)
        polarity = RELATIONS[rel]
        if polarity == "negative" or (polarity == "neutral" and rng.random() < 0.3):
            pool = [e for e in range(len(ENTITIES)) if bloc_of(e) != bloc_of(s)]
        else:
            pool = [e for e in BLOCS[bloc_of(s)] if e != s]
        o = rng.choice(pool)
        t = rng.randint(lo, hi)
        facts.append((s, rel_ids[rel], o, t))
        if rel in FOLLOW_UPS and len(facts) < size and t < hi:
            facts.append((s, rel_ids[FOLLOW_UPS[rel]], o, rng.randint(t + 1, min(hi, t + 3))))
        if len(facts) < size and rng.random() < 0.15:
            # repeated triple on a later day, so frequencies exceed one
            facts.append((s, rel_ids[rel], o, rng.randint(t, hi)))
    rng.shuffle(facts)
    return facts


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/tkgforecast/data/fixture"))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    rel_ids = {name: i for i, name in enumerate(RELATIONS)}
    (out / "entity2id.txt").write_text("".join(f"{e}\t{i}\n" for i, e in enumerate(ENTITIES)))
    (out / "relation2id.txt").write_text("".join(f"{r}\t{i}\n" for r, i in rel_ids.items()))
    for split, size in SPLIT_SIZES.items():
        lo, hi = SPLIT_DAYS[split]
        facts = make_split(rng, rel_ids, lo, hi, size)
        (out / f"{split}.txt").write_text("".join(f"{s}\t{p}\t{o}\t{t}\n" for s, p, o, t in facts))
    polarity = {name.replace(" ", "_"): kind for name, kind in RELATIONS.items()}
    (out / "polarity.json").write_text(json.dumps(polarity, indent=1) + "\n")
    meta = {"name": "fixture", "granularity": 1, "epoch": "2014-01-01", "time_prefix": ""}
    (out / "dataset.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"wrote fixture to {out}")


if __name__ == "__main__":
    main()
