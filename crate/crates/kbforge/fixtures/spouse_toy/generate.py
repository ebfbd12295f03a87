#!/usr/bin/env python3
"""Regenerates the toy spouse dataset (data/*.tsv).

Deterministic: rerunning produces byte-identical files. Entity ranges:
  P001-P040  strong couples      4 sentences each, phrase "married"
  P041-P052  medium couples      2 sentences each, phrase "wed"
  P053-P064  weak couples        2 sentences each, phrase "visited"
  P065-P076  triangles           A married B (gold) and A married C (distractor)
  P077-P092  parent-child pairs  3 sentences each, phrase "parent of"
  P093-P132  neutral pairs       2 sentences each, phrase "met"
  P900-P901  gold couple never mentioned in text (expected-fact probe)

The one-spouse constraint only bites on the triangles: A is the shared
first mention of two candidate pairs.
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).parent / "data"


def mention(entity):
    return entity.lower()


def main():
    rng = random.Random(20140214)
    sentences = []  # token lists
    freebase = []
    parents = []
    entities = set()

    def add_sentence(tokens):
        sentences.append(tokens)

    def pair_sentences(e1, e2, phrase, count):
        entities.update([e1, e2])
        for _ in range(count):
            filler = rng.choice(
                [
                    ["according", "to", "the", "archive"],
                    ["the", "record", "notes"],
                    ["as", "reported"],
                    ["sources", "say"],
                ]
            )
            add_sentence(filler + [mention(e1)] + phrase + [mention(e2)])

    eid = 1

    def take():
        nonlocal eid
        e = f"P{eid:03d}"
        eid += 1
        return e

    # strong couples
    for _ in range(20):
        a, b = take(), take()
        freebase.append((a, b))
        pair_sentences(a, b, ["married"], 4)
    # medium couples
    for _ in range(6):
        a, b = take(), take()
        freebase.append((a, b))
        pair_sentences(a, b, ["wed"], 2)
    # weak couples: only an ambiguous phrase ties them together
    for _ in range(6):
        a, b = take(), take()
        freebase.append((a, b))
        pair_sentences(a, b, ["visited"], 2)
    # triangles: the gold spouse and a distractor share the first mention
    for _ in range(4):
        a, b, c = take(), take(), take()
        freebase.append((a, b))
        pair_sentences(a, b, ["married"], 2)
        pair_sentences(a, c, ["married"], 2)
    # parent-child pairs; two of them also "visited"
    parent_pairs = []
    for _ in range(8):
        a, b = take(), take()
        parents.append((a, b))
        parent_pairs.append((a, b))
        pair_sentences(a, b, ["parent", "of"], 3)
    for a, b in parent_pairs[:2]:
        pair_sentences(a, b, ["visited"], 1)
    # neutral co-occurrences; four of them also "visited"
    neutral_pairs = []
    for _ in range(20):
        a, b = take(), take()
        neutral_pairs.append((a, b))
        pair_sentences(a, b, ["met"], 2)
    for a, b in neutral_pairs[:4]:
        pair_sentences(a, b, ["visited"], 1)
    # gold couple that never appears in text
    freebase.append(("P900", "P901"))
    entities.update(["P900", "P901"])

    # filler sentences with fewer than two mentions
    lone = [f"P{i:03d}" for i in range(1, 41, 7)]
    for i in range(25):
        e = lone[i % len(lone)]
        entities.add(e)
        add_sentence(["the", "committee", "heard", "from", mention(e), "today"])

    rng.shuffle(sentences)

    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "sentences.tsv", "w") as f:
        for i, tokens in enumerate(sentences):
            doc = f"doc{i // 10:03d}"
            sent = i % 10
            f.write(f"{doc}\t{sent}\t{json.dumps(tokens, separators=(',', ':'))}\n")
    with open(OUT / "freebase_spouse.tsv", "w") as f:
        for a, b in sorted(freebase):
            f.write(f"{a}\t{b}\n")
    with open(OUT / "parent_child.tsv", "w") as f:
        for a, b in sorted(parents):
            f.write(f"{a}\t{b}\n")
    with open(OUT / "entity_linking.tsv", "w") as f:
        for e in sorted(entities):
            f.write(f"{e}\t{mention(e)}\n")
    print(f"{len(sentences)} sentences, {len(freebase)} gold couples, {len(parents)} parent pairs")


if __name__ == "__main__":
    main()
