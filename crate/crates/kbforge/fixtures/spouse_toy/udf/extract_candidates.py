#!/usr/bin/env python3
"""Candidate extractor: emits each distinct mention pair co-occurring in a
sentence, ordered (m1 < m2). Input rows: doc_id, sent_id, words(json)."""

import json
import re
import sys

MENTION = re.compile(r"^p\d+$")


def main():
    pairs = set()
    for line in sys.stdin:
        _, _, words = line.rstrip("\n").split("\t")
        tokens = json.loads(words)
        mentions = sorted({t for t in tokens if MENTION.match(t)})
        for i in range(len(mentions)):
            for j in range(i + 1, len(mentions)):
                pairs.add((mentions[i], mentions[j]))
    for m1, m2 in sorted(pairs):
        sys.stdout.write(f"{m1}\t{m2}\n")


if __name__ == "__main__":
    main()
