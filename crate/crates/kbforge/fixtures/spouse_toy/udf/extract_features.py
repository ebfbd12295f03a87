#!/usr/bin/env python3
"""Feature extractor: for each mention pair in a sentence, emits the token
sequence between the two mentions as a feature. Input rows: doc_id,
sent_id, words(json); output rows: m1, m2, feature."""

import json
import re
import sys

MENTION = re.compile(r"^p\d+$")


def main():
    rows = set()
    for line in sys.stdin:
        _, _, words = line.rstrip("\n").split("\t")
        tokens = json.loads(words)
        positions = [(i, t) for i, t in enumerate(tokens) if MENTION.match(t)]
        for a in range(len(positions)):
            for b in range(a + 1, len(positions)):
                i, m_a = positions[a]
                j, m_b = positions[b]
                if m_a == m_b:
                    continue
                m1, m2 = sorted((m_a, m_b))
                feature = "between:" + "_".join(tokens[i + 1 : j])
                rows.add((m1, m2, feature))
    for m1, m2, feature in sorted(rows):
        sys.stdout.write(f"{m1}\t{m2}\t{feature}\n")


if __name__ == "__main__":
    main()
