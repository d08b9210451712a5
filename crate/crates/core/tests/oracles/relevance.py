"""Reference values for the token-wise relevance reward.

Prints the sentence cosines and the masked means for the fixture used by
the acceptance harness. Run from crates/core.
"""
import math
from collections import Counter

from metrics import tokens

CORPUS = [
    "The river flooded the valley in spring . Farmers moved their cattle uphill . The dam was repaired in June .",
    "The dam holds the river . Engineers inspect the dam every spring .",
    "Cattle graze in the valley . The farmers sell milk in town .",
]
CONTEXT = CORPUS[0]
QUESTION = "When was the dam repaired ?"
MASKS = [
    "1" * 21,
    "111111110000000000000",
    "000000001111110000000",
    "000000000000001111111",
    "100100010000010000011",
]


def terms(text):
    return [t.lower() for t in tokens(text) if any(ch.isalnum() for ch in t)]


def idf(term):
    df = sum(term in set(terms(d)) for d in CORPUS)
    return math.log((1 + len(CORPUS)) / (1 + df)) + 1


def embed(text):
    v = {t: c * idf(t) for t, c in Counter(terms(text)).items()}
    n = math.sqrt(sum(w * w for w in v.values()))
    return {t: w / n for t, w in v.items()} if n else {}


def cosine(a, b):
    return sum(w * b.get(t, 0.0) for t, w in a.items())


def main():
    toks = tokens(CONTEXT)
    assert len(toks) == 21, len(toks)
    spans, start = [], 0
    for i, t in enumerate(toks):
        if t in (".", "!", "?"):
            spans.append((start, i + 1))
            start = i + 1
    if start < len(toks):
        spans.append((start, len(toks)))
    q = embed(QUESTION)
    scores = [0.0] * len(toks)
    for a, b in spans:
        s = cosine(embed(" ".join(toks[a:b])), q)
        print(f"sentence {a}..{b}: {s!r}")
        for i in range(a, b):
            scores[i] = s
    for m in MASKS:
        kept = [i for i, c in enumerate(m) if c == "1"]
        print(m, repr(sum(scores[i] for i in kept) / len(kept)))


if __name__ == "__main__":
    main()
