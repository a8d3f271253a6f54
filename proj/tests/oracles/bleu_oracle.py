"""Brute-force corpus BLEU-4 used to freeze expected values for the C++ tests.

Counts n-grams by scanning every window against every other window (no hashing),
clips by the reference count, pools over the corpus, and applies the brevity
penalty. Any zero (or undefined) precision gives a score of 0.

Usage: python3 bleu_oracle.py > ../data/bleu_cases.json
"""
import json
import math
import random


def windows(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def occurrences(gram, grams):
    return sum(1 for g in grams if g == gram)


def bleu(cands, refs):
    matches = [0] * 4
    totals = [0] * 4
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    for cand, ref in zip(cands, refs):
        for n in range(1, 5):
            cg = windows(cand, n)
            rg = windows(ref, n)
            totals[n - 1] += len(cg)
            seen = []
            for g in cg:
                if g in seen:
                    continue
                seen.append(g)
                matches[n - 1] += min(occurrences(g, cg), occurrences(g, rg))
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if c_len == 0:
        bp = 0.0
    elif c_len < r_len:
        bp = math.exp(1 - r_len / c_len)
    else:
        bp = 1.0
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = bp * math.exp(sum(0.25 * math.log(p) for p in precisions))
    return {"score": score, "precisions": precisions, "bp": bp,
            "candidate_length": c_len, "reference_length": r_len}


def random_corpus(rng):
    vocab = [f"w{i}" for i in range(rng.randint(2, 20))]
    cands, refs = [], []
    for _ in range(rng.randint(1, 30)):
        ref = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
        if rng.random() < 0.5:
            # Perturbed copy so higher-order matches are common.
            cand = [t if rng.random() < 0.8 else rng.choice(vocab) for t in ref]
            cand = cand[: rng.randint(1, len(cand))] if rng.random() < 0.3 else cand
        else:
            cand = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
        cands.append(cand)
        refs.append(ref)
    return cands, refs


def main():
    cases = []
    fixed = [
        ([["the", "cat", "sat"]], [["the", "cat", "sat", "down"]]),
        ([["the", "cat", "sat", "on", "the", "mat"]], [["the", "cat", "sat", "on", "a", "mat"]]),
        ([["a", "a", "a", "a", "a"]], [["a", "a", "b", "a", "a", "a"]]),
    ]
    for cands, refs in fixed:
        cases.append({"candidates": cands, "references": refs, **bleu(cands, refs)})
    rng = random.Random(20240601)
    for _ in range(50):
        cands, refs = random_corpus(rng)
        cases.append({"candidates": cands, "references": refs, **bleu(cands, refs)})
    print(json.dumps({"cases": cases}, indent=1))


if __name__ == "__main__":
    main()
