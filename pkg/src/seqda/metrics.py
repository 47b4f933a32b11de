"""Edit distance (Levenshtein and substitution-only) and CER/WER."""

import numpy as np

FULL = "full"
SUBSTITUTION_ONLY = "substitution_only"


def edit_distance(a, b, mode=FULL):
    """Distance between two words.

    full: unit-cost Levenshtein (substitution/insertion/deletion).
    substitution_only: Hamming distance; requires equal lengths.
    """
    mode = str(mode).lower()
    if mode == SUBSTITUTION_ONLY:
        if len(a) != len(b):
            raise ValueError("length mismatch: %d vs %d" % (len(a), len(b)))
        return sum(1 for x, y in zip(a, b) if x != y)
    if mode != FULL:
        raise ValueError("unknown edit distance mode %r" % mode)
    if len(a) < len(b):
        a, b = b, a
    prev = np.arange(len(b) + 1)
    cur = np.empty(len(b) + 1, dtype=np.int64)
    for i, ca in enumerate(a, 1):
        cur[0] = i
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev, cur = cur, prev
    return int(prev[len(b)])


def cer(preds, refs):
    """Corpus-level character error rate: total edits / total reference chars."""
    if len(preds) != len(refs):
        raise ValueError("prediction/reference list length mismatch")
    if not refs:
        raise ValueError("empty evaluation lists")
    if any(len(r) == 0 for r in refs):
        raise ValueError("empty reference word")
    edits = sum(edit_distance(p, r) for p, r in zip(preds, refs))
    return edits / sum(len(r) for r in refs)


def wer(preds, refs):
    """Word error rate: fraction of samples whose predicted word differs."""
    if len(preds) != len(refs):
        raise ValueError("prediction/reference list length mismatch")
    if not refs:
        raise ValueError("empty evaluation lists")
    return sum(1 for p, r in zip(preds, refs) if p != r) / len(refs)
