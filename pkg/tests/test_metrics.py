"""Edit distance and error rate tests against brute-force oracles."""

import itertools

import numpy as np
import pytest

from seqda.metrics import edit_distance, cer, wer


def _ed_recursive(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    cost = 0 if a[0] == b[0] else 1
    return min(_ed_recursive(a[1:], b[1:]) + cost,
               _ed_recursive(a[1:], b) + 1,
               _ed_recursive(a, b[1:]) + 1)


def test_known_pairs():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("", "") == 0
    assert edit_distance("abc", "") == 3
    assert edit_distance("", "abc") == 3
    assert edit_distance("abc", "abc") == 0
    assert edit_distance("flaw", "lawn") == 2


def test_against_recursive_oracle(rng):
    alpha = "abc"
    for _ in range(200):
        la = int(rng.integers(0, 6))
        lb = int(rng.integers(0, 6))
        a = "".join(rng.choice(list(alpha), size=la))
        b = "".join(rng.choice(list(alpha), size=lb))
        assert edit_distance(a, b) == _ed_recursive(a, b)


def test_substitution_only():
    assert edit_distance("abcd", "abce", mode="SUBSTITUTION_ONLY") == 1
    assert edit_distance("aaaa", "bbbb", mode="SUBSTITUTION_ONLY") == 4
    with pytest.raises(ValueError, match="length mismatch"):
        edit_distance("ab", "abc", mode="SUBSTITUTION_ONLY")


def test_substitution_exhaustive():
    alpha = "ab"
    for n in range(1, 4):
        for a in itertools.product(alpha, repeat=n):
            for b in itertools.product(alpha, repeat=n):
                want = sum(x != y for x, y in zip(a, b))
                got = edit_distance("".join(a), "".join(b),
                                    mode="SUBSTITUTION_ONLY")
                assert got == want


def test_symmetry(rng):
    for _ in range(50):
        a = "".join(rng.choice(list("xyz"), size=int(rng.integers(0, 8))))
        b = "".join(rng.choice(list("xyz"), size=int(rng.integers(0, 8))))
        assert edit_distance(a, b) == edit_distance(b, a)


def test_cer():
    # 3 edits over 10 reference chars
    assert cer(["kitten", "abcd"], ["sitting", "abcd"]) == pytest.approx(3 / 11)
    assert cer(["abc"], ["abc"]) == 0.0


def test_wer():
    assert wer(["a", "b", "c", "d"], ["a", "x", "c", "y"]) == pytest.approx(0.5)
    assert wer(["hi"], ["hi"]) == 0.0
    assert wer(["hi"], ["ho"]) == 1.0
