"""Character n-gram language model and CTC-path rescoring.

Words are padded with n-1 start tokens and one end token; probabilities use
add-1 smoothing over alphabet + end.  Candidate paths come from a per-frame
probability threshold with a beam cap, then CTC-collapse with log-sum-exp
merging of duplicate words."""

import math
from dataclasses import dataclass, field

import numpy as np

from .ctc import BLANK, collapse

START = "\x02"
END = "\x03"

SOFTMAX_THRESHOLD = 0.001
PATH_THRESH = 512
MAX_PATHS = 50


@dataclass
class NGramModel:
    n: int
    counts: dict                 # context str -> {token -> count}
    alphabet: str                # observed characters, sorted

    @property
    def vocab_size(self):
        return len(self.alphabet) + 1  # + end token

    def context_total(self, ctx):
        return sum(self.counts.get(ctx, {}).values())


def _filter_word(token):
    return "".join(ch.lower() for ch in token if ch.isalpha())


def build_ngram(corpus, n):
    """Count character n-grams of the cleaned corpus words."""
    if n < 1:
        raise ValueError("n must be >= 1")
    words = [w for w in (_filter_word(t) for t in corpus.split()) if w]
    if not words:
        raise ValueError("empty corpus after filtering")
    counts = {}
    chars = set()
    for word in words:
        chars.update(word)
        padded = START * (n - 1) + word + END
        for i in range(n - 1, len(padded)):
            ctx = padded[i - n + 1:i]
            nxt = padded[i]
            counts.setdefault(ctx, {})
            counts[ctx][nxt] = counts[ctx].get(nxt, 0) + 1
    return NGramModel(n=n, counts=counts, alphabet="".join(sorted(chars)))


def ngram_logprob(model, word):
    """Smoothed log P(word), including the end-token transition."""
    padded = START * (model.n - 1) + word + END
    v = model.vocab_size
    total = 0.0
    for i in range(model.n - 1, len(padded)):
        ctx = padded[i - model.n + 1:i]
        cnt = model.counts.get(ctx, {}).get(padded[i], 0)
        total += math.log((cnt + 1) / (model.context_total(ctx) + v))
    return total


def save_ngram(model, path):
    """Versioned sorted text: context TAB char TAB count."""
    enc = {START: "<s>", END: "</s>"}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seqda-ngram\t1\t%d\t%s\n" % (model.n, model.alphabet))
        for ctx in sorted(model.counts):
            for ch in sorted(model.counts[ctx]):
                fh.write("%s\t%s\t%d\n" % (
                    "".join(enc.get(c, c) for c in ctx),
                    enc.get(ch, ch), model.counts[ctx][ch]))


def _decode_token_string(s):
    out = []
    i = 0
    while i < len(s):
        if s.startswith("<s>", i):
            out.append(START)
            i += 3
        elif s.startswith("</s>", i):
            out.append(END)
            i += 4
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def load_ngram(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) != 4 or header[0] != "seqda-ngram" or header[1] != "1":
            raise ValueError("%s is not a seqda n-gram file" % path)
        n, alphabet = int(header[2]), header[3]
        counts = {}
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError("%s line %d: malformed entry" % (path, lineno))
            ctx = _decode_token_string(parts[0])
            ch = _decode_token_string(parts[1])
            counts.setdefault(ctx, {})[ch] = int(parts[2])
    return NGramModel(n=n, counts=counts, alphabet=alphabet)


@dataclass
class CandidatePath:
    frame_path: tuple            # class indices per frame, blank = K
    word: tuple                  # collapsed class indices
    net_logprob: float
    merged: int = field(default=1)


def enumerate_paths(softmax, threshold=SOFTMAX_THRESHOLD, path_thresh=PATH_THRESH,
                    max_paths=MAX_PATHS):
    """Expand frame paths whose per-frame probability clears the threshold.

    If the number of surviving frame paths exceeds path_thresh, only the
    max_paths best (by running log-probability) survive.  Duplicate collapsed
    words are merged with log-sum-exp over their path scores.
    """
    probs = np.asarray(softmax, dtype=np.float64)
    T, K1 = probs.shape
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("rows of the softmax matrix must sum to 1")
    survivors = [np.nonzero(probs[t] >= threshold)[0] for t in range(T)]
    for t, s in enumerate(survivors):
        if len(s) == 0:
            survivors[t] = np.array([int(probs[t].argmax())])
    total = 1
    for s in survivors:
        total *= len(s)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    frontier = [((), 0.0)]
    cap = total > path_thresh
    for t in range(T):
        nxt = [(path + (int(k),), lp + logp[t, k])
               for path, lp in frontier for k in survivors[t]]
        if cap:
            nxt.sort(key=lambda e: (-e[1], e[0]))
            nxt = nxt[:max_paths]
        frontier = nxt
    merged = {}
    blank = K1 - 1
    for path, lp in frontier:
        word = tuple(collapse([BLANK if k == blank else k for k in path]))
        if word in merged:
            best_path, best_lp, acc, cnt = merged[word]
            if lp > best_lp:
                best_path, best_lp = path, lp
            merged[word] = (best_path, best_lp, np.logaddexp(acc, lp), cnt + 1)
        else:
            merged[word] = (path, lp, lp, 1)
    out = [CandidatePath(frame_path=v[0], word=w, net_logprob=float(v[2]), merged=v[3])
           for w, v in merged.items()]
    out.sort(key=lambda c: (-c.net_logprob, c.word))
    return out


def rescore(candidates, model, gamma, alphabet):
    """Pick argmax of net_logprob + gamma * LM log-prob of the collapsed word.

    Ties break toward higher net log-prob, then lexicographic word order.
    Returns the winning CandidatePath.
    """
    if not candidates:
        raise ValueError("no candidates to rescore")
    scored = []
    for c in candidates:
        word_str = "".join(alphabet[k] for k in c.word)
        scored.append((c.net_logprob + gamma * ngram_logprob(model, word_str), c))
    scored.sort(key=lambda e: (-e[0], -e[1].net_logprob, e[1].word))
    return scored[0][1]
