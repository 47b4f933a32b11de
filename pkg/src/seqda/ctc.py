"""CTC loss and decoding.  The blank symbol is the last class index K."""

import numpy as np

from . import diffengine as de
from .kernels import ctc_forward_backward

BLANK = -1  # sentinel used in frame paths; the numeric blank index is K


def _num_repeats(labels):
    return sum(1 for i in range(1, len(labels)) if labels[i] == labels[i - 1])


def ctc_loss(log_probs, labels):
    """-log P(labels | log_probs) for one sample.

    log_probs: Tensor or array (T, K+1) of per-frame log-softmax rows with
    blank at index K; labels: int sequence over 0..K-1.  Differentiable wrt
    log_probs when given a Tensor.
    """
    lp = de.as_tensor(log_probs)
    T, K1 = lp.data.shape
    labels = list(labels)
    if len(labels) == 0:
        raise ValueError("empty label sequence")
    if any(s < 0 or s >= K1 - 1 for s in labels):
        raise ValueError("label symbol outside class range")
    if T < len(labels) + _num_repeats(labels):
        raise ValueError("label too long for T'=%d (need >= %d frames)"
                         % (T, len(labels) + _num_repeats(labels)))
    return de.ctc_objective(lp, labels, blank=K1 - 1)


def ctc_loss_value(log_probs, labels):
    """Plain-float CTC loss without touching the tape."""
    lp = np.asarray(log_probs, dtype=np.float64)
    loss, _ = ctc_forward_backward(lp, list(labels), blank=lp.shape[1] - 1)
    return loss


def collapse(path):
    """CTC collapse: merge adjacent repeats, then drop blanks (BLANK sentinel)."""
    out = []
    prev = None
    for s in path:
        if s != prev:
            if s != BLANK:
                out.append(s)
            prev = s
    return out


def best_path_decode(log_probs):
    """Greedy decode: per-frame argmax (ties to lowest index), then collapse."""
    lp = np.asarray(log_probs, dtype=np.float64)
    K = lp.shape[1] - 1
    arg = lp.argmax(axis=1)
    path = [BLANK if a == K else int(a) for a in arg]
    return collapse(path)
