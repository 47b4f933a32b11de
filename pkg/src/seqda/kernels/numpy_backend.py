"""Pure-numpy implementations of the hot kernels.

These are the reference implementations; the compiled extension in
``_ckernels.pyx`` must agree with them bitwise-modulo-rounding (parity is
tested in tests/test_kernels.py).  Gate layout for the LSTM is i, f, g, o
in blocks of H along the last axis of the weight matrices.
"""

import numpy as np

NEG_INF = -np.inf


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(x, wx, wh, b, reverse=False):
    """Run an LSTM over a full sequence.

    x: (T, B, C), wx: (C, 4H), wh: (H, 4H), b: (4H,).
    Returns (h_seq (T, B, H), cache).  With reverse=True the scan runs from
    the last time step to the first; h_seq stays aligned with the input time
    axis (h_seq[t] is the state after consuming x[t] in scan order).
    """
    T, B, C = x.shape
    H = wh.shape[0]
    pre = x.reshape(T * B, C) @ wx
    pre = pre.reshape(T, B, 4 * H) + b
    gates = np.empty((T, B, 4 * H))
    c_seq = np.empty((T, B, H))
    h_seq = np.empty((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        z = pre[t] + h @ wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        c_seq[t] = c
        h_seq[t] = h
    cache = (x, wx, wh, gates, c_seq, h_seq, reverse)
    return h_seq, cache


def lstm_backward(dh_out, cache):
    """Backward pass matching lstm_forward; dh_out: (T, B, H)."""
    x, wx, wh, gates, c_seq, h_seq, reverse = cache
    T, B, C = x.shape
    H = wh.shape[0]
    dx = np.empty((T, B, C))
    dwx = np.zeros((C, 4 * H))
    dwh = np.zeros((H, 4 * H))
    db = np.zeros(4 * H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    # walk scan order in reverse
    order = range(T) if reverse else range(T - 1, -1, -1)
    first = T - 1 if reverse else 0
    for t in order:
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        c = c_seq[t]
        if t == first:
            c_prev = np.zeros((B, H))
            h_prev = np.zeros((B, H))
        else:
            tp = t + 1 if reverse else t - 1
            c_prev = c_seq[tp]
            h_prev = h_seq[tp]
        dh = dh_out[t] + dh_next
        tc = np.tanh(c)
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f),
             dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
        dx[t] = dz @ wx.T
        dh_next = dz @ wh.T
        dwx += x[t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
    return dx, dwx, dwh, db


def _extend_labels(labels, blank):
    ext = [blank]
    for s in labels:
        ext.append(s)
        ext.append(blank)
    return np.asarray(ext, dtype=np.intp)


def ctc_forward_backward(logp, labels, blank):
    """CTC negative log-likelihood and its gradient wrt the log-probs.

    logp: (T, K1) per-frame log-softmax rows; labels: 1-D int array without
    blanks.  Returns (loss, grad) with grad[t, k] = d(-log P)/d logp[t, k].
    Caller guarantees feasibility (T >= L + repeats).
    """
    logp = np.asarray(logp, dtype=np.float64)
    T = logp.shape[0]
    ext = _extend_labels(labels, blank)
    S = len(ext)
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = np.logaddexp(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = np.logaddexp(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + logp[t, ext[s]]
    log_p = alpha[T - 1, S - 1]
    if S > 1:
        log_p = np.logaddexp(log_p, alpha[T - 1, S - 2])
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            bt = beta[t + 1, s] + logp[t + 1, ext[s]]
            if s + 1 < S:
                bt = np.logaddexp(bt, beta[t + 1, s + 1] + logp[t + 1, ext[s + 1]])
            if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                bt = np.logaddexp(bt, beta[t + 1, s + 2] + logp[t + 1, ext[s + 2]])
            beta[t, s] = bt
    # occupancy posterior per (t, symbol); d logP / d logp[t,k] = gamma[t,k]
    grad = np.zeros_like(logp)
    with np.errstate(invalid="ignore"):
        occ = alpha + beta - log_p
    for s in range(S):
        col = occ[:, s]
        finite = col > NEG_INF
        grad[finite, ext[s]] += np.exp(col[finite])
    return -float(log_p), -grad
