# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: LSTM sequence forward/backward and the CTC
forward-backward recursion.  Semantics match numpy_backend exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, log, log1p, fmax, INFINITY
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double z) nogil:
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    cdef double e = exp(z)
    return e / (1.0 + e)


cdef inline double _lse(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


# Row-major matmul helpers on top of Fortran dgemm.
cdef void _mm_nn(int m, int n, int k, double alpha,
                 double* A, double* B, double beta, double* C) nogil:
    # C(m,n) += alpha * A(m,k) @ B(k,n), all row-major
    cdef char cn = b'N'
    dgemm(&cn, &cn, &n, &m, &k, &alpha, B, &n, A, &k, &beta, C, &n)


cdef void _mm_nt(int m, int n, int k, double alpha,
                 double* A, double* B, double beta, double* C) nogil:
    # C(m,n) += alpha * A(m,k) @ B(n,k)^T
    cdef char ct = b'T'
    cdef char cn = b'N'
    dgemm(&ct, &cn, &n, &m, &k, &alpha, B, &k, A, &k, &beta, C, &n)


cdef void _mm_tn(int m, int n, int k, double alpha,
                 double* A, double* B, double beta, double* C) nogil:
    # C(m,n) += alpha * A(k,m)^T @ B(k,n)
    cdef char cn = b'N'
    cdef char ct = b'T'
    dgemm(&cn, &ct, &n, &m, &k, &alpha, B, &n, A, &m, &beta, C, &n)


def lstm_forward(x, wx, wh, b, reverse=False):
    cdef cnp.ndarray[double, ndim=3] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] wxa = np.ascontiguousarray(wx, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] wha = np.ascontiguousarray(wh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ba = np.ascontiguousarray(b, dtype=np.float64)
    cdef int T = xa.shape[0]
    cdef int B = xa.shape[1]
    cdef int C = xa.shape[2]
    cdef int H = wha.shape[0]
    cdef int G = 4 * H
    cdef bint rev = bool(reverse)

    cdef cnp.ndarray[double, ndim=3] pre = np.empty((T, B, G))
    cdef cnp.ndarray[double, ndim=3] gates = np.empty((T, B, G))
    cdef cnp.ndarray[double, ndim=3] c_seq = np.empty((T, B, H))
    cdef cnp.ndarray[double, ndim=3] h_seq = np.empty((T, B, H))
    cdef cnp.ndarray[double, ndim=2] h = np.zeros((B, H))
    cdef cnp.ndarray[double, ndim=2] z = np.empty((B, G))
    cdef cnp.ndarray[double, ndim=2] c = np.zeros((B, H))

    cdef int t, step, i, j
    cdef double iv, fv, gv, ov, cv
    with nogil:
        _mm_nn(T * B, G, C, 1.0, &xa[0, 0, 0], &wxa[0, 0], 0.0, &pre[0, 0, 0])
        for step in range(T):
            t = T - 1 - step if rev else step
            for i in range(B):
                for j in range(G):
                    z[i, j] = pre[t, i, j] + ba[j]
            _mm_nn(B, G, H, 1.0, &h[0, 0], &wha[0, 0], 1.0, &z[0, 0])
            for i in range(B):
                for j in range(H):
                    iv = _sig(z[i, j])
                    fv = _sig(z[i, H + j])
                    gv = tanh(z[i, 2 * H + j])
                    ov = _sig(z[i, 3 * H + j])
                    cv = fv * c[i, j] + iv * gv
                    c[i, j] = cv
                    h[i, j] = ov * tanh(cv)
                    gates[t, i, j] = iv
                    gates[t, i, H + j] = fv
                    gates[t, i, 2 * H + j] = gv
                    gates[t, i, 3 * H + j] = ov
                    c_seq[t, i, j] = cv
                    h_seq[t, i, j] = h[i, j]
    cache = (xa, wxa, wha, gates, c_seq, h_seq, rev)
    return h_seq, cache


def lstm_backward(dh_out, cache):
    xa, wxa, wha, gates_o, c_seq_o, h_seq_o, rev_o = cache
    cdef cnp.ndarray[double, ndim=3] x = xa
    cdef cnp.ndarray[double, ndim=2] wx = wxa
    cdef cnp.ndarray[double, ndim=2] wh = wha
    cdef cnp.ndarray[double, ndim=3] gates = gates_o
    cdef cnp.ndarray[double, ndim=3] c_seq = c_seq_o
    cdef cnp.ndarray[double, ndim=3] h_seq = h_seq_o
    cdef cnp.ndarray[double, ndim=3] dho = np.ascontiguousarray(dh_out, dtype=np.float64)
    cdef bint rev = rev_o
    cdef int T = x.shape[0]
    cdef int B = x.shape[1]
    cdef int C = x.shape[2]
    cdef int H = wh.shape[0]
    cdef int G = 4 * H

    cdef cnp.ndarray[double, ndim=3] dx = np.empty((T, B, C))
    cdef cnp.ndarray[double, ndim=2] dwx = np.zeros((C, G))
    cdef cnp.ndarray[double, ndim=2] dwh = np.zeros((H, G))
    cdef cnp.ndarray[double, ndim=1] db = np.zeros(G)
    cdef cnp.ndarray[double, ndim=2] dh_next = np.zeros((B, H))
    cdef cnp.ndarray[double, ndim=2] dc_next = np.zeros((B, H))
    cdef cnp.ndarray[double, ndim=2] dz = np.empty((B, G))
    cdef cnp.ndarray[double, ndim=2] hprev = np.empty((B, H))

    cdef int t, tp, step, i, j, first
    cdef double iv, fv, gv, ov, cv, cp, dh, tc, dc, do_, di, df, dg
    first = T - 1 if rev else 0
    with nogil:
        for step in range(T):
            t = step if rev else T - 1 - step
            tp = t + 1 if rev else t - 1
            for i in range(B):
                for j in range(H):
                    iv = gates[t, i, j]
                    fv = gates[t, i, H + j]
                    gv = gates[t, i, 2 * H + j]
                    ov = gates[t, i, 3 * H + j]
                    cv = c_seq[t, i, j]
                    if t == first:
                        cp = 0.0
                        hprev[i, j] = 0.0
                    else:
                        cp = c_seq[tp, i, j]
                        hprev[i, j] = h_seq[tp, i, j]
                    dh = dho[t, i, j] + dh_next[i, j]
                    tc = tanh(cv)
                    do_ = dh * tc
                    dc = dh * ov * (1.0 - tc * tc) + dc_next[i, j]
                    di = dc * gv
                    df = dc * cp
                    dg = dc * iv
                    dc_next[i, j] = dc * fv
                    dz[i, j] = di * iv * (1.0 - iv)
                    dz[i, H + j] = df * fv * (1.0 - fv)
                    dz[i, 2 * H + j] = dg * (1.0 - gv * gv)
                    dz[i, 3 * H + j] = do_ * ov * (1.0 - ov)
            _mm_nt(B, C, G, 1.0, &dz[0, 0], &wx[0, 0], 0.0, &dx[t, 0, 0])
            _mm_nt(B, H, G, 1.0, &dz[0, 0], &wh[0, 0], 0.0, &dh_next[0, 0])
            _mm_tn(C, G, B, 1.0, &x[t, 0, 0], &dz[0, 0], 1.0, &dwx[0, 0])
            _mm_tn(H, G, B, 1.0, &hprev[0, 0], &dz[0, 0], 1.0, &dwh[0, 0])
            for i in range(B):
                for j in range(G):
                    db[j] += dz[i, j]
    return dx, dwx, dwh, db


def ctc_forward_backward(logp, labels, blank):
    cdef cnp.ndarray[double, ndim=2] lp = np.ascontiguousarray(logp, dtype=np.float64)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] lab = np.asarray(labels, dtype=np.intp)
    cdef int T = lp.shape[0]
    cdef int K1 = lp.shape[1]
    cdef int L = lab.shape[0]
    cdef int S = 2 * L + 1
    cdef int blk = blank
    cdef cnp.ndarray[cnp.intp_t, ndim=1] ext = np.empty(S, dtype=np.intp)
    cdef int s, t
    ext[0] = blk
    for s in range(L):
        ext[2 * s + 1] = lab[s]
        ext[2 * s + 2] = blk
    cdef cnp.ndarray[double, ndim=2] alpha = np.full((T, S), -INFINITY)
    cdef cnp.ndarray[double, ndim=2] beta = np.full((T, S), -INFINITY)
    cdef cnp.ndarray[double, ndim=2] grad = np.zeros((T, K1))
    cdef double a, bt, log_p, occ
    with nogil:
        alpha[0, 0] = lp[0, ext[0]]
        if S > 1:
            alpha[0, 1] = lp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                a = alpha[t - 1, s]
                if s >= 1:
                    a = _lse(a, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != blk and ext[s] != ext[s - 2]:
                    a = _lse(a, alpha[t - 1, s - 2])
                alpha[t, s] = a + lp[t, ext[s]]
        log_p = alpha[T - 1, S - 1]
        if S > 1:
            log_p = _lse(log_p, alpha[T - 1, S - 2])
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                bt = beta[t + 1, s] + lp[t + 1, ext[s]]
                if s + 1 < S:
                    bt = _lse(bt, beta[t + 1, s + 1] + lp[t + 1, ext[s + 1]])
                if s + 2 < S and ext[s + 2] != blk and ext[s + 2] != ext[s]:
                    bt = _lse(bt, beta[t + 1, s + 2] + lp[t + 1, ext[s + 2]])
                beta[t, s] = bt
        for t in range(T):
            for s in range(S):
                occ = alpha[t, s] + beta[t, s]
                if occ > -INFINITY:
                    grad[t, ext[s]] -= exp(occ - log_p)
    return -log_p, grad
