# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: CTC forward-backward, best-path decoding, edit distance."""

import numpy as np

from libc.math cimport INFINITY, exp, log1p, tanh


cdef inline double _lae(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_forward_backward(const double[:, ::1] log_probs, const Py_ssize_t[::1] ext):
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t K = log_probs.shape[1]
    cdef Py_ssize_t S = ext.shape[0]
    cdef Py_ssize_t t, s, k
    cdef double v, log_p

    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    grad_arr = np.zeros((T, K))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr

    with nogil:
        alpha[0, 0] = log_probs[0, ext[0]]
        if S > 1:
            alpha[0, 1] = log_probs[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                v = alpha[t - 1, s]
                if s > 0:
                    v = _lae(v, alpha[t - 1, s - 1])
                if s > 1 and ext[s] != 0 and ext[s] != ext[s - 2]:
                    v = _lae(v, alpha[t - 1, s - 2])
                if v != -INFINITY:
                    alpha[t, s] = v + log_probs[t, ext[s]]

        beta[T - 1, S - 1] = log_probs[T - 1, ext[S - 1]]
        if S > 1:
            beta[T - 1, S - 2] = log_probs[T - 1, ext[S - 2]]
        for t in range(T - 2, -1, -1):
            for s in range(S):
                v = beta[t + 1, s]
                if s < S - 1:
                    v = _lae(v, beta[t + 1, s + 1])
                if s < S - 2 and ext[s + 2] != 0 and ext[s + 2] != ext[s]:
                    v = _lae(v, beta[t + 1, s + 2])
                if v != -INFINITY:
                    beta[t, s] = v + log_probs[t, ext[s]]

        if S > 1:
            log_p = _lae(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
        else:
            log_p = alpha[T - 1, 0]
        for t in range(T):
            for s in range(S):
                if alpha[t, s] != -INFINITY and beta[t, s] != -INFINITY:
                    k = ext[s]
                    grad[t, k] -= exp(alpha[t, s] + beta[t, s] - log_probs[t, k] - log_p)

    return -log_p, grad_arr


def best_path_decode(const double[:, ::1] log_probs):
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t K = log_probs.shape[1]
    cdef Py_ssize_t t, k, best
    cdef Py_ssize_t prev = -1
    cdef double m
    out = []
    for t in range(T):
        best = 0
        m = log_probs[t, 0]
        for k in range(1, K):
            if log_probs[t, k] > m:
                m = log_probs[t, k]
                best = k
        if best != prev and best != 0:
            out.append(best)
        prev = best
    return out


def edit_distance(a, b):
    cdef Py_ssize_t[::1] x = np.asarray(list(a), dtype=np.intp)
    cdef Py_ssize_t[::1] y = np.asarray(list(b), dtype=np.intp)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t i, j, best
    prev_arr = np.arange(m + 1, dtype=np.intp)
    cur_arr = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] prev = prev_arr
    cdef Py_ssize_t[::1] cur = cur_arr
    cdef Py_ssize_t[::1] tmp
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            if prev[j - 1] + (x[i - 1] != y[j - 1]) < best:
                best = prev[j - 1] + (x[i - 1] != y[j - 1])
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


def lstm_forward(const double[:, :, ::1] xw, const double[:, ::1] w_hh, bint reverse):
    cdef Py_ssize_t B = xw.shape[0], T = xw.shape[1], G = xw.shape[2]
    cdef Py_ssize_t H = G // 4
    cdef Py_ssize_t b, n, t, p, k, j
    hs_arr = np.zeros((B, T, H))
    cs_arr = np.zeros((B, T, H))
    acts_arr = np.zeros((B, T, G))
    z_arr = np.zeros(G)
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] cs = cs_arr
    cdef double[:, :, ::1] acts = acts_arr
    cdef double[::1] z = z_arr
    cdef double hk, c_prev, c
    cdef double* zp = &z[0]
    cdef const double* wrow
    with nogil:
        for b in range(B):
            for n in range(T):
                t = T - 1 - n if reverse else n
                p = t + 1 if reverse else t - 1
                for j in range(G):
                    z[j] = xw[b, t, j]
                if n > 0:
                    # raw pointers let the compiler vectorize the row update
                    for k in range(H):
                        hk = hs[b, p, k]
                        wrow = &w_hh[k, 0]
                        for j in range(G):
                            zp[j] += hk * wrow[j]
                for j in range(H):
                    acts[b, t, j] = _sig(z[j])
                    acts[b, t, H + j] = _sig(z[H + j])
                    acts[b, t, 2 * H + j] = tanh(z[2 * H + j])
                    acts[b, t, 3 * H + j] = _sig(z[3 * H + j])
                    c_prev = cs[b, p, j] if n > 0 else 0.0
                    c = acts[b, t, H + j] * c_prev + acts[b, t, j] * acts[b, t, 2 * H + j]
                    cs[b, t, j] = c
                    hs[b, t, j] = acts[b, t, 3 * H + j] * tanh(c)
    return hs_arr, (hs_arr, cs_arr, acts_arr)


def lstm_backward(const double[:, :, ::1] dhs, const double[:, ::1] w_hh, cache, bint reverse):
    hs_arr, cs_arr, acts_arr = cache
    cdef const double[:, :, ::1] hs = hs_arr
    cdef const double[:, :, ::1] cs = cs_arr
    cdef const double[:, :, ::1] acts = acts_arr
    cdef Py_ssize_t B = hs.shape[0], T = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t G = 4 * H
    cdef Py_ssize_t b, n, t, p, k, j
    dxw_arr = np.zeros((B, T, G))
    dw_arr = np.zeros((H, G))
    dh_arr = np.zeros(H)
    dc_arr = np.zeros(H)
    cdef double[:, :, ::1] dxw = dxw_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] dh_next = dh_arr
    cdef double[::1] dc_next = dc_arr
    cdef double i, f, g, o, tc, dh, dc, c_prev, s, hk
    cdef double* drow
    cdef double* dwrow
    cdef const double* wrow
    wt_arr = np.ascontiguousarray(np.asarray(w_hh).T)
    cdef const double[:, ::1] wt = wt_arr
    cdef double* dhp = &dh_next[0]
    with nogil:
        for b in range(B):
            for k in range(H):
                dh_next[k] = 0.0
                dc_next[k] = 0.0
            for n in range(T - 1, -1, -1):
                t = T - 1 - n if reverse else n
                p = t + 1 if reverse else t - 1
                for j in range(H):
                    i = acts[b, t, j]
                    f = acts[b, t, H + j]
                    g = acts[b, t, 2 * H + j]
                    o = acts[b, t, 3 * H + j]
                    c_prev = cs[b, p, j] if n > 0 else 0.0
                    tc = tanh(cs[b, t, j])
                    dh = dhs[b, t, j] + dh_next[j]
                    dc = dh * o * (1.0 - tc * tc) + dc_next[j]
                    dxw[b, t, j] = dc * g * i * (1.0 - i)
                    dxw[b, t, H + j] = dc * c_prev * f * (1.0 - f)
                    dxw[b, t, 2 * H + j] = dc * i * (1.0 - g * g)
                    dxw[b, t, 3 * H + j] = dh * tc * o * (1.0 - o)
                    dc_next[j] = dc * f
                if n > 0:
                    drow = &dxw[b, t, 0]
                    for k in range(H):
                        hk = hs[b, p, k]
                        dwrow = &dw[k, 0]
                        for j in range(G):
                            dwrow[j] += hk * drow[j]
                        dh_next[k] = 0.0
                    # dh = dxw_t @ w_hh^T as axpy updates over the transposed copy
                    for j in range(G):
                        s = drow[j]
                        wrow = &wt[j, 0]
                        for k in range(H):
                            dhp[k] += s * wrow[k]
    return dxw_arr, dw_arr
