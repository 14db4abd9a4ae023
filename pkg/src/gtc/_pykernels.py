"""Pure-Python/numpy versions of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when the
``GTC_PURE_PYTHON`` environment variable is set.  Semantics match the compiled
versions exactly; results agree to rounding.
"""

import numpy as np

NEG_INF = -np.inf


def _skip_mask(ext):
    skip = np.zeros(len(ext), dtype=bool)
    skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])
    return skip


def ctc_forward_backward(log_probs, ext):
    """Loss and d(loss)/d(log_probs) for one sample.

    ``ext`` is the blank-interleaved label (blank = 0) of length 2L+1.  The
    caller guarantees feasibility.
    """
    T = log_probs.shape[0]
    S = len(ext)
    em = log_probs[:, ext]
    skip = _skip_mask(ext)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = em[0, 0]
    if S > 1:
        alpha[0, 1] = em[0, 1]
    a1 = np.full(S, NEG_INF)
    a2 = np.full(S, NEG_INF)
    for t in range(1, T):
        prev = alpha[t - 1]
        a1[1:] = prev[:-1]
        a2[2:] = np.where(skip[2:], prev[:-2], NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(prev, a1), a2) + em[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = em[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = em[T - 1, S - 2]
    b1 = np.full(S, NEG_INF)
    b2 = np.full(S, NEG_INF)
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b1[:-1] = nxt[1:]
        b2[:-2] = np.where(skip[2:], nxt[2:], NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(nxt, b1), b2) + em[t]

    log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    with np.errstate(invalid="ignore"):
        post = np.exp(alpha + beta - em - log_p)
    grad = np.zeros_like(log_probs)
    np.add.at(grad, (slice(None), ext), -post)
    return float(-log_p), grad


def best_path_decode(log_probs):
    path = np.argmax(log_probs, axis=1)
    out = []
    prev = -1
    for k in path.tolist():
        if k != prev and k != 0:
            out.append(k)
        prev = k
    return out


def edit_distance(a, b):
    a = list(a)
    b = list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def lstm_forward(xw, w_hh, reverse):
    """Single-direction LSTM over precomputed input projections.

    ``xw`` is (B, T, 4H) = x W_ih + b with gate blocks (input, forget, cell,
    output).  Returns hidden states (B, T, H) and the activations needed by
    :func:`lstm_backward`.
    """
    B, T, G = xw.shape
    H = G // 4
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    acts = np.zeros((B, T, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        z = xw[:, t] + h @ w_hh
        a = acts[:, t]
        a[:, :2 * H] = _sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
        h = a[:, 3 * H:] * np.tanh(c)
        cs[:, t] = c
        hs[:, t] = h
    return hs, (hs, cs, acts)


def lstm_backward(dhs, w_hh, cache, reverse):
    hs, cs, acts = cache
    B, T, H = hs.shape
    dxw = np.zeros_like(acts)
    dw = np.zeros_like(w_hh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    order = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    for n in range(T - 1, -1, -1):
        t = order[n]
        prev = order[n - 1] if n > 0 else None
        a = acts[:, t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c_prev = cs[:, prev] if prev is not None else np.zeros((B, H))
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dxw[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        if prev is not None:
            dw += hs[:, prev].T @ dz
        dh_next = dz @ w_hh.T
    return dxw, dw
