"""Attentional guidance branch: a GRU decoder with bilinear attention.

At each step the previous hidden state scores every feature slice, the
softmax of the scores weights a glimpse vector, and the GRU consumes the
embedding of the previous symbol together with the glimpse.  Output classes
are the alphabet symbols followed by EOS; the embedding table has one more
row for the start-of-sequence token.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .errors import ContractError
from .nn import Module
from .tensor import Tensor, _sigmoid_np, no_grad


def attention_weights(s_prev: Tensor, h: Tensor, w_att: Tensor) -> Tensor:
    """alpha_t(i) = softmax_i(s_prev^T W_a h_i); s_prev (B, H), h (B, T, C) -> (B, T)."""
    query = tn.matmul(s_prev, w_att)
    B, C = query.shape
    scores = tn.matmul(h, tn.reshape(query, (B, C, 1)))
    return tn.softmax(tn.reshape(scores, (B, h.shape[1])))


def glimpse(alpha: Tensor, h: Tensor) -> Tensor:
    B, T = alpha.shape
    return tn.reshape(tn.matmul(tn.reshape(alpha, (B, 1, T)), h), (B, h.shape[2]))


def gru_step(y_prev, g: Tensor, s_prev: Tensor, params) -> Tensor:
    """One GRU update whose input is [embedding(y_prev), glimpse]."""
    H = s_prev.shape[-1]
    x = tn.concat([tn.embedding(params["embedding"], y_prev), g], axis=-1)
    gi = tn.add(tn.matmul(x, params["gru.w_ih"]), params["gru.b_ih"])
    gh = tn.add(tn.matmul(s_prev, params["gru.w_hh"]), params["gru.b_hh"])
    r = tn.sigmoid(tn.add(gi[:, 0:H], gh[:, 0:H]))
    z = tn.sigmoid(tn.add(gi[:, H:2 * H], gh[:, H:2 * H]))
    n = tn.tanh(tn.add(gi[:, 2 * H:], tn.mul(r, gh[:, 2 * H:])))
    return tn.add(tn.mul(tn.sub(1.0, z), n), tn.mul(z, s_prev))


def output_logits(s: Tensor, w_out: Tensor) -> Tensor:
    return tn.matmul(s, w_out)


def output_distribution(s: Tensor, w_out: Tensor) -> Tensor:
    return tn.softmax(output_logits(s, w_out))


class AttentionGuidance(Module):
    def __init__(self, feature_dim: int, num_symbols: int, rng, hidden: int = 64,
                 embed_dim: int = 32, max_decode_length: int = 32, prefix: str = "guidance"):
        super().__init__(prefix, rng)
        self.feature_dim = feature_dim
        self.num_symbols = num_symbols
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.max_decode_length = max_decode_length
        self.eos = num_symbols
        self.sos = num_symbols + 1
        C, H, E = feature_dim, hidden, embed_dim
        self.uniform("embedding", (num_symbols + 2, E), E)
        self.uniform("gru.w_ih", (E + C, 3 * H), H)
        self.uniform("gru.w_hh", (H, 3 * H), H)
        self.zeros("gru.b_ih", (3 * H,))
        self.zeros("gru.b_hh", (3 * H,))
        self.uniform("attention.weight", (H, C), H)
        self.uniform("output.weight", (H, num_symbols + 1), H)

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden)))

    def step(self, y_prev, s_prev: Tensor, h: Tensor) -> tuple[Tensor, Tensor]:
        """Attend with s_{t-1}, update the GRU; returns (s_t, logits_t)."""
        alpha = attention_weights(s_prev, h, self["attention.weight"])
        s = gru_step(y_prev, glimpse(alpha, h), s_prev, self)
        return s, output_logits(s, self["output.weight"])

    def teacher_forced_loss(self, h: Tensor, labels) -> Tensor:
        """Cross-entropy of label-then-EOS, mean over steps per sample, mean over batch.

        The decoder is fed the ground-truth previous symbol at every step.
        """
        B = h.shape[0]
        lengths = [len(l) + 1 for l in labels]
        steps = max(lengths)
        if steps > self.max_decode_length:
            raise ContractError(
                f"label length {steps - 1} + EOS exceeds max decode length {self.max_decode_length}"
            )
        targets = np.full((B, steps), self.eos, dtype=np.int64)
        for b, label in enumerate(labels):
            targets[b, :len(label)] = label
        weights = np.zeros((B, steps))
        for b, n in enumerate(lengths):
            weights[b, :n] = 1.0 / (n * B)
        K = self.num_symbols + 1
        s = self.initial_state(B)
        y_prev = np.full(B, self.sos, dtype=np.int64)
        total = None
        for t in range(steps):
            s, logits = self.step(y_prev, s, h)
            mask = np.zeros((B, K))
            mask[np.arange(B), targets[:, t]] = weights[:, t]
            term = tn.sum_(tn.mul(tn.log_softmax(logits), Tensor(mask)))
            total = term if total is None else tn.add(total, term)
            y_prev = targets[:, t]
        return tn.scalar_mul(total, -1.0)

    def greedy_infer(self, h: Tensor, max_len: int | None = None) -> list[tuple[int, ...]]:
        """Argmax decoding fed back step by step, stopping at EOS or ``max_len`` symbols."""
        max_len = self.max_decode_length if max_len is None else max_len
        if max_len < 1:
            raise ContractError(f"max_len must be >= 1, got {max_len}")
        B = h.shape[0]
        outputs = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        with no_grad():
            s = self.initial_state(B)
            y_prev = np.full(B, self.sos, dtype=np.int64)
            for _ in range(max_len):
                s, logits = self.step(y_prev, s, h)
                y_prev = np.argmax(logits.data, axis=-1)
                for b in np.flatnonzero(~done):
                    if y_prev[b] == self.eos:
                        done[b] = True
                    else:
                        outputs[b].append(int(y_prev[b]))
                if done.all():
                    break
        return [tuple(o) for o in outputs]

    def infer(self, h, max_len: int | None = None) -> list[tuple[int, ...]]:
        """Same decoding as ``greedy_infer`` computed directly on arrays, without a tape."""
        max_len = self.max_decode_length if max_len is None else max_len
        if max_len < 1:
            raise ContractError(f"max_len must be >= 1, got {max_len}")
        h = np.asarray(h.data if isinstance(h, Tensor) else h, dtype=np.float64)
        B, H = h.shape[0], self.hidden
        emb, w_att, w_out = self["embedding"].data, self["attention.weight"].data, self["output.weight"].data
        w_ih, w_hh = self["gru.w_ih"].data, self["gru.w_hh"].data
        b_ih, b_hh = self["gru.b_ih"].data, self["gru.b_hh"].data
        outputs = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        s = np.zeros((B, H))
        y_prev = np.full(B, self.sos, dtype=np.int64)
        for _ in range(max_len):
            scores = np.einsum("btc,bc->bt", h, s @ w_att)
            alpha = np.exp(scores - scores.max(axis=1, keepdims=True))
            alpha /= alpha.sum(axis=1, keepdims=True)
            g = np.einsum("bt,btc->bc", alpha, h)
            gi = np.concatenate([emb[y_prev], g], axis=-1) @ w_ih + b_ih
            gh = s @ w_hh + b_hh
            r = _sigmoid_np(gi[:, :H] + gh[:, :H])
            z = _sigmoid_np(gi[:, H:2 * H] + gh[:, H:2 * H])
            n = np.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
            s = (1.0 - z) * n + z * s
            y_prev = np.argmax(s @ w_out, axis=-1)
            for b in np.flatnonzero(~done):
                if y_prev[b] == self.eos:
                    done[b] = True
                else:
                    outputs[b].append(int(y_prev[b]))
            if done.all():
                break
        return [tuple(o) for o in outputs]
