"""GCN+CTC decoder head.

Feature slices ``h_i`` are linearly projected to ``c_i``; their pairwise
cosine similarities form ``A_S``.  A fixed logistic distance gate ``A_D``
confines mixing to nearby slices, and the graph layer computes
``X = (A_S * A_D) H W_g`` with ``*`` the element-wise product.  A BiLSTM reads
``X`` and a linear classifier produces per-frame logits over blank plus the
alphabet.

All functions accept either a single sequence ``(T, C)`` or a batch
``(B, T, C)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import kernels
from . import tensor as tn
from .errors import DimensionError
from .nn import Module
from .tensor import Tensor, apply_primitive, register_primitive

COSINE_EPS = 1e-12


def project_slices(h: Tensor, weight: Tensor) -> Tensor:
    """c_i = h_i W_p for every slice, with weights shared across positions."""
    return tn.matmul(h, weight)


def _column(x: Tensor) -> Tensor:
    return tn.reshape(x, x.shape + (1,))


def _row(x: Tensor) -> Tensor:
    return tn.reshape(x, x.shape[:-1] + (1, x.shape[-1]))


def similarity_matrix(c: Tensor) -> Tensor:
    """Pairwise cosine similarity between rows of ``c``.

    The norm is guarded as sqrt(|c|^2 + eps^2), so a zero row gets similarity
    0 with everything (including itself).
    """
    gram = tn.matmul(c, tn.transpose2d(c))
    sq = tn.sum_(tn.mul(c, c), axis=-1)
    inv_norm = tn.exp(tn.scalar_mul(tn.log(tn.add(sq, COSINE_EPS**2)), -0.5))
    scale = tn.matmul(_column(inv_norm), _row(inv_norm))
    return tn.mul(gram, scale)


def distance_matrix(T: int, beta: float) -> np.ndarray:
    """A_D(i, j) = exp(beta - |i-j|) / (exp(beta - |i-j|) + 1)."""
    d = np.abs(np.arange(T)[:, None] - np.arange(T)[None, :]).astype(np.float64)
    z = beta - d
    with np.errstate(over="ignore"):
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


@lru_cache(maxsize=64)
def _cached_distance(T: int, beta: float) -> np.ndarray:
    out = distance_matrix(T, beta)
    out.setflags(write=False)
    return out


def gcn_forward(h: Tensor, projection: Tensor, mix: Tensor | None, beta: float) -> Tensor:
    T = h.shape[-2]
    adjacency = tn.mul(similarity_matrix(project_slices(h, projection)), Tensor(_cached_distance(T, float(beta))))
    x = tn.matmul(adjacency, h)
    return x if mix is None else tn.matmul(x, mix)


@register_primitive("lstm_sequence")
def _lstm_sequence(xw, w_hh, reverse=False):
    if xw.ndim != 3 or w_hh.ndim != 2 or xw.shape[2] != 4 * w_hh.shape[0] or w_hh.shape[1] != xw.shape[2]:
        raise DimensionError(f"lstm_sequence: incompatible shapes {xw.shape} and {w_hh.shape}")
    hs, cache = kernels.lstm_forward(xw, w_hh, reverse)
    return hs, lambda g: kernels.lstm_backward(g, w_hh, cache, reverse)


def lstm_sequence(xw: Tensor, w_hh: Tensor, reverse: bool = False) -> Tensor:
    """One LSTM direction as a single fused primitive.

    ``xw`` is (B, T, 4H) holding x_t W_ih + b with gate blocks ordered
    input, forget, cell, output; zero initial state.  Returns (B, T, H)
    hidden states in time order.
    """
    return apply_primitive("lstm_sequence", [xw, w_hh], reverse=bool(reverse))


class GcnDecoder(Module):
    """Trainable parameters and forward pass of the GCN+CTC head.

    With ``use_gcn=False`` the graph layer is bypassed and the BiLSTM reads
    the feature slices directly (the plain CTC baseline head).
    """

    def __init__(self, feature_dim: int, num_classes: int, rng, hidden: int = 64,
                 proj_dim: int | None = None, beta: float = 2.0, use_gcn: bool = True,
                 use_mix_weight: bool = True, prefix: str = "decoder"):
        super().__init__(prefix, rng)
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.hidden = hidden
        self.beta = beta
        self.use_gcn = use_gcn
        self.use_mix_weight = use_mix_weight and use_gcn
        C, H = feature_dim, hidden
        if use_gcn:
            D = proj_dim or C
            self.uniform("projection.weight", (C, D), C)
            if self.use_mix_weight:
                self.add_param("mix.weight", np.eye(C))
        for direction in ("lstm_fwd", "lstm_bwd"):
            self.uniform(f"{direction}.w_ih", (C, 4 * H), C)
            self.uniform(f"{direction}.w_hh", (H, 4 * H), H)
            self.zeros(f"{direction}.bias", (4 * H,))
        self.uniform("classifier.weight", (2 * H, num_classes), 2 * H)
        self.zeros("classifier.bias", (num_classes,))

    def graph(self, h: Tensor) -> Tensor:
        if not self.use_gcn:
            return h
        mix = self["mix.weight"] if self.use_mix_weight else None
        return gcn_forward(h, self["projection.weight"], mix, self.beta)

    def bilstm_states(self, x: Tensor, swap_directions: bool = False) -> Tensor:
        """Concatenated forward/backward hidden states, (B, T, 2H)."""
        fwd, bwd = ("lstm_bwd", "lstm_fwd") if swap_directions else ("lstm_fwd", "lstm_bwd")
        outs = []
        for name, reverse in ((fwd, False), (bwd, True)):
            xw = tn.add(tn.matmul(x, self[f"{name}.w_ih"]), self[f"{name}.bias"])
            outs.append(lstm_sequence(xw, self[f"{name}.w_hh"], reverse))
        return tn.concat(outs, axis=-1)

    def bilstm_classify(self, x: Tensor) -> Tensor:
        """Per-frame logits over blank + alphabet."""
        single = x.ndim == 2
        if single:
            x = tn.reshape(x, (1,) + x.shape)
        logits = tn.add(tn.matmul(self.bilstm_states(x), self["classifier.weight"]), self["classifier.bias"])
        return tn.reshape(logits, logits.shape[1:]) if single else logits

    def __call__(self, h: Tensor) -> Tensor:
        """Feature sequence -> per-frame log-probabilities."""
        return tn.log_softmax(self.bilstm_classify(self.graph(h)))

    def infer(self, h: np.ndarray) -> np.ndarray:
        """Tape-free forward for inference: (B, T, C) features -> (B, T, K) log-probabilities."""
        h = np.asarray(h, dtype=np.float64)
        x = h
        if self.use_gcn:
            c = h @ self["projection.weight"].data
            inv = 1.0 / np.sqrt(np.einsum("btd,btd->bt", c, c) + COSINE_EPS**2)
            sim = (c @ np.swapaxes(c, 1, 2)) * inv[:, :, None] * inv[:, None, :]
            x = (sim * _cached_distance(h.shape[1], float(self.beta))) @ h
            if self.use_mix_weight:
                x = x @ self["mix.weight"].data
        outs = []
        for name, reverse in (("lstm_fwd", False), ("lstm_bwd", True)):
            xw = x @ self[f"{name}.w_ih"].data + self[f"{name}.bias"].data
            outs.append(kernels.lstm_forward(xw, self[f"{name}.w_hh"].data, reverse)[0])
        logits = np.concatenate(outs, axis=-1) @ self["classifier.weight"].data + self["classifier.bias"].data
        logits = logits - logits.max(axis=-1, keepdims=True)
        return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
