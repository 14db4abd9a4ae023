"""CTC machinery: path collapse, path enumeration, loss and greedy decoding.

Conventions
-----------
* Class index 0 of every probability row is the blank.  Alphabet symbol ``i``
  occupies class ``i + 1``.
* A *label* is a sequence of alphabet symbol indices (no blanks).
* A *path* is a length-T sequence of class indices (blanks allowed).

Two independent routes compute the loss: :func:`ctc_loss_bruteforce`
enumerates every path that collapses to the label, :func:`ctc_loss_dp` runs the
log-space forward-backward recursion in :mod:`gtc.kernels`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CapacityError, ContractError, DimensionError, InfeasibleLabelError
from .tensor import apply_primitive, register_primitive

BLANK = 0
BLANK_CHAR = "-"
ENUMERATION_CAP = 10**7


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set; the blank is implicit at class 0."""

    symbols: str

    def __post_init__(self):
        if not self.symbols:
            raise ContractError("alphabet must contain at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ContractError(f"alphabet symbols must be distinct: {self.symbols!r}")
        if BLANK_CHAR in self.symbols:
            raise ContractError(f"{BLANK_CHAR!r} is reserved for the blank")

    @property
    def blank_index(self) -> int:
        return BLANK

    @property
    def size(self) -> int:
        """Number of CTC classes, blank included."""
        return len(self.symbols) + 1

    def __len__(self):
        return len(self.symbols)

    def encode(self, text: str) -> tuple[int, ...]:
        try:
            return tuple(self.symbols.index(ch) for ch in text)
        except ValueError:
            bad = [ch for ch in text if ch not in self.symbols]
            raise ContractError(f"characters {bad!r} not in alphabet {self.symbols!r}") from None

    def decode(self, label) -> str:
        return "".join(self.symbols[i] for i in label)

    def path_from_string(self, s: str) -> tuple[int, ...]:
        return tuple(BLANK if ch == BLANK_CHAR else self.symbols.index(ch) + 1 for ch in s)

    def path_to_string(self, path) -> str:
        return "".join(BLANK_CHAR if k == BLANK else self.symbols[k - 1] for k in path)


def collapse(path) -> tuple[int, ...]:
    """Merge consecutive repeats, then drop blanks; returns symbol indices."""
    out = []
    prev = None
    for k in path:
        if k != prev and k != BLANK:
            out.append(k - 1)
        prev = k
    return tuple(out)


def min_path_length(label) -> int:
    """Shortest T at which ``label`` is emittable: one frame per symbol plus a blank between repeats."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def extend_with_blanks(label) -> np.ndarray:
    ext = np.zeros(2 * len(label) + 1, dtype=np.intp)
    ext[1::2] = np.asarray(label, dtype=np.intp) + 1
    return ext


def enumerate_paths(label, T: int, num_symbols: int) -> list[tuple[int, ...]]:
    """All length-T paths over ``num_symbols + 1`` classes whose collapse is ``label``.

    Brute force over the full path space; capped at ``ENUMERATION_CAP`` paths.
    """
    if T < 1:
        raise ContractError(f"T must be positive, got {T}")
    K = num_symbols + 1
    if K**T > ENUMERATION_CAP:
        raise CapacityError(f"{K}^{T} paths exceeds enumeration cap {ENUMERATION_CAP}")
    target = tuple(label)
    return [p for p in itertools.product(range(K), repeat=T) if collapse(p) == target]


def _check_instance(log_probs, label):
    if log_probs.ndim != 2:
        raise DimensionError(f"log-probabilities must be (T, classes), got {log_probs.shape}")
    T, K = log_probs.shape
    label = tuple(int(i) for i in label)
    if label and (min(label) < 0 or max(label) >= K - 1):
        raise DimensionError(f"label indices {label} out of range for {K} classes")
    need = min_path_length(label)
    if T < need:
        raise InfeasibleLabelError(
            f"label of length {len(label)} needs at least {need} frames, got T={T}"
        )
    return label


def ctc_loss_bruteforce(log_probs, label) -> float:
    """Reference loss: -log of the summed probability of every collapsing path."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise DimensionError(f"log-probabilities must be (T, classes), got {log_probs.shape}")
    T, K = log_probs.shape
    paths = enumerate_paths(label, T, K - 1)
    if not paths:
        raise InfeasibleLabelError(f"no length-{T} path collapses to {tuple(label)}")
    idx = np.array(paths)
    path_logp = log_probs[np.arange(T), idx].sum(axis=1)
    m = path_logp.max()
    return float(-(m + np.log(np.exp(path_logp - m).sum())))


def ctc_loss_dp(log_probs, label, backend=None) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to every entry of ``log_probs``.

    Entries of ``log_probs`` are treated as free variables, so the gradient is
    minus the alpha-beta posterior occupancy of each (frame, class) cell.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    label = _check_instance(log_probs, label)
    return kernels.ctc_forward_backward(log_probs, extend_with_blanks(label), backend=backend)


def greedy_decode(log_probs, backend=None) -> tuple[int, ...]:
    """Per-frame argmax (ties to the lowest class) followed by collapse."""
    classes = kernels.best_path_decode(np.asarray(log_probs, dtype=np.float64), backend=backend)
    return tuple(k - 1 for k in classes)


@register_primitive("ctc_loss")
def _ctc_loss_primitive(log_probs, labels):
    if log_probs.ndim == 2:
        loss, grad = ctc_loss_dp(log_probs, labels[0])
        return np.asarray(loss), lambda g: (g * grad,)
    if log_probs.ndim != 3 or log_probs.shape[0] != len(labels):
        raise DimensionError(
            f"ctc_loss: log-probs {log_probs.shape} do not match {len(labels)} labels"
        )
    B = len(labels)
    grads = np.empty_like(log_probs)
    total = 0.0
    for b, label in enumerate(labels):
        loss, grads[b] = ctc_loss_dp(log_probs[b], label)
        total += loss
    grads /= B
    return np.asarray(total / B), lambda g: (g * grads,)


def ctc_loss(log_probs, labels):
    """Mean CTC loss over a batch as a differentiable scalar.

    ``log_probs`` is a (B, T, classes) tensor of row log-probabilities, or a
    single (T, classes) instance with a one-element ``labels`` list.
    """
    return apply_primitive("ctc_loss", [log_probs], labels=[tuple(l) for l in labels])
