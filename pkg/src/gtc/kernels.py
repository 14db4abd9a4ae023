"""Hot-kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``GTC_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os

import numpy as np

BACKENDS = ("cython", "python")


def load_backend(name):
    if name == "cython":
        return importlib.import_module("gtc._ckernels")
    if name == "python":
        return importlib.import_module("gtc._pykernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = []
    for name in BACKENDS:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


if os.environ.get("GTC_PURE_PYTHON"):
    BACKEND = "python"
else:
    try:
        load_backend("cython")
        BACKEND = "cython"
    except ImportError:
        BACKEND = "python"

_impl = load_backend(BACKEND)


def ctc_forward_backward(log_probs, ext, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    return impl.ctc_forward_backward(lp, np.ascontiguousarray(ext, dtype=np.intp))


def best_path_decode(log_probs, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    return impl.best_path_decode(np.ascontiguousarray(log_probs, dtype=np.float64))


def edit_distance(a, b, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    return impl.edit_distance(a, b)


def lstm_forward(xw, w_hh, reverse, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    return impl.lstm_forward(np.ascontiguousarray(xw, dtype=np.float64),
                             np.ascontiguousarray(w_hh, dtype=np.float64), bool(reverse))


def lstm_backward(dhs, w_hh, cache, reverse, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    return impl.lstm_backward(np.ascontiguousarray(dhs, dtype=np.float64),
                              np.ascontiguousarray(w_hh, dtype=np.float64), cache, bool(reverse))
