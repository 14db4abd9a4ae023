"""End-to-end acceptance gate; prints one PASS/FAIL line per criterion.

Criteria 6-8 train 20 toy models (about 25 s each on one core), so this
module dominates the suite's runtime.
"""

import itertools
import statistics
import time

import numpy as np
import pytest

from gtc import tensor as tn
from gtc.config import toy_run
from gtc.ctc import (
    Alphabet,
    collapse,
    ctc_loss,
    ctc_loss_bruteforce,
    ctc_loss_dp,
    enumerate_paths,
    min_path_length,
)
from gtc.dataset import generate_corpus, load_corpus
from gtc.gcn import distance_matrix, gcn_forward, lstm_sequence
from gtc.gradcheck import check_gradient
from gtc.guidance import attention_weights, glimpse, gru_step
from gtc.tensor import Tensor
from gtc.trainer import (
    GTCModel,
    bench_decode,
    branch_gradients,
    evaluate,
    load_checkpoint,
    run_training,
)
from test_tensor import CASES as PRIMITIVE_CASES

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3, 4, 5)
RESULTS: dict[int, str] = {}


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    return ok


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is None:
        return
    reporter.write_line("")
    for n in sorted(RESULTS):
        reporter.write_line(RESULTS[n])


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Lazily trained toy models keyed by (mode, seed), with wall-clock seconds."""
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(mode, seed):
        if (mode, seed) not in cache:
            run = toy_run(mode, seed)
            path = root / f"toy{seed}.gtcc"
            if not path.exists():
                generate_corpus(run.corpus, path)
            corpus = load_corpus(path)
            t0 = time.perf_counter()
            trainer, last = run_training(corpus, run)
            cache[mode, seed] = (trainer, last, corpus, time.perf_counter() - t0)
        return cache[mode, seed]

    return get


def test_criterion_01_ctc_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    labels = [lab for n in range(4) for lab in itertools.product(range(3), repeat=n)]
    worst, checked = 0.0, 0
    for T in (3, 4, 5, 6):
        z = rng.standard_normal((T, 4))
        lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        for label in labels:
            if min_path_length(label) > T:
                continue
            ref = ctc_loss_bruteforce(lp, label)
            got, _ = ctc_loss_dp(lp, label)
            worst = max(worst, abs(got - ref) / abs(ref))
            checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10
    assert record(1, ok, f"{checked} (label, T) pairs, max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_path_example_and_collapse():
    ab = Alphabet("AB")
    paths = {ab.path_to_string(p) for p in enumerate_paths(ab.encode("AB"), 3, 2)}
    helo = Alphabet("helo")
    collapsed = helo.decode(collapse(helo.path_from_string("-hh-e-ll-l--oo--")))
    ok = paths == {"A-B", "-AB", "AB-", "AAB", "ABB"} and collapsed == "hello"
    assert record(2, ok, f"paths {sorted(paths)}, collapse -> {collapsed!r}")


def _weighted(out, rng):
    return tn.sum_(tn.mul(out, Tensor(rng.standard_normal(out.shape))))


def _gru_case(rng):
    H, E, C, K = 3, 2, 4, 5
    shapes = {"embedding": (K, E), "gru.w_ih": (E + C, 3 * H), "gru.w_hh": (H, 3 * H),
              "gru.b_ih": (3 * H,), "gru.b_hh": (3 * H,)}
    names = list(shapes)
    y_prev = rng.integers(0, K, size=2)
    arrays = [rng.standard_normal((2, C)), rng.standard_normal((2, H))]
    arrays += [rng.standard_normal(s) * 0.7 for s in shapes.values()]

    def fn(g, s, *ws):
        return _weighted(gru_step(y_prev, g, s, dict(zip(names, ws))), np.random.default_rng(1))

    return fn, arrays


def _lstm_case(rng):
    reverse = bool(rng.integers(0, 2))

    def fn(xw, w_hh):
        return _weighted(lstm_sequence(xw, w_hh, reverse), np.random.default_rng(2))

    return fn, [rng.standard_normal((2, 4, 12)), rng.standard_normal((3, 12)) * 0.5]


def _attention_case(rng):
    def fn(s, h, w):
        return _weighted(glimpse(attention_weights(s, h, w), h), np.random.default_rng(3))

    return fn, [rng.standard_normal((2, 3)), rng.standard_normal((2, 5, 4)), rng.standard_normal((3, 4))]


def _gcn_case(rng):
    def fn(h, wp, wg):
        return _weighted(gcn_forward(h, wp, wg, 2.0), np.random.default_rng(4))

    return fn, [rng.standard_normal((5, 3)), rng.standard_normal((3, 3)), rng.standard_normal((3, 3))]


def _ctc_case(rng):
    T = int(rng.integers(3, 7))
    labels = [tuple(int(i) for i in rng.integers(0, 3, size=int(rng.integers(1, 3)))) for _ in range(2)]

    def fn(z):
        return ctc_loss(tn.log_softmax(z), labels)

    return fn, [rng.standard_normal((2, T, 4))]


def test_criterion_03_gradient_suite():
    t0 = time.perf_counter()
    cases = dict(PRIMITIVE_CASES)
    cases.update(gru=_gru_case, lstm=_lstm_case, attention=_attention_case, gcn_forward=_gcn_case,
                 ctc_loss=_ctc_case)
    worst = {}
    for name, build in cases.items():
        errs = []
        for i in range(10):
            fn, arrays = build(np.random.default_rng(5000 + i))
            errs.append(check_gradient(fn, arrays, eps=1e-5))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not bad and elapsed < 60
    assert record(3, ok, f"{len(cases)} operations x 10 instances, max rel err {max(worst.values()):.2e}, "
                         f"{elapsed:.1f}s" + (f", failing {bad}" if bad else ""))


def test_criterion_04_routing_is_exact(tmp_path):
    run = toy_run("gtc", 0)
    path = tmp_path / "c.gtcc"
    generate_corpus(run.corpus, path)
    batch = load_corpus(path).split("train")[:8]
    model = GTCModel("AB", run)
    groups = model.groups()
    ctc = branch_gradients(model, batch, "ctc")
    ce = branch_gradients(model, batch, "ce")
    leaks = [p.name for p in groups["encoder"] + groups["guidance"] if ctc[p.name].any()]
    leaks += [p.name for p in groups["decoder"] if ce[p.name].any()]
    live = all(ce[p.name].any() for p in groups["encoder"]) and all(ctc[p.name].any() for p in groups["decoder"])
    ok = not leaks and live
    assert record(4, ok, f"nonzero where forbidden: {leaks or 'none'}; designated gradients nonzero: {live}")


def test_criterion_05_distance_matrix_values():
    worst = 0.0
    for beta in (0.5, 2.0, 3.7):
        a = distance_matrix(9, beta)
        for i, j in itertools.product(range(9), repeat=2):
            z = beta - abs(i - j)
            worst = max(worst, abs(a[i, j] - 1.0 / (1.0 + np.exp(-z))))
    a = distance_matrix(5, 2.0)
    diag = abs(a[2, 2] - 1.0 / (1.0 + np.exp(-2.0)))
    ok = worst <= 1e-12 and diag <= 1e-12 and a[0, 2] == 0.5
    assert record(5, ok, f"max abs err {worst:.1e}; A_D(i,i) err {diag:.1e}; |i-j|=2 -> {a[0, 2]}")


def test_criterion_06_toy_convergence(runs):
    _, last, _, seconds = runs("gtc", 1)
    ok = last["accuracy"] >= 0.95 and seconds < 300
    assert record(6, ok, f"gtc seed 1: train accuracy {last['accuracy']:.3f} after 200 steps in {seconds:.1f}s")


def _median_test_accuracy(runs, mode):
    accs = []
    for seed in SEEDS:
        trainer, _, corpus, _ = runs(mode, seed)
        accs.append(evaluate(corpus.split("test"), trainer.model)["accuracy"])
    return statistics.median(accs), accs


def test_criterion_07_guidance_direction(runs):
    gtc, gtc_all = _median_test_accuracy(runs, "gtc")
    cga, cga_all = _median_test_accuracy(runs, "ctc_guides_attention")
    ok = gtc >= cga
    assert record(7, ok, f"median test accuracy gtc {gtc:.2f} {gtc_all} vs ctc_guides_attention {cga:.2f} {cga_all}")


def test_criterion_08_mode_ordering(runs):
    gtc, gtc_all = _median_test_accuracy(runs, "gtc")
    plain, plain_all = _median_test_accuracy(runs, "gtc_no_gcn")
    base, base_all = _median_test_accuracy(runs, "ctc_only")
    ok = gtc >= base and plain >= base
    assert record(8, ok, f"median test accuracy gtc {gtc:.2f} {gtc_all}, gtc_no_gcn {plain:.2f} {plain_all}, "
                         f"ctc_only {base:.2f} {base_all}")


def test_criterion_09_latency_direction(runs):
    trainer, _, corpus, _ = runs("gtc", 1)
    r = bench_decode(trainer.model, corpus.split("test"), 20, repeats=5)
    ok = r["ctc_ms_per_image"] < r["attention_ms_per_image"] and r["ratio"] >= 2
    assert record(9, ok, f"ctc {r['ctc_ms_per_image']:.3f} ms, attention {r['attention_ms_per_image']:.3f} ms, "
                         f"ratio {r['ratio']:.2f} (need >= 2)")


class _Crash(Exception):
    pass


def test_criterion_10_determinism_and_resume(tmp_path):
    run = toy_run("gtc", 2, max_steps=40, eval_interval=10, checkpoint_interval=10)
    path = tmp_path / "c.gtcc"
    generate_corpus(run.corpus, path)
    corpus = load_corpus(path)
    run_training(corpus, run, csv_path=tmp_path / "a.csv", checkpoint_path=tmp_path / "a.ckpt")
    run_training(corpus, run, csv_path=tmp_path / "b.csv", checkpoint_path=tmp_path / "b.ckpt")
    same_csv = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def crash_after_23(report, metrics):
        if report.step == 23:
            raise _Crash

    with pytest.raises(_Crash):
        run_training(corpus, run, checkpoint_path=tmp_path / "c.ckpt", progress=crash_after_23)
    resumed_from = load_checkpoint(tmp_path / "c.ckpt").step
    run_training(corpus, run, csv_path=tmp_path / "c.csv", checkpoint_path=tmp_path / "c.ckpt",
                 resume=tmp_path / "c.ckpt")
    full_rows = (tmp_path / "a.csv").read_text().splitlines()
    resumed_rows = (tmp_path / "c.csv").read_text().splitlines()
    same_tail = resumed_rows[0] == full_rows[0] and resumed_rows[1:] == full_rows[1 + resumed_from:]
    same_state = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "c.ckpt").read_bytes()
    ok = same_csv and resumed_from == 20 and same_tail and same_state
    assert record(10, ok, f"rerun CSV identical: {same_csv}; resumed at step {resumed_from}, "
                          f"rows and final checkpoint identical: {same_tail and same_state}")
