"""Guided training of the CTC head, ablation modes, evaluation and checkpoints.

In ``gtc`` mode the encoder output feeds the attention guidance directly and
the GCN+CTC decoder through :func:`~gtc.tensor.detach`.  The summed loss is
back-propagated once; the barrier guarantees that the cross-entropy gradient
reaches only the encoder and guidance while the CTC gradient reaches only the
decoder.
"""

from __future__ import annotations

import logging
import math
import statistics
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import kernels
from .config import RunConfig, TrainConfig
from .ctc import ctc_loss, greedy_decode, min_path_length
from .dataset import Sample, SplitMix64, sample_seed
from .encoder import Encoder, sequence_length
from .errors import CheckpointError, ContractError
from .gcn import GcnDecoder
from .guidance import AttentionGuidance
from .optim import Adam
from .tensor import Tensor, backward, detach, no_grad, scalar_mul

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModeSpec:
    guidance: bool
    ctc: bool
    gcn: bool
    ce_trains_encoder: bool
    ctc_trains_encoder: bool
    eval_head: str


MODE_SPECS = {
    "gtc": ModeSpec(True, True, True, True, False, "ctc"),
    "gtc_no_gcn": ModeSpec(True, True, False, True, False, "ctc"),
    "ctc_only": ModeSpec(False, True, False, False, True, "ctc"),
    "ctc_plus_gcn": ModeSpec(False, True, True, False, True, "ctc"),
    "attention_only": ModeSpec(True, False, False, True, False, "attention"),
    "ctc_guides_attention": ModeSpec(True, True, True, False, True, "attention"),
}
GUIDED_MODES = ("gtc", "gtc_no_gcn")
ABLATION_MODES = ("ctc_only", "attention_only", "ctc_guides_attention", "ctc_plus_gcn")


class GTCModel:
    """Encoder plus whichever heads the training mode uses."""

    def __init__(self, alphabet: str, run: RunConfig):
        self.alphabet = alphabet
        self.run = run
        tc = run.train
        self.mode = MODE_SPECS[tc.mode]
        rng = np.random.default_rng(tc.seed)
        self.encoder = Encoder(run.encoder, rng)
        C = self.encoder.feature_dim
        self.guidance = None
        self.decoder = None
        if self.mode.guidance:
            self.guidance = AttentionGuidance(C, len(alphabet), rng, hidden=tc.guidance_hidden,
                                              embed_dim=tc.embed_dim,
                                              max_decode_length=tc.max_decode_length)
        if self.mode.ctc:
            self.decoder = GcnDecoder(C, len(alphabet) + 1, rng, hidden=tc.decoder_hidden,
                                      proj_dim=tc.proj_dim or None, beta=tc.beta,
                                      use_gcn=self.mode.gcn, use_mix_weight=tc.use_mix_weight)

    def groups(self) -> dict[str, list]:
        out = {"encoder": self.encoder.parameters()}
        if self.guidance is not None:
            out["guidance"] = self.guidance.parameters()
        if self.decoder is not None:
            out["decoder"] = self.decoder.parameters()
        return out

    def parameters(self):
        return [p for ps in self.groups().values() for p in ps]

    def branches(self) -> list[list]:
        """Parameter sets updated by each loss; clipping is applied per set."""
        groups = self.groups()
        ce, ctc = [], []
        if self.guidance is not None:
            ce = groups["guidance"] + (groups["encoder"] if self.mode.ce_trains_encoder else [])
        if self.decoder is not None:
            ctc = groups["decoder"] + (groups["encoder"] if self.mode.ctc_trains_encoder else [])
        return [b for b in (ce, ctc) if b]

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def losses(self, images, labels, ce_weight=1.0, ctc_weight=1.0):
        """Forward both branches with the mode's gradient routing.

        Returns ``(ce, ctc)``; a branch absent in this mode yields ``None``.
        """
        h = self.encoder(images)
        ce = ctc = None
        if self.guidance is not None:
            h_ce = h if self.mode.ce_trains_encoder else detach(h)
            ce = self.guidance.teacher_forced_loss(h_ce, labels)
        if self.decoder is not None:
            h_ctc = h if self.mode.ctc_trains_encoder else detach(h)
            ctc = ctc_loss(self.decoder(h_ctc), labels)
        return ce, ctc

    def decode(self, images, head=None) -> list[tuple[int, ...]]:
        head = head or self.mode.eval_head
        with no_grad():
            h = self.encoder(images).data
            if head == "ctc":
                if self.decoder is None:
                    raise ContractError("model has no CTC head")
                lp = self.decoder.infer(h)
                return [greedy_decode(lp[b]) for b in range(lp.shape[0])]
            if head == "attention":
                if self.guidance is None:
                    raise ContractError("model has no guidance head")
                return self.guidance.infer(h)
        raise ContractError(f"unknown head {head!r}")


def combine(ce, ctc, ce_weight, ctc_weight):
    terms = []
    if ce is not None:
        terms.append(scalar_mul(ce, ce_weight))
    if ctc is not None:
        terms.append(scalar_mul(ctc, ctc_weight))
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))


def clip_gradients(params, max_norm: float) -> float:
    """Rescale the accumulated gradients so their joint norm is at most ``max_norm``."""
    norm = grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


@dataclass
class StepReport:
    step: int
    ce_loss: float | None
    ctc_loss: float | None
    grad_norms: dict[str, float]
    lr: float
    skipped: int = 0
    wall_time: float = 0.0


def feasible(samples, model: GTCModel):
    """Split a batch into CTC-feasible samples and a skipped count."""
    if model.decoder is None:
        return list(samples), 0
    keep = []
    for s in samples:
        T = sequence_length(model.run.encoder, s.image.shape[1])
        if min_path_length(s.label) <= T:
            keep.append(s)
    return keep, len(samples) - len(keep)


def stack_images(samples) -> np.ndarray:
    widths = {s.image.shape for s in samples}
    if len(widths) != 1:
        raise ContractError(f"batch images must share one shape, got {sorted(widths)}")
    return np.stack([s.image for s in samples])


def train_step(batch, model: GTCModel, config: TrainConfig, optimizer: Adam, step: int) -> StepReport:
    """One forward, one combined backward, one Adam update."""
    start = time.perf_counter()
    batch, skipped = feasible(batch, model)
    lr = config.lr_at(step)
    if skipped:
        log.warning("step %d: skipped %d CTC-infeasible samples", step, skipped)
    if not batch:
        return StepReport(step, None, None, {}, lr, skipped, time.perf_counter() - start)
    labels = [s.label for s in batch]
    ce, ctc = model.losses(stack_images(batch), labels)
    backward(combine(ce, ctc, config.ce_weight, config.ctc_weight))
    norms = {name: grad_norm(ps) for name, ps in model.groups().items()}
    if config.grad_clip > 0:
        for branch in model.branches():
            clip_gradients(branch, config.grad_clip)
    optimizer.step(lr)
    return StepReport(
        step,
        None if ce is None else ce.item(),
        None if ctc is None else ctc.item(),
        norms,
        lr,
        skipped,
        time.perf_counter() - start,
    )


def guided_step(batch, model, config, optimizer, step) -> StepReport:
    if config.mode not in GUIDED_MODES:
        raise ContractError(f"guided_step needs mode in {GUIDED_MODES}, got {config.mode!r}")
    return train_step(batch, model, config, optimizer, step)


def ablation_step(batch, model, config, optimizer, step) -> StepReport:
    if config.mode not in ABLATION_MODES:
        raise ContractError(f"ablation_step needs mode in {ABLATION_MODES}, got {config.mode!r}")
    return train_step(batch, model, config, optimizer, step)


def branch_gradients(model: GTCModel, batch, branch: str) -> dict[str, np.ndarray]:
    """Parameter gradients from one loss alone ("ce" or "ctc"); accumulators are left zeroed."""
    for p in model.parameters():
        p.zero_grad()
    ce, ctc = model.losses(stack_images(batch), [s.label for s in batch])
    loss = {"ce": ce, "ctc": ctc}[branch]
    if loss is None:
        raise ContractError(f"mode {model.run.train.mode!r} has no {branch} branch")
    backward(loss)
    grads = {p.name: p.grad.copy() for p in model.parameters()}
    for p in model.parameters():
        p.zero_grad()
    return grads


class Trainer:
    """Owns the model, optimizer, batch sampler and step counter."""

    def __init__(self, model: GTCModel, samples, config: TrainConfig | None = None):
        if not samples:
            raise ContractError("training split is empty")
        self.model = model
        self.config = config or model.run.train
        self.samples = list(samples)
        self.optimizer = Adam(model.parameters(), lr=self.config.lr)
        self.rng = SplitMix64(sample_seed(self.config.seed, 0xBA7C4))
        self.step = 0

    def next_batch(self) -> list[Sample]:
        n = len(self.samples)
        idx = list(range(n))
        k = min(self.config.batch_size, n)
        for i in range(k):
            j = self.rng.randint(i, n - 1)
            idx[i], idx[j] = idx[j], idx[i]
        return [self.samples[i] for i in idx[:k]]

    def train_step(self) -> StepReport:
        self.step += 1
        return train_step(self.next_batch(), self.model, self.config, self.optimizer, self.step)


def edit_distance(a, b) -> int:
    return kernels.edit_distance(a, b)


def evaluate(samples, model: GTCModel, head: str | None = None, batch_size: int = 32) -> dict[str, float]:
    """Greedy decode every sample: exact-match accuracy, mean normalized edit distance, ms/image."""
    samples = list(samples)
    if not samples:
        raise ContractError("cannot evaluate an empty split")
    by_shape: dict[tuple, list] = {}
    for s in samples:
        by_shape.setdefault(s.image.shape, []).append(s)
    correct = 0
    ned = 0.0
    elapsed = 0.0
    for group in by_shape.values():
        for i in range(0, len(group), batch_size):
            chunk = group[i:i + batch_size]
            images = stack_images(chunk)
            start = time.perf_counter()
            preds = model.decode(images, head)
            elapsed += time.perf_counter() - start
            for s, p in zip(chunk, preds):
                correct += p == s.label
                ned += edit_distance(p, s.label) / max(len(s.label), 1)
    n = len(samples)
    return {"accuracy": correct / n, "ned": ned / n, "ms_per_image": 1000.0 * elapsed / n, "n": n}


def bench_decode(model: GTCModel, samples, n_samples: int, repeats: int = 3) -> dict[str, float]:
    """Median per-image decode latency of both heads on identical encoder features, batch size 1.

    Both heads run their tape-free inference paths, so the timing reflects
    the decoders rather than autodiff bookkeeping.
    """
    if n_samples < 1:
        raise ContractError("n_samples must be >= 1")
    if model.decoder is None:
        raise ContractError("no CTC head")
    if model.guidance is None:
        raise ContractError("no guidance head")
    samples = list(samples)
    if not samples:
        raise ContractError("no samples to benchmark")
    picks = [samples[i % len(samples)] for i in range(n_samples)]
    ctc_ms, att_ms = [], []
    with no_grad():
        feats = [model.encoder(s.image[None]).data for s in picks]
        for h in feats:
            best_ctc = best_att = math.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                greedy_decode(model.decoder.infer(h)[0])
                t1 = time.perf_counter()
                model.guidance.infer(h)
                t2 = time.perf_counter()
                best_ctc = min(best_ctc, t1 - t0)
                best_att = min(best_att, t2 - t1)
            ctc_ms.append(1000.0 * best_ctc)
            att_ms.append(1000.0 * best_att)
    c = statistics.median(ctc_ms)
    a = statistics.median(att_ms)
    return {"ctc_ms_per_image": c, "attention_ms_per_image": a, "ratio": a / c, "n": n_samples}


CKPT_MAGIC = b"GTCK"
CKPT_VERSION = 1


@dataclass
class ModelCheckpoint:
    version: int
    config_text: str
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    step: int
    rng_state: int
    alphabet: str = field(default="")

    @property
    def run(self) -> RunConfig:
        return cfgmod.from_text(self.config_text)


def _pack_str(s: str, width="<I") -> bytes:
    b = s.encode("utf-8")
    return struct.pack(width, len(b)) + b


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    head = _pack_str(name, "<H") + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(trainer: Trainer, path) -> None:
    """Write parameters, Adam moments, step counter and sampler state.

    Layout (little-endian): b"GTCK" | version u16 | config text (u32 len + UTF-8)
    | param count u32 | params | moment-1 tables | moment-2 tables | adam t u64
    | step u64 | sampler state u64 | CRC32 of everything before it.
    Each table entry is name (u16 len + UTF-8) | ndim u8 | dims u32* | float64 data.
    """
    model = trainer.model
    text = cfgmod.to_text(model.run, {"model": {"alphabet": model.alphabet}})
    params = model.parameters()
    parts = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION), _pack_str(text), struct.pack("<I", len(params))]
    parts += [_pack_array(p.name, p.data) for p in params]
    parts += [_pack_array(p.name, trainer.optimizer.m[p.name]) for p in params]
    parts += [_pack_array(p.name, trainer.optimizer.v[p.name]) for p in params]
    parts.append(struct.pack("<QQQ", trainer.optimizer.t, trainer.step, trainer.rng.state))
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> ModelCheckpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 10 or blob[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a GTCK checkpoint")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    off = 6
    try:
        (n,) = struct.unpack_from("<I", body, off)
        text = body[off + 4:off + 4 + n].decode("utf-8")
        off += 4 + n
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        tables = []
        for _ in range(3):
            table = {}
            for _ in range(count):
                (ln,) = struct.unpack_from("<H", body, off)
                name = body[off + 2:off + 2 + ln].decode("utf-8")
                off += 2 + ln
                (ndim,) = struct.unpack_from("<B", body, off)
                shape = struct.unpack_from(f"<{ndim}I", body, off + 1)
                off += 1 + 4 * ndim
                size = math.prod(shape)
                table[name] = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape).copy()
                off += 8 * size
            tables.append(table)
        adam_t, step, rng_state = struct.unpack_from("<QQQ", body, off)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    alphabet = cfgmod.read_sections(text).get("model", {}).get("alphabet", "")
    return ModelCheckpoint(version, text, tables[0], tables[1], tables[2], adam_t, step, rng_state, alphabet)


def restore(trainer: Trainer, ckpt: ModelCheckpoint) -> None:
    """Load checkpoint state into a trainer whose model has the same parameter layout."""
    model = trainer.model
    load_parameters(model, ckpt)
    for p in model.parameters():
        trainer.optimizer.m[p.name][...] = ckpt.adam_m[p.name]
        trainer.optimizer.v[p.name][...] = ckpt.adam_v[p.name]
    trainer.optimizer.t = ckpt.adam_t
    trainer.step = ckpt.step
    trainer.rng.state = ckpt.rng_state


def load_parameters(model: GTCModel, ckpt: ModelCheckpoint) -> None:
    params = model.named_parameters()
    missing = set(params) ^ set(ckpt.params)
    if missing:
        raise CheckpointError(f"parameter sets differ: {sorted(missing)[0]!r}")
    for name, p in params.items():
        arr = ckpt.params[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"shape mismatch for parameter {name!r}: checkpoint {arr.shape}, model {p.shape}")
        p.data[...] = arr
        p.zero_grad()


def model_from_checkpoint(ckpt: ModelCheckpoint) -> GTCModel:
    model = GTCModel(ckpt.alphabet, ckpt.run)
    load_parameters(model, ckpt)
    return model


CSV_HEADER = "step,ce_loss,ctc_loss,acc,ned,ms_per_image"


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def metrics_row(report: StepReport, metrics: dict | None, record_timing: bool) -> str:
    acc = ned = ms = None
    if metrics is not None:
        acc, ned = metrics["accuracy"], metrics["ned"]
        ms = metrics["ms_per_image"] if record_timing else None
    return ",".join([str(report.step), _num(report.ce_loss), _num(report.ctc_loss), _num(acc), _num(ned), _num(ms)])


def run_training(corpus, run: RunConfig, csv_path=None, checkpoint_path=None, resume=None,
                 progress=None) -> tuple[Trainer, dict | None]:
    """Train to ``run.train.max_steps``; returns the trainer and the last evaluation metrics.

    With ``resume`` the trainer state is loaded from that checkpoint and rows
    after its step are dropped from an existing CSV before appending.
    """
    tc = run.train
    model = GTCModel(corpus.alphabet, run)
    trainer = Trainer(model, corpus.split("train") if corpus.splits else corpus.samples, tc)
    eval_samples = corpus.split(tc.eval_split) if corpus.splits else corpus.samples
    rows = [CSV_HEADER]
    if resume is not None:
        restore(trainer, load_checkpoint(resume))
        if csv_path is not None and Path(csv_path).exists():
            old = Path(csv_path).read_text().splitlines()[1:]
            rows += [r for r in old if int(r.split(",")[0]) <= trainer.step]
    last = None
    while trainer.step < tc.max_steps:
        report = trainer.train_step()
        metrics = None
        if report.step % tc.eval_interval == 0 or report.step == tc.max_steps:
            metrics = evaluate(eval_samples, model)
            last = metrics
        rows.append(metrics_row(report, metrics, tc.record_timing))
        if progress is not None:
            progress(report, metrics)
        if checkpoint_path and tc.checkpoint_interval and report.step % tc.checkpoint_interval == 0:
            save_checkpoint(trainer, checkpoint_path)
    if csv_path is not None:
        Path(csv_path).write_text("\n".join(rows) + "\n")
    if checkpoint_path:
        save_checkpoint(trainer, checkpoint_path)
    return trainer, last
