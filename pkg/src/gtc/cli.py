"""``gtc`` command line: gen, train, eval, decode, bench.

Exit codes: 0 success, 2 usage error, 1 runtime error.  Data goes to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import MODES, RunConfig
from .dataset import SPLITS, CorpusSpec, generate_corpus, load_corpus
from .errors import GTCError
from .trainer import (
    bench_decode,
    evaluate,
    load_checkpoint,
    model_from_checkpoint,
    run_training,
)

log = logging.getLogger("gtc")


class UsageError(Exception):
    pass


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5) -> float image in [0, 1]."""
    blob = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise GTCError(f"{path}: truncated PGM header")
        fields.append(blob[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise GTCError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise GTCError(f"{path}: malformed PGM header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise GTCError(f"{path}: invalid PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = width * height * dtype.itemsize
    if len(blob) - pos < need:
        raise GTCError(f"{path}: PGM pixel data truncated ({len(blob) - pos} of {need} bytes)")
    pixels = np.frombuffer(blob, dtype=dtype, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image: np.ndarray) -> None:
    img = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def resize_to_height(image: np.ndarray, height: int) -> np.ndarray:
    """Bilinear resize keeping the aspect ratio."""
    h, w = image.shape
    if h == height:
        return image
    width = max(1, round(w * height / h))
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    rows = np.array([np.interp(xs, np.arange(w), r) for r in image])
    return np.array([np.interp(ys, np.arange(h), c) for c in rows.T]).T


def prepare_image(image: np.ndarray, height: int, invert: str = "auto") -> np.ndarray:
    """Resize to the encoder height; flip polarity so ink is bright like the training corpus."""
    if invert == "yes" or (invert == "auto" and float(np.median(image)) > 0.5):
        image = 1.0 - image
    return resize_to_height(image, height)


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GTC_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env, 0)
    except ValueError:
        raise UsageError(f"GTC_SEED must be an integer, got {env!r}") from None


def _base_config(args) -> RunConfig:
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise GTCError(f"cannot read config {args.config}: {exc.strerror}") from None
        return cfgmod.from_text(text)
    return RunConfig()


def _override(obj, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(obj, **changes) if changes else obj


def gen_config(args) -> RunConfig:
    run = _base_config(args)
    corpus = _override(
        run.corpus,
        alphabet=args.alphabet,
        count=args.count,
        min_len=args.min_len,
        max_len=args.max_len,
        noise=args.noise,
        jitter=args.jitter,
        seed=_seed(args),
    )
    return dataclasses.replace(run, corpus=corpus)


def train_config(args) -> RunConfig:
    run = _base_config(args)
    base = run.train
    if args.preset == "toy":
        base = dataclasses.replace(base, **cfgmod.TOY_TRAIN)
    train = _override(
        base,
        mode=args.mode,
        max_steps=args.steps,
        seed=_seed(args),
        lr=args.lr,
        batch_size=args.batch_size,
        eval_interval=args.eval_interval,
        checkpoint_interval=args.checkpoint_interval,
        ce_weight=args.ce_weight,
        ctc_weight=args.ctc_weight,
        grad_clip=args.grad_clip,
    )
    return dataclasses.replace(run, train=train)


def cmd_gen(args) -> int:
    run = gen_config(args)
    if args.dump_config:
        sys.stdout.write(cfgmod.to_text(run))
        return 0
    if not args.output:
        raise UsageError("gen: -o/--output is required")
    samples = generate_corpus(run.corpus, args.output)
    spec = run.corpus
    print(f"wrote {len(samples)} samples to {args.output} "
          f"(alphabet {spec.alphabet}, {spec.height}x{spec.canvas_width} px, seed {spec.seed})")
    return 0


def cmd_train(args) -> int:
    run = train_config(args)
    if args.dump_config:
        sys.stdout.write(cfgmod.to_text(run))
        return 0
    if not args.corpus:
        raise UsageError("train: --corpus is required")
    corpus = load_corpus(args.corpus)
    if args.resume:
        saved = load_checkpoint(args.resume).run
        if saved.train.mode != run.train.mode:
            raise GTCError(f"checkpoint was trained in mode {saved.train.mode!r}, not {run.train.mode!r}")
    checkpoint = args.checkpoint or f"{args.corpus}.{run.train.mode}.ckpt"

    def progress(report, metrics):
        if metrics is not None:
            log.info("step %d ce=%s ctc=%s acc=%.4f ned=%.4f", report.step, report.ce_loss,
                     report.ctc_loss, metrics["accuracy"], metrics["ned"])

    trainer, last = run_training(corpus, run, csv_path=args.csv, checkpoint_path=checkpoint,
                                 resume=args.resume, progress=progress)
    acc = "n/a" if last is None else f"{last['accuracy']:.4f}"
    print(f"trained {run.train.mode} to step {trainer.step}; {run.train.eval_split} accuracy {acc}; "
          f"checkpoint {checkpoint}")
    return 0


def _load_model(path):
    ckpt = load_checkpoint(path)
    return ckpt, model_from_checkpoint(ckpt)


def cmd_eval(args) -> int:
    _, model = _load_model(args.checkpoint)
    corpus = load_corpus(args.corpus)
    samples = corpus.split(args.split) if corpus.splits else corpus.samples
    m = evaluate(samples, model, args.head)
    print("split,head,accuracy,ned,ms_per_image,n")
    print(f"{args.split},{args.head or model.mode.eval_head},{m['accuracy']:.6f},{m['ned']:.6f},"
          f"{m['ms_per_image']:.4f},{m['n']}")
    return 0


def cmd_decode(args) -> int:
    ckpt, model = _load_model(args.checkpoint)
    height = model.run.encoder.height
    for path in args.images:
        image = prepare_image(read_pgm(path), height, args.invert)
        (pred,) = model.decode(image[None], args.head)
        print("".join(model.alphabet[i] for i in pred))
    return 0


def cmd_bench(args) -> int:
    _, model = _load_model(args.checkpoint)
    corpus = load_corpus(args.corpus)
    samples = corpus.split(args.split) if corpus.splits else corpus.samples
    r = bench_decode(model, samples, args.n, repeats=args.repeats)
    print("head,ms_per_image")
    print(f"ctc,{r['ctc_ms_per_image']:.4f}")
    print(f"attention,{r['attention_ms_per_image']:.4f}")
    print(f"ratio,{r['ratio']:.3f}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file with [section] headers")
    common.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    common.add_argument("--seed", type=int, help="seed for all randomness (default: $GTC_SEED or config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gtc", description="Guided CTC text recognition on synthetic strips.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    g.add_argument("-o", "--output")
    g.add_argument("--alphabet")
    g.add_argument("--count", type=int)
    g.add_argument("--min-len", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--jitter", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--corpus")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--eval-interval", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.add_argument("--ce-weight", type=float)
    t.add_argument("--ctc-weight", type=float)
    t.add_argument("--grad-clip", type=float, help="per-branch gradient norm cap (0 disables)")
    t.add_argument("--preset", choices=("default", "toy"), default="default",
                   help="toy: lr 3e-3, batch 32, clip 1.0 for the small synthetic corpus")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--csv", help="metrics CSV output path")
    t.add_argument("--checkpoint", help="checkpoint output path (default: <corpus>.<mode>.ckpt)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", default="train", choices=SPLITS + ("all",))
    e.add_argument("--head", choices=("ctc", "attention"))
    e.add_argument("-v", "--verbose", action="store_true")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decode", help="decode PGM images")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("images", nargs="+")
    d.add_argument("--head", choices=("ctc", "attention"), default="ctc")
    d.add_argument("--invert", choices=("auto", "yes", "no"), default="auto",
                   help="polarity: the model expects bright ink on a dark background")
    d.add_argument("-v", "--verbose", action="store_true")
    d.set_defaults(func=cmd_decode)

    b = sub.add_parser("bench", help="CTC vs attention decode latency")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--corpus", required=True)
    b.add_argument("--split", default="test", choices=SPLITS + ("all",))
    b.add_argument("--n", type=int, default=20)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("-v", "--verbose", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GTCError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
