"""Synthetic glyph-strip corpus: rendering, binary container, split manifest.

Layout decisions (label lengths, symbols, spacing, jitter) and noise all come
from SplitMix64, an integer-only generator: state advances by 0x9E3779B97F4A7C15
and outputs are finalized with multipliers 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB (shifts 30, 27, 31).  Each sample draws from its own
generator seeded by ``mix(seed, id)`` so samples can be rendered
independently.

Corpus file (little-endian)::

    b"GTCC" | version u16 | alphabet: u16 byte length + UTF-8 |
    record* where record = label length u16 | label indices u16* |
                            height u16 | width u16 | pixels u8[height*width]

Records run to end of file; the record position is the sample id.  The split
manifest is a text file of ``id<TAB>split`` lines.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctc import min_path_length
from .errors import ContractError, CorpusFormatError

MAGIC = b"GTCC"
VERSION = 1
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
SPLITS = ("train", "val", "test")

# 5x7 bitmaps, one string per row, '#' = ink.
FONT_5X7 = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
}
GLYPH_H, GLYPH_W = 7, 5


def glyph_bitmap(ch: str) -> np.ndarray:
    try:
        rows = FONT_5X7[ch]
    except KeyError:
        raise ContractError(f"no glyph for {ch!r}") from None
    return np.array([[c == "#" for c in row] for row in rows], dtype=np.float64)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """64-bit SplitMix generator; ``state`` is a plain int and fully describes it."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] (modulo reduction)."""
        return lo + self.next_u64() % (hi - lo + 1)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def random_block(self, n: int) -> np.ndarray:
        """The next ``n`` outputs of :meth:`random`, vectorized."""
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle in place; returns ``items``."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]
        return items


def sample_seed(seed: int, sample_id: int) -> int:
    return _mix((seed ^ _mix(sample_id + 1)) & MASK64)


@dataclass(frozen=True)
class CorpusSpec:
    alphabet: str = "AB"
    count: int = 100
    min_len: int = 1
    max_len: int = 3
    noise: float = 0.0
    jitter: int = 0
    spacing_min: int = 2
    spacing_max: int = 2
    seed: int = 0
    height: int = 32
    scale: int = 3
    width: int = 0
    width_cap: int = 128
    margin: int = 2

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ContractError(f"need 1 <= min_len <= max_len, got {self.min_len}, {self.max_len}")
        if self.count < 0:
            raise ContractError("count must be non-negative")
        if self.spacing_min < 0 or self.spacing_max < self.spacing_min:
            raise ContractError("invalid spacing range")
        for ch in self.alphabet:
            glyph_bitmap(ch)
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ContractError(f"alphabet must be non-empty and distinct: {self.alphabet!r}")
        if (self.height - GLYPH_H * self.scale) // 2 < self.jitter or self.jitter < 0:
            raise ContractError("glyph height plus jitter exceeds image height")
        if self.canvas_width > self.width_cap:
            raise ContractError(
                f"max_len {self.max_len} needs {self.required_width} px, above width cap {self.width_cap}"
            )

    @property
    def glyph_width(self) -> int:
        return GLYPH_W * self.scale

    @property
    def required_width(self) -> int:
        n = self.max_len
        return 2 * self.margin + n * self.glyph_width + (n - 1) * self.spacing_max

    @property
    def canvas_width(self) -> int:
        if self.width:
            return self.width
        return -(-self.required_width // 4) * 4


@dataclass(eq=False)
class Sample:
    image: np.ndarray
    label: tuple[int, ...]
    id: int = 0

    def same_as(self, other: "Sample") -> bool:
        return (
            self.id == other.id
            and self.label == other.label
            and self.image.shape == other.image.shape
            and np.array_equal(self.image, other.image)
        )


def quantize(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def render(text: str, spec: CorpusSpec, rng: SplitMix64, sample_id: int = 0) -> Sample:
    """Draw ``text`` left to right as scaled glyphs with jitter, spacing and noise."""
    label = tuple(spec.alphabet.index(ch) if ch in spec.alphabet else -1 for ch in text)
    if not text or min(label) < 0:
        raise ContractError(f"label {text!r} is empty or not over alphabet {spec.alphabet!r}")
    H, W, s = spec.height, spec.canvas_width, spec.scale
    gh, gw = GLYPH_H * s, GLYPH_W * s
    spacings = [rng.randint(spec.spacing_min, spec.spacing_max) for _ in text[1:]]
    needed = 2 * spec.margin + len(text) * gw + sum(spacings)
    if needed > W:
        raise ContractError(f"label {text!r} needs {needed} px, canvas is {W}")
    image = np.zeros((H, W))
    x = spec.margin
    top0 = (H - gh) // 2
    for k, ch in enumerate(text):
        dy = rng.randint(-spec.jitter, spec.jitter) if spec.jitter else 0
        glyph = np.kron(glyph_bitmap(ch), np.ones((s, s)))
        image[top0 + dy:top0 + dy + gh, x:x + gw] = glyph
        x += gw + (spacings[k] if k < len(spacings) else 0)
    if spec.noise > 0:
        image = image + spec.noise * rng.random_block(H * W).reshape(H, W)
    return Sample(quantize(image), label, sample_id)


def draw_label(spec: CorpusSpec, rng: SplitMix64) -> str:
    n = rng.randint(spec.min_len, spec.max_len)
    return "".join(spec.alphabet[rng.randint(0, len(spec.alphabet) - 1)] for _ in range(n))


def make_sample(spec: CorpusSpec, sample_id: int) -> Sample:
    rng = SplitMix64(sample_seed(spec.seed, sample_id))
    return render(draw_label(spec, rng), spec, rng, sample_id)


def assign_splits(count: int, seed: int) -> list[str]:
    """80/10/10 split by ranking ids on a seeded hash."""
    order = sorted(range(count), key=lambda i: (_mix((seed * 0x100000001B3 + i) & MASK64), i))
    n_train = round(0.8 * count)
    n_val = round(0.1 * count)
    splits = [""] * count
    for rank, i in enumerate(order):
        splits[i] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return splits


def manifest_path(path) -> Path:
    return Path(f"{os.fspath(path)}.manifest")


def encode_corpus(alphabet: str, samples) -> bytes:
    alpha = alphabet.encode("utf-8")
    parts = [MAGIC, struct.pack("<HH", VERSION, len(alpha)), alpha]
    for smp in samples:
        H, W = smp.image.shape
        parts.append(struct.pack(f"<H{len(smp.label)}H", len(smp.label), *smp.label))
        parts.append(struct.pack("<HH", H, W))
        parts.append(np.round(smp.image * 255.0).astype(np.uint8).tobytes())
    return b"".join(parts)


def generate_corpus(spec: CorpusSpec, path, stride_check: int = 4) -> list[Sample]:
    """Render ``spec.count`` samples, write the corpus and its manifest, return the samples.

    Every label is checked to be CTC-feasible at T = width / ``stride_check``.
    """
    samples = [make_sample(spec, i) for i in range(spec.count)]
    T = -(-spec.canvas_width // stride_check)
    for smp in samples:
        if min_path_length(smp.label) > T:
            raise ContractError(f"sample {smp.id} label is infeasible for CTC at T={T}")
    Path(path).write_bytes(encode_corpus(spec.alphabet, samples))
    splits = assign_splits(spec.count, spec.seed)
    manifest_path(path).write_text("".join(f"{i}\t{s}\n" for i, s in enumerate(splits)))
    return samples


@dataclass
class Corpus:
    alphabet: str
    samples: list[Sample]
    splits: dict[int, str] | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def split(self, name: str) -> list[Sample]:
        if name == "all":
            return list(self.samples)
        if name not in SPLITS:
            raise ContractError(f"unknown split {name!r}")
        if self.splits is None:
            raise ContractError("corpus has no split manifest")
        return [s for s in self.samples if self.splits.get(s.id) == name]


def decode_corpus(blob: bytes) -> tuple[str, list[Sample]]:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CorpusFormatError("bad magic, not a GTCC corpus", 0)
    version, alen = struct.unpack_from("<HH", blob, 4)
    if version != VERSION:
        raise CorpusFormatError(f"unsupported corpus version {version}", 4)
    off = 8
    if off + alen > len(blob):
        raise CorpusFormatError("truncated alphabet", off)
    try:
        alphabet = blob[off:off + alen].decode("utf-8")
    except UnicodeDecodeError:
        raise CorpusFormatError("alphabet is not valid UTF-8", off) from None
    off += alen
    samples = []
    while off < len(blob):
        start = off
        if off + 2 > len(blob):
            raise CorpusFormatError("truncated record header", start)
        (n,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + 2 * n + 4 > len(blob):
            raise CorpusFormatError("truncated record label", start)
        label = struct.unpack_from(f"<{n}H", blob, off)
        off += 2 * n
        H, W = struct.unpack_from("<HH", blob, off)
        off += 4
        if off + H * W > len(blob):
            raise CorpusFormatError("truncated record pixels", start)
        if any(i >= len(alphabet) for i in label):
            raise CorpusFormatError("label index outside alphabet", start)
        pixels = np.frombuffer(blob, dtype=np.uint8, count=H * W, offset=off)
        off += H * W
        samples.append(Sample(pixels.reshape(H, W).astype(np.float64) / 255.0, tuple(label), len(samples)))
    return alphabet, samples


def read_manifest(path) -> dict[int, str]:
    splits = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in SPLITS or not parts[0].isdigit():
            raise CorpusFormatError(f"bad manifest line {lineno}: {line!r}")
        splits[int(parts[0])] = parts[1]
    return splits


def load_corpus(path) -> Corpus:
    """Read a corpus file (and its manifest when present)."""
    alphabet, samples = decode_corpus(Path(path).read_bytes())
    mpath = manifest_path(path)
    splits = read_manifest(mpath) if mpath.exists() else None
    return Corpus(alphabet, samples, splits)
