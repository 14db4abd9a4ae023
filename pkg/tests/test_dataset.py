import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtc.ctc import min_path_length
from gtc.dataset import (
    GLYPH_H,
    CorpusSpec,
    SplitMix64,
    assign_splits,
    decode_corpus,
    encode_corpus,
    generate_corpus,
    glyph_bitmap,
    load_corpus,
    make_sample,
    manifest_path,
    render,
)
from gtc.encoder import EncoderConfig, sequence_length
from gtc.errors import ContractError, CorpusFormatError


def test_splitmix_reference_outputs():
    # published SplitMix64 outputs for seed 1234567
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(3)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
    ]


def test_random_block_matches_scalar_draws():
    a, b = SplitMix64(99), SplitMix64(99)
    block = a.random_block(50)
    np.testing.assert_array_equal(block, [b.random() for _ in range(50)])
    assert a.state == b.state
    assert ((block >= 0) & (block < 1)).all()


def test_splitmix_state_round_trip():
    rng = SplitMix64(5)
    rng.next_u64()
    clone = SplitMix64(0)
    clone.state = rng.state
    assert [rng.randint(0, 9) for _ in range(20)] == [clone.randint(0, 9) for _ in range(20)]


def test_render_single_glyph_footprint():
    spec = CorpusSpec(alphabet="AB", max_len=1)
    s = render("A", spec, SplitMix64(0))
    glyph = np.kron(glyph_bitmap("A"), np.ones((spec.scale, spec.scale)))
    top = (spec.height - GLYPH_H * spec.scale) // 2
    expected = np.zeros((spec.height, spec.canvas_width))
    expected[top:top + glyph.shape[0], spec.margin:spec.margin + glyph.shape[1]] = glyph
    np.testing.assert_array_equal(s.image, expected)
    assert s.label == (0,)


def test_render_is_deterministic():
    spec = CorpusSpec(alphabet="AB", noise=0.3, jitter=2, spacing_min=1, spacing_max=4)
    a = render("ABA", spec, SplitMix64(42), 3)
    b = render("ABA", spec, SplitMix64(42), 3)
    assert a.same_as(b)
    assert a.image.min() >= 0 and a.image.max() <= 1


def test_render_errors():
    spec = CorpusSpec(alphabet="AB", max_len=2)
    with pytest.raises(ContractError):
        render("ABA", spec, SplitMix64(0))
    with pytest.raises(ContractError):
        render("AC", spec, SplitMix64(0))
    with pytest.raises(ContractError):
        CorpusSpec(alphabet="AB", max_len=20)
    with pytest.raises(ContractError):
        CorpusSpec(min_len=0)
    with pytest.raises(ContractError):
        CorpusSpec(alphabet="a")


def test_generate_counts_and_split(tmp_path):
    path = tmp_path / "toy.gtcc"
    samples = generate_corpus(CorpusSpec(alphabet="AB", count=100, seed=7), path)
    corpus = load_corpus(path)
    assert len(samples) == len(corpus) == 100
    assert [len(corpus.split(n)) for n in ("train", "val", "test")] == [80, 10, 10]
    assert len(corpus.split("all")) == 100
    ids = sorted(s.id for n in ("train", "val", "test") for s in corpus.split(n))
    assert ids == list(range(100))


def test_generate_is_byte_identical(tmp_path):
    spec = CorpusSpec(alphabet="AB", count=30, seed=3, noise=0.1, jitter=1)
    generate_corpus(spec, tmp_path / "a.gtcc")
    generate_corpus(spec, tmp_path / "b.gtcc")
    assert (tmp_path / "a.gtcc").read_bytes() == (tmp_path / "b.gtcc").read_bytes()
    assert manifest_path(tmp_path / "a.gtcc").read_text() == manifest_path(tmp_path / "b.gtcc").read_text()


def test_fixed_length_labels(tmp_path):
    samples = generate_corpus(CorpusSpec(alphabet="AB", count=60, min_len=2, max_len=2, seed=1),
                              tmp_path / "c.gtcc")
    labels = {"".join("AB"[i] for i in s.label) for s in samples}
    assert labels == {"AA", "AB", "BA", "BB"}


def test_round_trip(tmp_path):
    spec = CorpusSpec(alphabet="XYZ", count=25, max_len=4, noise=0.2, jitter=1, spacing_max=3, seed=11)
    path = tmp_path / "r.gtcc"
    written = generate_corpus(spec, path)
    corpus = load_corpus(path)
    assert corpus.alphabet == "XYZ"
    for a, b in zip(written, corpus):
        assert a.same_as(b)


def test_empty_corpus(tmp_path):
    path = tmp_path / "e.gtcc"
    generate_corpus(CorpusSpec(count=0), path)
    corpus = load_corpus(path)
    assert list(corpus) == []
    assert corpus.split("train") == []


def test_truncation_reports_offset(tmp_path):
    blob = encode_corpus("AB", [make_sample(CorpusSpec(), i) for i in range(3)])
    for cut in (3, 9, len(blob) - 1, len(blob) - 500):
        with pytest.raises(CorpusFormatError, match="byte offset") as info:
            decode_corpus(blob[:cut])
        assert info.value.offset is not None and info.value.offset <= cut


def test_bad_header():
    with pytest.raises(CorpusFormatError, match="magic"):
        decode_corpus(b"NOPE" + bytes(10))
    with pytest.raises(CorpusFormatError, match="version"):
        decode_corpus(b"GTCC" + (9).to_bytes(2, "little") + bytes(4))


def test_bad_manifest(tmp_path):
    path = tmp_path / "m.gtcc"
    generate_corpus(CorpusSpec(count=3), path)
    manifest_path(path).write_text("0\ttrain\n1\tholdout\n")
    with pytest.raises(CorpusFormatError, match="manifest line 2"):
        load_corpus(path)


def test_missing_manifest_has_no_splits(tmp_path):
    path = tmp_path / "n.gtcc"
    generate_corpus(CorpusSpec(count=3), path)
    manifest_path(path).unlink()
    corpus = load_corpus(path)
    assert corpus.splits is None
    with pytest.raises(ContractError):
        corpus.split("train")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4))
def test_every_label_is_ctc_feasible(seed, max_len):
    spec = CorpusSpec(alphabet="AB", count=20, max_len=max_len, seed=seed)
    T = sequence_length(EncoderConfig(), spec.canvas_width)
    for i in range(spec.count):
        s = make_sample(spec, i)
        assert min_path_length(s.label) <= T
        assert 1 <= len(s.label) <= max_len


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 500), st.integers(0, 2**32))
def test_split_proportions(count, seed):
    splits = assign_splits(count, seed)
    assert len(splits) == count
    assert splits.count("train") == round(0.8 * count)
    assert splits.count("val") == round(0.1 * count)
