import numpy as np
import pytest

from gtc import cli
from gtc.config import from_text
from gtc.dataset import load_corpus
from gtc.errors import GTCError


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    corpus = d / "toy.gtcc"
    assert cli.main(["gen", "-o", str(corpus), "--alphabet", "AB", "--count", "20", "--max-len", "2",
                     "--seed", "4"]) == 0
    ckpt = d / "toy.ckpt"
    assert cli.main(["train", "--corpus", str(corpus), "--steps", "3", "--batch-size", "4", "--eval-interval", "3",
                     "--checkpoint", str(ckpt), "--csv", str(d / "m.csv")]) == 0
    return d, corpus, ckpt


def test_gen_summary_and_determinism(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "-o", tmp_path / "a.gtcc", "--alphabet", "AB", "--count", 100, "--seed", 1)
    assert code == 0 and "wrote 100 samples" in out
    run(capsys, "gen", "-o", tmp_path / "b.gtcc", "--alphabet", "AB", "--count", 100, "--seed", 1)
    assert (tmp_path / "a.gtcc").read_bytes() == (tmp_path / "b.gtcc").read_bytes()
    assert len(load_corpus(tmp_path / "a.gtcc")) == 100


def test_gen_requires_output(capsys):
    code, _, err = run(capsys, "gen", "--count", 3)
    assert code == 2 and "--output" in err


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "train", "--bogus")
    assert code == 2 and "error:" in err


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GTC_SEED", "17")
    _, out, _ = run(capsys, "gen", "--dump-config")
    assert from_text(out).corpus.seed == 17
    _, out, _ = run(capsys, "gen", "--dump-config", "--seed", "5")
    assert from_text(out).corpus.seed == 5
    monkeypatch.setenv("GTC_SEED", "x")
    assert run(capsys, "gen", "--dump-config")[0] == 2


def test_dump_config_round_trips_through_config_file(tmp_path, capsys):
    _, out, _ = run(capsys, "train", "--dump-config", "--preset", "toy", "--mode", "ctc_only", "--steps", 7)
    cfg = from_text(out)
    assert cfg.train.mode == "ctc_only" and cfg.train.max_steps == 7 and cfg.train.grad_clip == 1.0
    (tmp_path / "run.cfg").write_text(out)
    _, again, _ = run(capsys, "train", "--dump-config", "--config", tmp_path / "run.cfg")
    assert again == out


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", tmp_path / "nope.cfg", "--dump-config")
    assert code == 1 and "cannot read config" in err


def test_train_writes_one_row_per_step(trained):
    d, _, ckpt = trained
    lines = (d / "m.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("step,")
    assert ckpt.exists()


def test_resume_rejects_other_mode(trained, capsys):
    _, corpus, ckpt = trained
    code, _, err = run(capsys, "train", "--corpus", corpus, "--mode", "ctc_only", "--resume", ckpt)
    assert code == 1 and "mode" in err


def test_eval_prints_csv(trained, capsys):
    _, corpus, ckpt = trained
    code, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--corpus", corpus, "--split", "val")
    header, row = out.strip().splitlines()
    assert code == 0 and header == "split,head,accuracy,ned,ms_per_image,n"
    fields = row.split(",")
    assert fields[:2] == ["val", "ctc"] and 0 <= float(fields[2]) <= 1


def test_corrupt_corpus_exits_1(trained, tmp_path, capsys):
    _, corpus, ckpt = trained
    bad = tmp_path / "bad.gtcc"
    bad.write_bytes(corpus.read_bytes()[:50])
    code, _, err = run(capsys, "eval", "--checkpoint", ckpt, "--corpus", bad)
    assert code == 1 and "byte offset" in err


def test_decode_pgm(trained, tmp_path, capsys):
    _, corpus, ckpt = trained
    sample = load_corpus(corpus).samples[0]
    cli.write_pgm(tmp_path / "dark_on_light.pgm", 1.0 - sample.image)
    cli.write_pgm(tmp_path / "blank.pgm", np.ones((32, 40)))
    code, out, _ = run(capsys, "decode", "--checkpoint", ckpt, tmp_path / "dark_on_light.pgm",
                       tmp_path / "blank.pgm")
    lines = out.split("\n")
    assert code == 0 and set(lines[0]) <= set("AB") and lines[1] == ""


def test_decode_truncated_pgm(trained, tmp_path, capsys):
    _, _, ckpt = trained
    (tmp_path / "t.pgm").write_bytes(b"P5\n10 10\n255\n123")
    code, _, err = run(capsys, "decode", "--checkpoint", ckpt, tmp_path / "t.pgm")
    assert code == 1 and "truncated" in err


def test_pgm_round_trip_and_header_comments(tmp_path):
    img = np.random.default_rng(0).random((5, 7))
    cli.write_pgm(tmp_path / "x.pgm", img)
    back = cli.read_pgm(tmp_path / "x.pgm")
    np.testing.assert_allclose(back, np.round(img * 255) / 255)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n# depth\n65535\n\xff\xff\x00\x00")
    np.testing.assert_array_equal(cli.read_pgm(tmp_path / "c.pgm"), [[1.0, 0.0]])
    (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(GTCError, match="P5"):
        cli.read_pgm(tmp_path / "p2.pgm")


def test_prepare_image_resizes_and_inverts():
    img = np.ones((64, 100))
    img[20:40, 10:30] = 0.0
    out = cli.prepare_image(img, 32, "auto")
    assert out.shape == (32, 50)
    assert np.median(out) < 0.5
    assert cli.prepare_image(img, 32, "no").shape == (32, 50)
    assert np.median(cli.prepare_image(img, 32, "no")) > 0.5


def test_bench_needs_guidance_head(tmp_path, capsys):
    corpus = tmp_path / "c.gtcc"
    cli.main(["gen", "-o", str(corpus), "--count", "10", "--alphabet", "AB", "--max-len", "2"])
    ckpt = tmp_path / "c.ckpt"
    cli.main(["train", "--corpus", str(corpus), "--mode", "ctc_only", "--steps", "1", "--batch-size", "2",
              "--checkpoint", str(ckpt)])
    capsys.readouterr()
    code, _, err = run(capsys, "bench", "--checkpoint", ckpt, "--corpus", corpus, "--split", "all")
    assert code == 1 and "no guidance head" in err


def test_bench_reports_both_heads(trained, capsys):
    _, corpus, ckpt = trained
    code, out, _ = run(capsys, "bench", "--checkpoint", ckpt, "--corpus", corpus, "--split", "all", "--n", 3,
                       "--repeats", 1)
    rows = dict(line.split(",") for line in out.strip().splitlines()[1:])
    assert code == 0 and set(rows) == {"ctc", "attention", "ratio"}
    assert float(rows["ratio"]) == pytest.approx(float(rows["attention"]) / float(rows["ctc"]), rel=2e-3)
