import json

import pytest

from skiplab.checkpoint import load
from skiplab.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def manifest(path):
    return json.loads(path.read_text())


def test_plan_from_fraction(capsys):
    assert run("plan", "--layers-total", 32, "--keep-fraction", 0.9, "--mode", "full") == 0
    assert "skipped: [29, 30, 31]" in capsys.readouterr().out


def test_plan_keep_last_and_save(tmp_path, capsys):
    out = tmp_path / "p.txt"
    assert run("plan", "--layers-total", 32, "--keep-fraction", 0.9, "--keep-last", "--mode", "attn", "--out", out) == 0
    assert "skipped: [28, 29, 30]" in capsys.readouterr().out
    assert "28\tSKIP_ATTENTION" in out.read_text()
    m = manifest(tmp_path / "p.manifest.json")
    assert m["skip_spec"]["keep_last"] is True
    assert m["outputs"] == [str(out), str(tmp_path / "p.manifest.json")]


@pytest.mark.parametrize("argv", [
    ["plan", "--layers-total", 8, "--first", "--keep-last"],
    ["plan", "--layers-total", 8, "--layers", "1,2", "--keep-fraction", 0.5],
    ["plan", "--layers-total", 8, "--keep-fraction", 1.5],
    ["plan"],
    ["plan", "--layers-total", 8, "--bogus"],
    ["nonsense"],
    ["bench", "--out", "x", "--seq-len", 70],
])
def test_usage_errors_exit_one(argv, capsys):
    assert run(*argv) == 1
    assert capsys.readouterr().err


def test_missing_file_is_reported(tmp_path, capsys):
    assert run("eval", "--model", tmp_path / "nope.skpf", "--out", tmp_path / "e") == 1
    assert "nope.skpf" in capsys.readouterr().err


def test_runtime_failure_removes_partial_outputs(tmp_path, capsys):
    assert run("gen", "--out", tmp_path / "m.skpf", "--layers", 2, "--seed", 1) == 0
    # the tiny corpus is fine, but a context longer than max_seq_len fails after argument parsing
    corpus = tmp_path / "c.txt"
    corpus.write_bytes(b"abcabcabc")
    code = run("train", "--model", tmp_path / "m.skpf", "--corpus", corpus, "--context", 500, "--out", tmp_path / "t.skpf")
    assert code == 2
    assert not (tmp_path / "t.skpf").exists()
    assert not (tmp_path / "t.skpf.manifest.json").exists()


def test_diagnose(capsys, tmp_path):
    assert run("diagnose", "--W", 131072000, "--L", 2, "--eps", 0.01, "--out", tmp_path / "d.json") == 0
    out = capsys.readouterr().out
    assert "65,536,000" in out and "2,048,000,000" in out
    assert json.loads((tmp_path / "d.json").read_text())["m_lb"] == 2_048_000_000


def test_gen_train_trace_eval_pipeline(tmp_path, capsys):
    ckpt = tmp_path / "m.skpf"
    assert run("gen", "--out", ckpt, "--layers", 2, "--seed", 4, "--max-seq-len", 64) == 0
    corpus = tmp_path / "c.txt"
    corpus.write_bytes(b"the cat sat on the mat. " * 20)
    assert run("train", "--model", ckpt, "--corpus", corpus, "--steps", 3, "--context", 16, "--out", tmp_path / "t.skpf") == 0
    assert load(tmp_path / "t.skpf").metadata["trained_steps"] == 3
    assert (tmp_path / "t.loss.tsv").read_text().startswith("step\tloss")
    assert run("trace", "--model", tmp_path / "t.skpf", "--corpus", corpus, "--context", 16, "--out", tmp_path / "tr") == 0
    assert (tmp_path / "tr.tsv").exists()
    assert run("plan", "--model", tmp_path / "t.skpf", "--from-trace", tmp_path / "tr.tsv", "--keep-fraction", 0.5) == 0
    assert "skipped: [" in capsys.readouterr().out


def test_eval_is_byte_reproducible(tmp_path):
    files = []
    for name, workers in (("a", 1), ("b", 3)):
        assert run("eval", "--out", tmp_path / name / "e", "--keep-fraction", 0.75, "--workers", workers) == 0
        files.append({p: (tmp_path / name / p).read_bytes() for p in ("e.json", "e.md")})
    assert files[0] == files[1]
    m = manifest(tmp_path / "a" / "e.manifest.json")
    assert m["subcommand"] == "eval" and m["skip_spec"]["skipped"] == [6, 7]


def test_bench_predictions_reproducible(tmp_path):
    results = []
    for name in ("a", "b"):
        assert run("bench", "--out", tmp_path / name / "b", "--count", 5, "--keep-fraction", 0.66, "--seed", 9) == 0
        results.append(json.loads((tmp_path / name / "b.json").read_text()))
    assert results[0]["variant"]["predictions"] == results[1]["variant"]["predictions"]
    assert results[0]["baseline"]["count"] == 5
    assert "forward passes only" in results[0]["note"]


def test_sweep_on_the_shipped_fixture(tmp_path):
    assert run("sweep", "--out-dir", tmp_path, "--count", 3) == 0
    table = (tmp_path / "sweep.md").read_text()
    for label in ("toy-66%", "toy-75%", "toy-90%", "toy-100%"):
        assert f"| {label} |" in table
    assert "| Model | cloze | ending | truth | Average | Time(s)x10^2 | (%) |" in table
    data = json.loads((tmp_path / "sweep.json").read_text())
    assert len(data["grid"]) == 6
    assert manifest(tmp_path / "manifest.json")["outputs"][:2] == [str(tmp_path / "sweep.md"), str(tmp_path / "sweep.json")]
