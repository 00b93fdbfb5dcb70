import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import tiny_model
from skiplab.evaluation import (
    EvalItem, EvalReport, aggregate, evaluate, load_tasks, mc2_score, prompt_tokens, score_item,
    sequence_loglikelihood,
)
from skiplab.model import SEP, model_forward
from skiplab.plan import all_active, tail_skip_plan
from skiplab.tensor import log_softmax_rows
from skiplab.trainer import TrainConfig, train


@pytest.fixture(scope="module")
def byte_model():
    return tiny_model(3, vocab_size=258, max_seq_len=40)


@pytest.fixture(scope="module")
def memorizer():
    m = tiny_model(0, vocab_size=258, d_model=32, n_layers=2, n_heads=4, d_ff=64, max_seq_len=32)
    return train(m, b"abc" * 40, TrainConfig(learning_rate=3e-3, steps=150, context_length=24)).model


def test_single_token_continuation(byte_model):
    ll, n = sequence_loglikelihood(byte_model, b"hi", b"!")
    expected = log_softmax_rows(model_forward([SEP, *b"hi"], byte_model).astype(np.float64))[-1, ord("!")]
    assert n == 1
    assert ll == pytest.approx(expected, abs=1e-9)


@given(st.binary(min_size=0, max_size=10), st.binary(min_size=2, max_size=10), st.data())
def test_chain_rule_additivity(ctx, cont, data):
    model = tiny_model(3, vocab_size=258, max_seq_len=40)
    cut = data.draw(st.integers(1, len(cont) - 1))
    whole, _ = sequence_loglikelihood(model, ctx, cont)
    head, _ = sequence_loglikelihood(model, ctx, cont[:cut])
    tail, _ = sequence_loglikelihood(model, ctx + cont[:cut], cont[cut:])
    assert whole == pytest.approx(head + tail, abs=1e-5)
    assert whole <= 0


def test_memorized_pattern_is_preferred(memorizer):
    good, _ = sequence_loglikelihood(memorizer, b"abc", b"abc")
    bad, _ = sequence_loglikelihood(memorizer, b"abc", b"xyz")
    assert good > bad


def test_length_normalization_equalizes_per_token(memorizer):
    short = b"abc"
    item = EvalItem(b"abc", (short, short * 3), (0,))
    s = score_item(memorizer, item)
    assert s.lengths == (3, 9)
    # the memorized continuation is near-certain, so both choices average ~0 per token
    assert s.normalized[0] == pytest.approx(s.normalized[1], abs=1e-2)


def test_length_normalization_is_exact_for_constant_per_token_loss():
    # a model with zero output weights predicts uniformly: every token costs ln(258)
    m = tiny_model(2, vocab_size=258, max_seq_len=40)
    m = m.replace_tensors(w_out=np.zeros_like(m.w_out))
    s = score_item(m, EvalItem(b"q", (b"ab", b"abababab"), (1,)))
    assert s.normalized[0] == pytest.approx(s.normalized[1], abs=1e-5)
    assert s.raw[1] < s.raw[0]
    assert s.pred_raw == 0
    assert s.pred_norm == 0  # exact tie goes to the lower index


def test_ties_and_degenerate_items(byte_model):
    assert score_item(byte_model, EvalItem(b"x", (b"same", b"same"), (1,))).pred_raw == 0
    single = score_item(byte_model, EvalItem(b"x", (b"only",), (0,)))
    assert single.pred_raw == single.pred_norm == 0
    assert single.correct


def test_too_long_is_rejected(byte_model):
    with pytest.raises(ValueError):
        sequence_loglikelihood(byte_model, b"x" * 38, b"yy")
    with pytest.raises(ValueError):
        sequence_loglikelihood(byte_model, b"x", b"")


def test_prompt_layout():
    assert prompt_tokens(b"q", [(b"a", b"b"), (b"c", b"d")]) == [SEP, 97, 98, SEP, 99, 100, SEP, 113]
    assert prompt_tokens(b"") == [SEP]


@pytest.mark.parametrize("raw, true_set, false_set, expected", [
    ([-2.0, -2.0, -2.0, -2.0], [0, 1], [2, 3], 0.5),
    ([math.log(0.2), math.log(0.3), math.log(0.5)], [0, 1], [2], 0.5),
])
def test_mc2_examples(raw, true_set, false_set, expected):
    assert mc2_score(raw, true_set, false_set) == pytest.approx(expected)


def test_mc2_saturates_without_overflow():
    assert mc2_score([-1000.0, -1050.0, -1050.0], [0], [1, 2]) > 1 - 1e-6
    with pytest.raises(ValueError):
        mc2_score([0.0, 0.0], [0, 1], [])


@given(st.lists(st.floats(-200, 0), min_size=2, max_size=8), st.data())
def test_mc2_matches_direct_formula(raw, data):
    n = len(raw)
    true = data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n - 1))
    false = [i for i in range(n) if i not in true]
    shift = max(raw)
    t = math.fsum(math.exp(raw[i] - shift) for i in true)
    f = math.fsum(math.exp(raw[i] - shift) for i in false)
    score = mc2_score(raw, sorted(true), false)
    assert score == pytest.approx(t / (t + f), rel=1e-9)
    assert 0 <= score <= 1


def test_aggregate_examples():
    assert round(aggregate({"a": 47.7, "b": 69.3, "c": 39.6}), 1) == 52.2
    assert round(aggregate({"a": 35.2, "b": 46.8, "c": 46.2}), 1) == 42.7
    assert aggregate({"a": 12.5}) == 12.5
    assert aggregate({"a": 1.0, "b": 3.0, "mmlu": 100.0}, ["a", "b"]) == 2.0
    with pytest.raises(ValueError):
        aggregate({"a": 1.0}, [])


def test_item_validation():
    with pytest.raises(ValueError):
        EvalItem(b"x", (), (0,))
    with pytest.raises(ValueError):
        EvalItem(b"x", (b"a", b"b"), (2,))
    with pytest.raises(ValueError):
        EvalItem(b"x", (b"a", b"b", b"c"), (0,), "mc2", (1,))
    with pytest.raises(ValueError):
        EvalItem(b"x", (b"a", b"b"), (0, 1))


def _write_tasks(path):
    recs = [
        {"task": "pick", "context": "ab", "choices": ["c", "zz"], "gold": 0,
         "fewshot": [["ab", "c"], ["x", "y"]], "num_fewshot": 1},
        {"task": "pick", "context": "a", "choices": ["b", "q"], "gold": 1},
        {"task": "truth", "type": "mc2", "context": "ab", "choices": ["c", "d", "e"],
         "true_set": [0], "false_set": [1, 2]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    return path


def test_task_files_and_reports(tmp_path, byte_model):
    items = load_tasks(_write_tasks(tmp_path / "t.jsonl"))
    assert items[0].fewshot == ((b"ab", b"c"),)
    assert items[2].kind == "mc2"
    scores = evaluate(byte_model, items)
    assert list(scores) == ["pick", "truth"]
    assert scores["truth"].score == scores["truth"].mc2
    assert 0 < scores["truth"].mc2 < 1
    assert scores["pick"].score == scores["pick"].acc_norm
    report = EvalReport(["pick", "truth"], excluded=["mmlu"])
    report.add("m-100%", scores)
    p = report.percent("m-100%")
    assert p["Average"] == pytest.approx((p["pick"] + p["truth"]) / 2)
    assert "Excluded from the average: mmlu" in report.to_table()
    assert report.to_dict()["rows"]["m-100%"]["scores"]["Average"] == round(p["Average"], 1)


def test_bad_task_line(tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"context": "a"}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        load_tasks(tmp_path / "bad.jsonl")


def test_determinism_across_workers_and_plans(tmp_path, byte_model):
    items = load_tasks(_write_tasks(tmp_path / "t.jsonl"))
    bare = evaluate(byte_model, items)
    assert evaluate(byte_model, items, all_active(3)) == bare
    assert evaluate(byte_model, items, None, workers=4) == bare
    skipped = tail_skip_plan(3, 1)
    assert evaluate(byte_model, items, skipped, 1) == evaluate(byte_model, items, skipped, 3)
