import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlqa.corpus import CLS, SEP, QAExample, build_vocab
from xlqa.encoder import EncoderConfig, init_params
from xlqa.errors import InputError
from xlqa.qatask import (NO, NULL_TYPE, SPAN, YES, QAModel, QAPrediction, TaskTuneConfig, build_model_input,
                         choose_passage, decode_minimal, example_loss, predict, read_predictions,
                         score_passages, task_tune, write_predictions)
from xlqa.synth import toy_qa, toy_world, world_lexicon


@pytest.fixture(scope="module")
def toy():
    world = toy_world(0, n_entities=4, n_relations=3, n_values=5)
    examples = toy_qa(6, seed=4, world=world, n_passages=2, null_rate=0.2)
    vocab = build_vocab([], 60, extra_texts=[e.context for e in examples] + [e.question for e in examples])
    cfg = EncoderConfig(vocab_size=len(vocab), hidden_dim=16, num_layers=1, num_heads=2, ffn_dim=32,
                        max_seq_len=32, seed=0)
    return examples, vocab, init_params(cfg)


def test_input_layout():
    vocab = build_vocab([], 0, extra_texts=["x"])
    inp = build_model_input(vocab, "ab ?", "cd e", 20, passage_offset=100)
    assert inp.ids[0] == CLS and inp.ids[-1] == SEP
    assert inp.ids[inp.passage_start - 1] == SEP
    assert inp.offsets == [(100, 101), (101, 102), (103, 104)]
    assert len(inp.ids) == 1 + 3 + 1 + 3 + 1


def test_input_truncates_passage_and_rejects_long_question():
    vocab = build_vocab([], 0, extra_texts=["x"])
    inp = build_model_input(vocab, "a", "bcdefgh", 7)
    assert len(inp.ids) == 7 and len(inp.offsets) == 3
    with pytest.raises(InputError):
        build_model_input(vocab, "abcdef", "x", 8)


def _brute(start, end, max_span, offsets):
    best = None
    for s in range(len(start)):
        for e in range(s, min(len(start), s + max_span + 1)):
            key = (start[s] + end[e], -s, -(e - s))
            if best is None or key > best[0]:
                best = (key, (offsets[s][0], offsets[e][1]))
    return best[1]


@settings(max_examples=150)
@given(st.integers(1, 10), st.integers(0, 4), st.data())
def test_span_decoding_matches_bruteforce(n, max_span, data):
    start = np.array(data.draw(st.lists(st.integers(-2, 2), min_size=n, max_size=n)), dtype=float)
    end = np.array(data.draw(st.lists(st.integers(-2, 2), min_size=n, max_size=n)), dtype=float)
    offsets = [(2 * i, 2 * i + 2) for i in range(n)]
    span, _ = decode_minimal([1.0, 0.0, 0.0, 0.0], start, end, offsets, max_span)
    assert span == _brute(start, end, max_span, offsets)


def test_span_ties_earliest_then_shortest():
    offsets = [(0, 1), (1, 2), (2, 3)]
    span, _ = decode_minimal([1, 0, 0, 0], np.zeros(3), np.zeros(3), offsets, 5)
    assert span == (0, 1)


def test_answer_types():
    offs = [(0, 1)]
    z = np.zeros(1)
    assert decode_minimal([0, 1, 0, 0], z, z, offs, 3)[0] == "YES"
    assert decode_minimal([0, 0, 1, 0], z, z, offs, 3)[0] == "NO"
    assert decode_minimal([0, 0, 0, 1], z, z, offs, 3)[0] is None
    assert decode_minimal([1, 0, 0, 0], z[:0], z[:0], [], 3)[0] is None
    assert (SPAN, YES, NO, NULL_TYPE) == (0, 1, 2, 3)


def test_span_snaps_to_character_boundaries():
    context = "aé".encode("utf-8")  # é is two bytes: 1..3
    span, _ = decode_minimal([1, 0, 0, 0], np.array([0.0, 5.0]), np.array([0.0, 5.0]), [(0, 1), (2, 3)], 3,
                             context)
    assert span == (1, 3)


def test_choose_passage():
    assert choose_passage([0.1, 0.3, 0.3], 0.2) == (1, 0.3)
    assert choose_passage([0.1, 0.3], 0.3) == (1, 0.3)
    assert choose_passage([0.1, 0.3], 0.4) == (None, 0.4)
    assert choose_passage([], -1.0) == (None, -1.0)


@settings(max_examples=100)
@given(st.lists(st.integers(-3, 3).map(float), max_size=6), st.integers(-3, 3).map(float))
def test_choose_passage_oracle(scores, null):
    k, _ = choose_passage(scores, null)
    if not scores or null > max(scores):
        assert k is None
    else:
        assert k == scores.index(max(scores))


def test_score_passages_shape(toy):
    examples, vocab, enc = toy
    model = QAModel.from_encoder(enc, vocab, seed=1)
    scores, null = score_passages(model, examples[0])
    assert len(scores) == len(examples[0].passages) and np.isfinite(null)


def test_prediction_consistency(toy):
    examples, vocab, enc = toy
    for p in predict(QAModel.from_encoder(enc, vocab, seed=1), examples):
        if p.passage_pred is None:
            assert p.minimal_pred is None


def test_overfit_and_determinism(toy):
    examples, vocab, enc = toy
    model = QAModel.from_encoder(enc, vocab, seed=1)
    cfg = TaskTuneConfig(learning_rate=0.01, epochs=40, batch_size=3, seed=2)
    tuned, trace = task_tune(model, examples, cfg)
    assert trace[-1] < 0.1
    assert model.params.digest() != tuned.params.digest()
    again, trace2 = task_tune(model, examples, cfg)
    assert trace2 == trace and again.params.digest() == tuned.params.digest()
    preds = predict(tuned, examples)
    assert [p.passage_pred for p in preds] == [e.gold_passage for e in examples]
    assert [p.minimal_pred for p in preds] == [e.gold_minimal for e in examples]


def test_example_loss_finite_for_yes_no_and_null(toy):
    examples, vocab, enc = toy
    model = QAModel.from_encoder(enc, vocab)
    base = examples[0]
    for gold in ("YES", "NO"):
        ex = QAExample("y", base.question_lang, base.context_lang, base.question, base.context, base.passages,
                       0, gold)
        assert np.isfinite(example_loss(model.params, model, ex).item())
    ex = QAExample("n", base.question_lang, base.context_lang, base.question, base.context, base.passages,
                   None, None)
    assert np.isfinite(example_loss(model.params, model, ex).item())


def test_model_save_load_same_predictions(tmp_path, toy):
    examples, vocab, enc = toy
    model = QAModel.from_encoder(enc, vocab, seed=3, max_span_subwords=4)
    model.save(tmp_path / "m.ckpt")
    loaded = QAModel.load(tmp_path / "m.ckpt")
    assert loaded.max_span_subwords == 4 and loaded.params.equals(model.params)
    assert predict(loaded, examples) == predict(model, examples)


def test_prediction_file_round_trip(tmp_path):
    preds = [QAPrediction("a", 1, 0.5, (3, 9), 1.25), QAPrediction("b", None, -1.0),
             QAPrediction("c", 0, 2.0, "NO", 0.1)]
    write_predictions(preds, tmp_path / "p.jsonl")
    assert read_predictions(tmp_path / "p.jsonl") == preds


def test_task_tune_needs_examples(toy):
    _, vocab, enc = toy
    with pytest.raises(InputError):
        task_tune(QAModel.from_encoder(enc, vocab), [], TaskTuneConfig())
