import numpy as np
import pytest

import ple


def small_config(vocab_size):
    c = ple.ModelConfig()
    c.vocab_size = vocab_size
    c.d_model = 8
    c.n_heads = 2
    c.d_ff = 8
    c.max_seq = 32
    return c


def test_tokenizer_and_routes():
    v = ple.Vocabulary(["q", "answer:", "7"])
    ids = ple.encode("q 7 /think", v)
    assert ids[-1] == ple.THINK
    assert ple.decode(ids, v) == "q 7 /think"
    assert ple.encode("zebra", v) == [ple.UNK]
    assert ple.resolve_route(ids) == 1
    assert ple.resolve_route([ple.BOS, ple.THINK, ple.NO_THINK]) == 0
    assert ple.resolve_route([ple.BOS]) == 0


def test_cloned_model_matches_dense_and_round_trips():
    dense = ple.Model.random_dense(small_config(20), 3)
    model = dense.clone_experts()
    assert model.num_experts == 2
    tokens = [ple.BOS, 7, 8, ple.NO_THINK]
    logits = model.forward(tokens, 0)
    assert logits.shape == (4, 20)
    assert np.array_equal(logits, dense.forward(tokens, 0))
    assert max(model.route_logit_gap(tokens)) == 0.0
    blob = model.to_bytes()
    again = ple.Model.from_bytes(blob)
    assert again.to_bytes() == blob
    assert np.array_equal(again.forward(tokens, 1), model.forward(tokens, 1))
    with pytest.raises(ple._ple.PleError):
        model.forward(tokens, 2)


def test_generate_and_train():
    train, held, vocab = ple.synth_task(problems=20, held_out=4, seed=1)
    assert len(train) == 40 and len(held) == 4
    model = ple.Model.random_dense(small_config(len(vocab)), 1).clone_experts()
    trained, losses = model.train(train, vocab, lr=0.05, epochs=2, batch_size=4, seed=1)
    assert len(losses) == 2
    assert not trained == model
    prompt = [ple.BOS] + ple.encode(held[0]["prompt"] + " /think", vocab)
    tokens, route = trained.generate(prompt, max_new=6)
    assert route == 1
    assert trained.generate(prompt, max_new=6, use_cache=False)[0] == tokens


def test_checks_and_metrics():
    recs = ple.run_checks(["conflict-gap"], instances=10)
    assert len(recs) == 10 and all(r["pass"] for r in recs)
    assert ple.count_reflective("Wait hmm answer: 3") == 2
    assert ple.extract_answer("x answer: 3") == "3"
    kept, audit = ple.filter_candidates([("q", "answer: 3", "3"), ("q", "wait answer: 3", "3")])
    assert kept == [0]
    assert audit[1]["reason"] == "style"


def test_cli_in_process(tmp_path):
    code, out, _ = ple.run_cli(["--seed", "1", "--out", str(tmp_path), "theory", "--checks", "dominance",
                                "--instances", "5"])
    assert code == 0
    assert (tmp_path / "theory_records.jsonl").read_text().count("\n") == 5
    code, _, err = ple.run_cli(["theory"])
    assert code == 2 and "seed" in err
