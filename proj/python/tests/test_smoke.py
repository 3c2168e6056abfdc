import math

import pytest

import roundtrip as rt


def write_corpus(directory, corpus, src="en", tgt="sw"):
    directory.mkdir(parents=True, exist_ok=True)
    for split, pairs in corpus.items():
        (directory / f"{split}.{src}").write_text("".join(s + "\n" for s, _ in pairs))
        (directory / f"{split}.{tgt}").write_text("".join(t + "\n" for _, t in pairs))


def test_config_round_trip_and_errors():
    cfg = rt.Config(embed_dim=16, dropout=0.0, layer_norm=False, recon_mode="hidden")
    assert cfg["embed_dim"] == "16"
    assert cfg.get("layer_norm") == "false"
    assert rt.Config.parse(cfg.serialize()) == cfg
    assert "finetune_lr" in rt.Config.keys()
    with pytest.raises(ValueError):
        rt.Config(no_such_key=1)
    with pytest.raises(ValueError):
        cfg.set("batch_size", "many")


def test_bleu_examples():
    assert rt.corpus_bleu(["the cat sat on the mat"], ["the cat sat on the mat"]) == pytest.approx(100.0)
    assert rt.corpus_bleu(["x y z w"], ["a b c d"]) == 0.0
    score = rt.corpus_bleu(["the cat sat on mat"], ["the cat sat on the mat"])
    assert 0.0 < score < 100.0


def test_delta_report():
    rows, table = rt.delta_bleu_report({"en-sw": [(1, 33.5), (2, 33.7)]}, {"en-sw": [(1, 33.9), (2, 33.94)]})
    assert rows[0]["direction"] == "en-sw"
    assert rows[0]["delta_mean"] == pytest.approx(0.32)
    assert "0.32" in table


def test_gumbel_frequencies_match_softmax():
    logits = [1.0, 0.0, -1.0, 0.5]
    freq = rt.gumbel_max_frequencies(logits, beta=1.0, draws=20000, seed=5)
    z = sum(math.exp(v) for v in logits)
    for f, v in zip(freq, logits):
        assert abs(f - math.exp(v) / z) < 0.02
    assert rt.gumbel_max_frequencies(logits, beta=0.0, draws=10) == [1.0, 0.0, 0.0, 0.0]


def test_bidirectional_corpus_doubles_and_tags():
    out = rt.bidirectional_corpus([("a b", "x y"), ("c", "z")])
    assert out == [("<en> a b", "<sw> x y"), ("<en> c", "<sw> z"), ("<sw> x y", "<en> a b"), ("<sw> z", "<en> c")]


def test_gradcheck_passes_and_detects_corruption():
    report = rt.gradcheck(trials=1)
    assert report["passed"]
    assert any(c["name"] == "decode_step" for c in report["components"])
    assert not rt.gradcheck(trials=1, corrupt_mul=1.01)["passed"]
    assert rt.gradcheck(trials=1)["passed"]
    with pytest.raises(ValueError):
        rt.gradcheck(vocab_size=40)


def test_train_finetune_translate(tmp_path):
    corpus = rt.synthesize("copy", size=200, vocab=6, min_len=1, max_len=4, seed=2)
    assert len(corpus["train"]) == 200
    assert all(s == t for s, t in corpus["train"])
    write_corpus(tmp_path / "data", corpus)

    cfg = rt.Config(data_dir=str(tmp_path / "data"), out_dir=str(tmp_path / "pre"), embed_dim=16, hidden_dim=16,
                    attention_dim=16, batch_size=16, checkpoint_interval=50, max_updates=300, pretrain_lr=0.01,
                    dropout=0.0)
    records = rt.pretrain(cfg)
    assert [r["update"] for r in records] == [50, 100, 150, 200, 250, 300]
    assert records[-1]["dev_ppl"] < records[0]["dev_ppl"]
    best = tmp_path / "pre" / "best.ckpt"
    assert best.exists()

    translator = rt.Translator(str(best))
    sources = [s for s, _ in corpus["test"]]
    hyps = translator.translate(sources, src_lang="en", greedy=True)
    assert rt.corpus_bleu(hyps, sources) > 90.0
    assert translator.translate(["", "<en> t1"]) [0] == ""
    with pytest.raises(ValueError):
        translator.translate(["t1"])

    ft = rt.Config.parse(translator.config.serialize())
    ft["recon_mode"] = "hidden"
    ft["out_dir"] = str(tmp_path / "ft")
    ft["max_updates"] = 20
    ft["checkpoint_interval"] = 10
    out = rt.finetune(ft, str(best))
    assert [r["phase"] for r in out] == ["finetune", "finetune"]
    assert out[0]["lr"] == pytest.approx(1e-4)
    with pytest.raises(RuntimeError):
        rt.finetune(ft, str(tmp_path / "missing.ckpt"))
