import json
import math

import numpy as np
import pytest

import motext


def test_info_nce_uniform():
    S = np.full((2, 2), 0.3)
    loss, grad = motext.info_nce(S, temperature=0.1)
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)
    assert grad.shape == (2, 2)


def test_hn_nce_degenerates_to_info_nce():
    rng = np.random.default_rng(5)
    S = rng.uniform(-1.0, 1.0, size=(6, 6))
    plain_loss, plain_grad = motext.info_nce(S, temperature=0.3)
    hn_loss, hn_grad = motext.hn_nce(S, temperature=0.3, alpha=1.0, beta=0.0)
    assert hn_loss == pytest.approx(plain_loss, abs=1e-9)
    assert np.abs(hn_grad - plain_grad).max() < 1e-9


def test_check_gradients():
    rng = np.random.default_rng(6)
    S = rng.uniform(-1.0, 1.0, size=(5, 5))
    for loss in ("info_nce", "hn_nce"):
        assert motext.check_gradients(S, temperature=0.5, loss=loss) < 1e-4


def test_check_gradients_rejects_bad_eps():
    with pytest.raises(motext.MotextError):
        motext.check_gradients(np.eye(3), eps=1.0)


def test_rank_with_threshold_collapses_similar_texts():
    scores = np.array([0.9, 0.8, 0.7])
    sims = np.array([0.99, 0.2, 1.0])
    # Entry 0 counts as the same text as the pair, so the pair ranks first.
    assert motext.rank_with_threshold(scores, sims, 2, threshold=0.95) == 1
    assert motext.rank_with_threshold(scores, sims, 2, threshold=1.0) == 3


def test_recall_and_median():
    ranks = [1, 2, 5, 11]
    assert motext.recall_at_k(ranks, 5) == 75.0
    assert motext.median_rank(ranks) == 3.5


def test_fallback_paraphrase_is_deterministic():
    a = motext.fallback_paraphrase("a person walks forward", 3, seed=7)
    b = motext.fallback_paraphrase("a person walks forward", 3, seed=7)
    assert a == b
    assert len(set(a)) == 3
    assert all(v for v in a)


def test_build_prompt_and_template():
    prompt = motext.build_prompt("paraphrase_sentence", "someone waves")
    assert "someone waves" in prompt
    assert "Paraphrased:" in prompt
    tpl = json.loads(motext.default_template("action_style"))
    assert tpl["style"] == "action_style"
    assert tpl["fewshot_pairs"]


def test_pipeline_round_trip(tmp_path):
    corpus_config = {
        "n_clusters": 2,
        "samples_per_cluster": 4,
        "val_per_cluster": 1,
        "test_per_cluster": 2,
        "dim": 6,
        "n_paraphrases": 2,
        "n_tokens": 2,
        "frames_min": 3,
        "frames_max": 4,
        "seed": 9,
    }
    manifest = motext.synth_corpus(corpus_config, tmp_path / "corpus")

    run_config = {
        "corpus": {"manifest": manifest},
        "train": {
            "epochs": 2,
            "batch_size": 8,
            "embed_dim": 8,
            "text_hidden": [8],
            "motion_hidden": [8],
            "seed": 3,
        },
        "protocol": {"threshold": 0.7, "ks": [1, 3]},
        "output_dir": str(tmp_path / "run"),
    }
    checkpoint = motext.train(run_config)
    report = motext.evaluate(run_config, checkpoint)

    assert set(report["retrieval"]) == {"dsA", "dsB"}
    for row in report["retrieval"].values():
        assert row["n_queries"] == 4
        assert set(row["recall"]) == {"1", "3"}
    assert report["checkpoint_meta"]["seed"] == 3

    motext.summarize([tmp_path / "run" / "report.json"], tmp_path / "summary")
    summary = json.loads((tmp_path / "summary" / "summary.json").read_text())
    assert summary["n_reports"] == 1


def test_bad_config_raises():
    with pytest.raises(motext.MotextError):
        motext.train({"corpus": {}})
