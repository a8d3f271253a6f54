import json

import numpy as np
import pytest

import lrmt


def test_text_pipeline():
    assert lrmt.preprocess("I won't GO!") == "i will not go !"
    assert lrmt.tokenize("a b c .") == ["a", "b", "c", "."]


def test_bleu_edges():
    same = [["a", "b", "c", "d"], ["x", "y", "z", "w", "v"]]
    assert lrmt.bleu4(same, same)["score"] == 1.0
    other = [["p", "q", "r", "s"], ["t", "u", "o", "m", "n"]]
    assert lrmt.bleu4(other, same)["score"] == 0.0
    with pytest.raises(ValueError):
        lrmt.bleu4([["a"]], [])


def test_prune_count():
    assert [lrmt.prune_count(512, p) for p in (1, 5, 10)] == [5, 25, 51]


def test_mass_matrices_match_numpy():
    rng = np.random.default_rng(3)
    blocks = [rng.uniform(-1, 1, size=(n, 7)) for n in (3, 5, 1)]
    m = lrmt.mass_matrices(blocks)
    stacked = np.vstack(blocks)
    np.testing.assert_allclose(m["signed"], stacked.sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(m["magnitude"], np.abs(stacked).sum(axis=0), atol=1e-12)
    hits = np.bincount(np.abs(stacked).argmax(axis=1), minlength=7)
    np.testing.assert_array_equal(m["hit_count"], hits)
    assert m["overall"] == m["positive"] + m["negative"]
    assert len(lrmt.select_prune_set(blocks, "most_n", 50)) == 3


def test_cli_round_trip(tmp_path):
    prep = tmp_path / "prep.json"
    prep.write_text(json.dumps({"prepare.synthetic": True, "prepare.sentences": 150, "out": "ws"}))
    code, out, err = lrmt.run_cli(["prepare-data", "--config", str(prep)])
    assert code == 0, err
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({
        "data.manifest": "ws/data/manifest.json", "data.dataset": "en-de",
        "train.embedding": 8, "train.hidden": 12, "train.max_epochs": 2, "train.dropout": 0.0,
    }))
    code, out, err = lrmt.run_cli(["train", "--config", str(cfg), "--out", str(tmp_path / "model")])
    assert code == 0, err
    ck = lrmt.load_checkpoint(tmp_path / "model" / "model.lrmt")
    assert ck.arch == "abgru"
    assert ck.regime == "end-to-end"
    assert ck.analysis_width == 24
    assert json.loads(ck.config)["hidden"] == 12
    out = ck.translate(["the dog sees a cat .", "my friend takes the book ."])
    assert len(out) == 2 and all(isinstance(s, str) for s in out)
    ck.save(tmp_path / "copy.lrmt")
    assert (tmp_path / "copy.lrmt").read_bytes() == (tmp_path / "model" / "model.lrmt").read_bytes()


def test_cli_config_error(tmp_path):
    code, _, err = lrmt.run_cli(["train", "--out", str(tmp_path / "x"), "--seed", "nope"])
    assert code == 2
    assert "--seed" in err
    assert not (tmp_path / "x").exists()


def test_corrupt_checkpoint_rejected(tmp_path):
    bad = tmp_path / "bad.lrmt"
    bad.write_bytes(b"LRMT\x01\x00\x00\x00garbage")
    with pytest.raises(RuntimeError):
        lrmt.load_checkpoint(bad)
