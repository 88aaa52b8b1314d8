import numpy as np
import pytest

import wapadapter as wap


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = wap.generate_synthetic(
        out, classes=2, per_class=8, dim=8, t_min=6, t_max=10, sessions=2, seed=3
    )
    return manifest


@pytest.fixture(scope="module")
def pretrained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("pre")
    return wap.pretrain(
        corpus,
        out,
        d_model=8,
        layers=2,
        heads=2,
        ffn=16,
        t_max=10,
        batch=8,
        epochs=2,
        lr=1e-3,
        codebook_size=4,
        warmup_batches=1,
        seed=5,
    )


def test_feature_roundtrip(tmp_path):
    frames = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
    path = tmp_path / "x.wapf"
    wap.write_features(path, frames)
    back = wap.read_features(path)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, frames)


def test_malformed_file_rejected(tmp_path):
    path = tmp_path / "bad.wapf"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(RuntimeError, match="bad magic"):
        wap.read_features(path)


def test_dataset_info(corpus):
    info = wap.dataset_info(corpus)
    assert info["num_records"] == 16
    assert info["dim"] == 8
    assert sorted(set(info["labels"])) == [0, 1]
    assert sorted(set(info["sessions"])) == [0, 1]


def test_pretrain_outputs(pretrained):
    assert len(pretrained["epochs"]) == 2
    first = pretrained["epochs"][0]
    assert first["epoch"] == 0
    assert first["rec"] > 0
    assert first["lambda"] == 1.0


def test_pretrain_deterministic(corpus, pretrained, tmp_path):
    again = wap.pretrain(
        corpus,
        tmp_path,
        d_model=8,
        layers=2,
        heads=2,
        ffn=16,
        t_max=10,
        batch=8,
        epochs=2,
        lr=1e-3,
        codebook_size=4,
        warmup_batches=1,
        seed=5,
    )
    with open(pretrained["checkpoint"], "rb") as a, open(again["checkpoint"], "rb") as b:
        assert a.read() == b.read()


def test_evaluate_and_export(corpus, pretrained, tmp_path):
    report = wap.evaluate(
        corpus,
        pretrained["checkpoint"],
        tmp_path / "ev",
        classes=2,
        batch=6,
        epochs=2,
        lr=1e-3,
        sap_heads=2,
        seed=9,
    )
    assert len(report["folds"]) == 2
    assert 0.0 <= report["mean_ua"] <= 1.0
    assert "#fold\tUA\tWA\tF1" in report["report"]

    ft = wap.finetune(
        corpus,
        pretrained["checkpoint"],
        tmp_path / "ft",
        fold=0,
        classes=2,
        batch=6,
        epochs=2,
        lr=1e-3,
        sap_heads=2,
        seed=9,
    )
    assert 0.0 <= ft["best_ua"] <= 1.0

    emb_path = wap.export_embeddings(corpus, ft["checkpoint"], tmp_path / "emb")
    emb = wap.read_features(emb_path)
    assert emb.shape == (16, 2 * 8 * 2)  # N x 2*D*H


def test_metrics_fixture():
    truth = [0] * 9 + [1]
    pred = [0] * 10
    scores = wap.metrics(truth, pred, 2)
    assert scores["ua"] == 0.5
    assert scores["wa"] == 0.9
    assert scores["macro_f1"] == pytest.approx(9 / 19, abs=1e-12)
    np.testing.assert_array_equal(scores["confusion"], [[9, 0], [1, 0]])


def test_gradcheck_names():
    cases = wap.gradcheck()
    names = {c["name"] for c in cases}
    assert "affine" in names
    assert all(c["passed"] for c in cases)


def test_baseline(corpus):
    acc = wap.nearest_centroid_baseline(corpus)
    assert 0.0 <= acc <= 1.0
