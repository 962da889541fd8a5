import asyncio

import numpy as np
import pandas as pd
import pytest

from tools.classifiers import ForestParams, KnnParams, model_from_document
from tools.dataset import InteractionClass
from tools.errors import UsageError
from tools.features import FeatureConfig, FeatureMode
from tools.recording_io import write_recording
from tools.training import PROBA_COLUMNS, classify_recording, handle_classify, train_model
from tools.utils import write_json


def test_train_model_document_fields(small_synthetic_set):
    document = train_model(small_synthetic_set, 30, FeatureConfig(), "rf", rng_seed=1,
                           forest=ForestParams(n_trees=5), minmax=True)
    assert document["algorithm"] == "rf"
    assert document["window_size"] == 30
    assert document["feature"]["mode"] == "abstract"
    assert len(document["minmax"]["scale"]) == 36
    assert document["class_counts"]["drop"] == 18
    assert len(model_from_document(document).trees) == 5


def test_classify_recording_windows(small_synthetic_set):
    document = train_model(small_synthetic_set, 30, FeatureConfig(mode=FeatureMode.RAW), "knn", rng_seed=1,
                           knn=KnnParams(k=1),
                           smote=False)
    model = model_from_document(document)
    handle = next(r for r in small_synthetic_set if r.label is InteractionClass.HANDLE)
    frame = classify_recording(document, model, handle)
    assert len(frame) == handle.n_samples // 30
    assert frame["offset"].tolist() == list(range(0, 30 * len(frame), 30))
    np.testing.assert_allclose(frame[PROBA_COLUMNS].sum(axis=1), 1.0)
    # k=1이면 학습에 쓰인 윈도우는 그대로 맞힘
    assert set(frame["label"]) == {"handle"}


def test_short_recording_has_no_windows(small_synthetic_set):
    document = train_model(small_synthetic_set, 30, FeatureConfig(), "knn", rng_seed=1)
    short = small_synthetic_set[0].replace(t=small_synthetic_set[0].t[:10], forces=small_synthetic_set[0].forces[:10])
    frame = classify_recording(document, model_from_document(document), short)
    assert frame.empty


def test_unknown_algorithm(small_synthetic_set):
    with pytest.raises(UsageError):
        train_model(small_synthetic_set, 30, FeatureConfig(), "svm", rng_seed=1)


def test_handle_classify_directory(tmp_path, small_synthetic_set):
    document = train_model(small_synthetic_set, 60, FeatureConfig(), "knn", rng_seed=2)
    model_path = write_json(tmp_path / "model.json", document)
    for rec in small_synthetic_set[:2]:
        write_recording(rec, tmp_path / "in")
    result = asyncio.run(handle_classify({"model": str(model_path), "input": str(tmp_path / "in"),
                                          "out": str(tmp_path / "pred.csv")}))
    frame = pd.read_csv(tmp_path / "pred.csv")
    assert result["windows"] == len(frame) == 6
    assert list(frame.columns[:4]) == ["recording_id", "offset", "t_start_s", "label"]
    assert (tmp_path / "classify_manifest.json").exists()
