"""
단일 모델 학습 / 새 레코딩 분류 도구
모델은 버전이 붙은 JSON 문서로 저장 (특징 설정과 정규화 계수 포함)
"""

import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from sklearn.preprocessing import MinMaxScaler

from tools.classifiers import (ForestParams, KnnParams, knn_fit, model_document, model_from_document,
                               predict_label, predict_proba, rf_fit)
from tools.dataset import InteractionClass, Recording, build_dataset, window_offsets
from tools.errors import MissingInputError, UsageError
from tools.evaluation import ALGORITHMS
from tools.features import FeatureConfig, feature_matrix, windows_to_matrix
from tools.manifest import RunManifest, manifest_path
from tools.recording_io import load_bundle, read_recording
from tools.resampling import DEFAULT_SMOTE_K, smote_balance
from tools.utils import derive_seed, load_config_file, normalize_path, read_json, resolve_seed, write_json

logger = logging.getLogger(__name__)

PROBA_COLUMNS = [f"p_{c.slug}" for c in InteractionClass]


def train_model(recordings: List[Recording], window: int, feature: FeatureConfig, algorithm: str, rng_seed: int,
                knn: KnnParams = KnnParams(), forest: ForestParams = ForestParams(), stride: Optional[int] = None,
                smote: bool = True, smote_k: int = DEFAULT_SMOTE_K, minmax: bool = False) -> Dict[str, Any]:
    """번들 전체로 모델 하나를 학습해 모델 문서를 반환"""
    if algorithm not in ALGORITHMS:
        raise UsageError(f"Unknown algorithm {algorithm!r} (expected one of {', '.join(ALGORITHMS)})")
    dataset = build_dataset(recordings, window, stride)
    X, y = feature_matrix(dataset, feature)
    if smote:
        balanced = smote_balance(X, y, k=smote_k, rng_seed=derive_seed(rng_seed, 0))
        X, y = balanced.X, balanced.y

    scaling = None
    if minmax:
        scaler = MinMaxScaler().fit(X)
        X = scaler.transform(X)
        scaling = {"scale": scaler.scale_.tolist(), "min": scaler.min_.tolist()}

    if algorithm == "knn":
        model = knn_fit(X, y, knn.k)
    else:
        model = rf_fit(X, y, forest, rng_seed=derive_seed(rng_seed, 1))

    return model_document(model, extra={
        "window_size": window,
        "stride": stride,
        "sample_rate_hz": recordings[0].sample_rate_hz if recordings else None,
        "feature": feature.model_dump(mode="json"),
        "minmax": scaling,
        "smote": {"enabled": smote, "k": smote_k},
        "class_counts": {c.slug: n for c, n in dataset.class_counts.items()},
    })


def classify_recording(document: Dict[str, Any], model, rec: Recording) -> pd.DataFrame:
    """레코딩의 윈도우마다 예측 라벨과 클래스 확률"""
    window = int(document["window_size"])
    offsets = window_offsets(rec.n_samples, window, document.get("stride"))
    columns = ["recording_id", "offset", "t_start_s", "label"] + PROBA_COLUMNS
    if not offsets:
        return pd.DataFrame(columns=columns)

    windows = np.stack([rec.forces[o:o + window] for o in offsets])
    X = windows_to_matrix(windows, rec.sample_rate_hz, FeatureConfig(**document["feature"]))
    if document.get("minmax"):
        X = X * np.asarray(document["minmax"]["scale"]) + np.asarray(document["minmax"]["min"])
    proba = predict_proba(model, X)
    labels = predict_label(proba)

    frame = pd.DataFrame(proba, columns=PROBA_COLUMNS)
    frame.insert(0, "label", [InteractionClass(int(v)).slug for v in labels])
    frame.insert(0, "t_start_s", [float(rec.t[o]) for o in offsets])
    frame.insert(0, "offset", offsets)
    frame.insert(0, "recording_id", rec.recording_id)
    return frame


async def handle_train(arguments: Dict[str, Any]) -> Dict[str, Any]:
    bundle_str = arguments.get("bundle", "")
    out_str = arguments.get("out", "")
    if not bundle_str or not out_str:
        raise UsageError("bundle and out arguments are required")

    section = dict(load_config_file(arguments.get("config")).get("train", {}))
    seed = resolve_seed(arguments.get("seed"), section.get("rng_seed"))
    window = int(arguments.get("window") or section.get("window", 60))
    algorithm = arguments.get("algorithm") or section.get("algorithm", "rf")
    feature = FeatureConfig(**{**section.get("feature", {}),
                               **({"mode": arguments["features"]} if arguments.get("features") else {})})
    knn = KnnParams(**{**section.get("knn", {}), **({"k": arguments["knn_k"]} if arguments.get("knn_k") else {})})
    forest = ForestParams(**{**section.get("forest", {}),
                             **({"n_trees": arguments["trees"]} if arguments.get("trees") else {})})
    smote = arguments.get("smote", section.get("smote", True))
    minmax = bool(arguments.get("minmax", section.get("minmax", False)))

    bundle_path = normalize_path(bundle_str)
    out_path = normalize_path(out_str)
    document = train_model(load_bundle(bundle_path), window, feature, algorithm, seed, knn=knn, forest=forest,
                           stride=arguments.get("stride"), smote=bool(smote), minmax=minmax)
    write_json(out_path, document)

    manifest = RunManifest(command="train", config={k: v for k, v in document.items()
                                                    if k not in ("X", "y", "trees")},
                           seeds={"rng_seed": seed}, inputs=[str(bundle_path)], outputs=[out_path.name])
    manifest.finish(manifest_path(out_path.parent, "train"))
    logger.info("Model (%s, %s, window %d) written to %s", algorithm, feature.mode.value, window, out_path)
    return {"model": str(out_path), "algorithm": algorithm, "window_size": window,
            "feature_mode": feature.mode.value, "class_counts": document["class_counts"]}


async def handle_classify(arguments: Dict[str, Any]) -> Dict[str, Any]:
    """입력은 CSV 파일 하나 또는 CSV 디렉터리, 결과는 윈도우별 예측 CSV"""
    model_str = arguments.get("model", "")
    input_str = arguments.get("input", "")
    out_str = arguments.get("out", "")
    if not model_str or not input_str or not out_str:
        raise UsageError("model, input and out arguments are required")

    model_path = normalize_path(model_str)
    document = read_json(model_path)
    model = model_from_document(document)
    input_path = normalize_path(input_str)
    if input_path.is_dir():
        csv_files = sorted(input_path.glob("*.csv"))
    elif input_path.is_file():
        csv_files = [input_path]
    else:
        raise MissingInputError(f"Input not found: {input_path}")

    frames = [classify_recording(document, model, read_recording(path)) for path in csv_files]
    result = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["recording_id", "offset", "t_start_s", "label"] + PROBA_COLUMNS)

    out_path = normalize_path(out_str)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    result.to_csv(out_path, index=False, float_format="%.6g", lineterminator="\n")
    RunManifest(command="classify", config={"model": str(model_path)},
                inputs=[str(p) for p in csv_files], outputs=[out_path.name]).finish(
        manifest_path(out_path.parent, "classify"))

    counts = result["label"].value_counts().to_dict() if len(result) else {}
    return {"predictions": str(out_path), "windows": int(len(result)),
            "label_counts": {str(k): int(v) for k, v in sorted(counts.items())}}
