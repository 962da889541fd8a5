"""
반복 층화 k-fold 교차 검증, 클래스별 정밀도/재현율/F1, 일대일(OvO) AUC
윈도우 크기 × 특징 방식 × 알고리즘 실험 그리드
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import rankdata
from sklearn.preprocessing import MinMaxScaler

import config
from tools.classifiers import ForestParams, KnnParams, knn_fit, knn_predict_proba, predict_label, rf_fit, rf_predict_proba
from tools.dataset import N_CLASSES, InteractionClass, LabeledDataset, Recording, build_dataset
from tools.errors import ClassTooSmallError, EmptyResultError, LengthMismatchError, UsageError
from tools.features import FeatureConfig, FeatureMode, feature_matrix
from tools.resampling import DEFAULT_SMOTE_K, smote_balance
from tools.utils import derive_seed

logger = logging.getLogger(__name__)

ALGORITHMS = ("knn", "rf")
CLASS_PAIRS = tuple(itertools.combinations(range(N_CLASSES), 2))
_MODE_CODES = {FeatureMode.RAW: 0, FeatureMode.ABSTRACT: 1}
_ALGO_CODES = {"knn": 0, "rf": 1}


class SmoteMode(str, Enum):
    FOLD = "fold"
    BEFORE_SPLIT = "before_split"
    OFF = "off"


class CvConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(5, ge=2)
    repeats: int = Field(3, ge=1)
    grouped: bool = True
    smote_mode: SmoteMode = SmoteMode.FOLD
    smote_k: int = Field(DEFAULT_SMOTE_K, ge=1)
    minmax: bool = False


class GridConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    windows: List[int] = Field(default_factory=lambda: list(config.DEFAULT_WINDOWS))
    feature_modes: List[FeatureMode] = Field(default_factory=lambda: [FeatureMode(m) for m in config.DEFAULT_FEATURE_MODES])
    algorithms: List[str] = Field(default_factory=lambda: list(config.DEFAULT_ALGORITHMS))
    stride: Optional[int] = Field(None, ge=1)
    cv: CvConfig = Field(default_factory=CvConfig)
    knn: KnnParams = Field(default_factory=KnnParams)
    forest: ForestParams = Field(default_factory=ForestParams)
    calibrate: bool = True
    absolute_yank: bool = False
    rng_seed: int = config.DEFAULT_SEED
    n_jobs: int = 1

    @field_validator("windows")
    @classmethod
    def _windows_valid(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one window size is required")
        if any(w < 2 for w in value):
            raise ValueError("window sizes must be >= 2")
        return value

    @field_validator("algorithms")
    @classmethod
    def _algorithms_known(cls, value: List[str]) -> List[str]:
        unknown = [a for a in value if a not in ALGORITHMS]
        if unknown or not value:
            raise ValueError(f"algorithms must be a non-empty subset of {ALGORITHMS}")
        return value

    def feature_config(self, mode: FeatureMode) -> FeatureConfig:
        return FeatureConfig(mode=mode, calibrate=self.calibrate, absolute_yank=self.absolute_yank)

    def cells(self) -> List[Tuple[int, FeatureMode, str]]:
        return [(w, m, a) for w in self.windows for m in self.feature_modes for a in self.algorithms]


# ==================== 폴드 계획 ====================

@dataclass(frozen=True)
class FoldPlan:
    """folds[r][f] = 반복 r의 검증 폴드 f에 속한 관측 인덱스"""
    folds: Tuple[Tuple[np.ndarray, ...], ...]
    k: int
    repeats: int
    rng_seed: int
    n_samples: int
    grouped: bool = False

    def splits(self) -> Iterator[Tuple[int, int, np.ndarray, np.ndarray]]:
        """(repeat, fold, train_idx, val_idx)"""
        everything = np.arange(self.n_samples)
        for r, folds in enumerate(self.folds):
            for f, val in enumerate(folds):
                yield r, f, np.setdiff1d(everything, val, assume_unique=True), val


def stratified_kfold(labels: Sequence[int], k: int = 5, repeats: int = 1, rng_seed: int = 0,
                     groups: Optional[Sequence[str]] = None) -> FoldPlan:
    """
    반복마다 클래스 안에서 섞은 뒤 폴드에 라운드로빈으로 배분
    클래스가 바뀌어도 배분 위치를 이어가서 폴드 크기 차이가 최대 1
    groups가 주어지면 관측 대신 그룹(레코딩) 단위로 배분
    """
    if k < 2:
        raise UsageError(f"k must be >= 2 for cross validation, got {k}")
    if repeats < 1:
        raise UsageError(f"repeats must be >= 1, got {repeats}")
    labels = np.asarray(labels, dtype=int)
    n = labels.size

    if groups is not None:
        groups = np.asarray(groups)
        if groups.size != n:
            raise LengthMismatchError(f"{groups.size} groups for {n} labels")
        unit_names, unit_of_row = np.unique(groups, return_inverse=True)
        first_row = np.array([np.flatnonzero(unit_of_row == u)[0] for u in range(unit_names.size)], dtype=int)
        unit_labels = labels[first_row]
    else:
        unit_of_row = np.arange(n)
        unit_labels = labels

    by_class = {}
    for c in np.unique(unit_labels):
        units = np.flatnonzero(unit_labels == c)
        if units.size < k:
            what = "recordings" if groups is not None else "observations"
            raise ClassTooSmallError(f"Class {InteractionClass(int(c)).slug} has {units.size} {what}, fewer than k={k}")
        by_class[int(c)] = units

    plan = []
    for r in range(repeats):
        rng = np.random.default_rng([rng_seed, r])
        fold_of_unit = np.empty(unit_labels.size, dtype=int)
        offset = 0
        for c in sorted(by_class):
            units = rng.permutation(by_class[c])
            fold_of_unit[units] = (offset + np.arange(units.size)) % k
            offset = (offset + units.size) % k
        fold_of_row = fold_of_unit[unit_of_row]
        plan.append(tuple(np.flatnonzero(fold_of_row == f) for f in range(k)))

    return FoldPlan(folds=tuple(plan), k=k, repeats=repeats, rng_seed=rng_seed, n_samples=n,
                    grouped=groups is not None)


# ==================== 지표 ====================

def confusion_matrix(truths: Sequence[int], predictions: Sequence[int]) -> np.ndarray:
    """(i, j) = 실제 i를 j로 예측한 수"""
    truths = np.asarray(truths, dtype=int)
    predictions = np.asarray(predictions, dtype=int)
    if truths.shape != predictions.shape:
        raise LengthMismatchError(f"{truths.size} truths but {predictions.size} predictions")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(cm, (truths, predictions), 1)
    return cm


@dataclass(frozen=True)
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    undefined: Tuple[str, ...] = ()


def _ratio(num: np.ndarray, den: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return out, den == 0


def prf_per_class(cm: np.ndarray) -> ClassMetrics:
    """0/0은 0으로 정의하고 undefined에 'precision:drop' 형식으로 기록"""
    cm = np.asarray(cm, dtype=float)
    diag = np.diag(cm)
    precision, p_undef = _ratio(diag, cm.sum(axis=0))
    recall, r_undef = _ratio(diag, cm.sum(axis=1))
    f1, f_undef = _ratio(2.0 * precision * recall, precision + recall)

    def name(c: int) -> str:
        return InteractionClass(c).slug if cm.shape[0] == N_CLASSES else str(c)

    undefined = [f"{metric}:{name(c)}" for metric, flags in (("precision", p_undef), ("recall", r_undef), ("f1", f_undef))
                 for c in np.flatnonzero(flags)]
    return ClassMetrics(precision=precision, recall=recall, f1=f1, undefined=tuple(undefined))


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney 순위합 AUC, 동률은 0.5"""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class AucResult:
    macro: float
    pairs: Dict[Tuple[int, int], float] = field(default_factory=dict)
    skipped: Tuple[Tuple[int, int], ...] = ()


def ovo_auc(truths: Sequence[int], proba: np.ndarray) -> AucResult:
    """
    클래스 쌍 (i, j)마다 두 클래스 샘플만 남겨 AUC(p_i | i vs j)와 AUC(p_j | j vs i)의 평균
    쌍 평균이 macro, 한쪽 클래스가 없는 쌍은 건너뜀
    """
    truths = np.asarray(truths, dtype=int)
    proba = np.asarray(proba, dtype=float)
    if proba.shape != (truths.size, N_CLASSES):
        raise LengthMismatchError(f"Probability matrix {proba.shape} does not match {truths.size} truths")
    if truths.size:
        # 확률 분포 검증 (InvalidDistributionError)
        predict_label(proba)

    pairs: Dict[Tuple[int, int], float] = {}
    skipped = []
    for i, j in CLASS_PAIRS:
        mask = (truths == i) | (truths == j)
        is_i = truths[mask] == i
        if is_i.all() or not is_i.any():
            skipped.append((i, j))
            continue
        pairs[(i, j)] = 0.5 * (binary_auc(proba[mask, i], is_i) + binary_auc(proba[mask, j], ~is_i))
    macro = float(np.mean(list(pairs.values()))) if pairs else float("nan")
    return AucResult(macro=macro, pairs=pairs, skipped=tuple(skipped))


class MetricsReport(BaseModel):
    """그리드 셀 하나의 결과 (폴드/반복 평균)"""
    window_size: int
    feature_mode: str
    algorithm: str
    status: str = "ok"
    error: Optional[str] = None
    accuracy: Optional[float] = None
    accuracy_std: Optional[float] = None
    pooled_accuracy: Optional[float] = None
    auc_ovo: Optional[float] = None
    precision: Dict[str, float] = Field(default_factory=dict)
    recall: Dict[str, float] = Field(default_factory=dict)
    f1: Dict[str, float] = Field(default_factory=dict)
    confusion_matrix: List[List[int]] = Field(default_factory=list)
    undefined_metrics: Dict[str, int] = Field(default_factory=dict)
    skipped_auc_pairs: int = 0
    n_observations: int = 0
    n_features: int = 0
    class_counts: Dict[str, int] = Field(default_factory=dict)
    provenance: Dict[str, Any] = Field(default_factory=dict)

    @property
    def cell_name(self) -> str:
        return f"w{self.window_size:03d}_{self.feature_mode}_{self.algorithm}"

    @property
    def macro_f1(self) -> Optional[float]:
        return float(np.mean(list(self.f1.values()))) if self.f1 else None

    def sweep_row(self) -> Dict[str, Any]:
        return {
            "window_size": self.window_size,
            "feature_mode": self.feature_mode,
            "algorithm": self.algorithm,
            "status": self.status,
            "accuracy": self.accuracy,
            "accuracy_std": self.accuracy_std,
            "pooled_accuracy": self.pooled_accuracy,
            "auc_ovo": self.auc_ovo,
            "macro_f1": self.macro_f1,
            "n_observations": self.n_observations,
            "n_features": self.n_features,
        }


# ==================== 셀 평가 ====================

def _fit_predict(algorithm: str, X_train: np.ndarray, y_train: np.ndarray, X_val: np.ndarray, grid: GridConfig,
                 seed: int) -> np.ndarray:
    if algorithm == "knn":
        return knn_predict_proba(knn_fit(X_train, y_train, grid.knn.k), X_val)
    return rf_predict_proba(rf_fit(X_train, y_train, grid.forest, rng_seed=seed), X_val)


def evaluate_cell(X: np.ndarray, y: np.ndarray, groups: Optional[np.ndarray], window: int, mode: FeatureMode,
                  algorithm: str, grid: GridConfig) -> MetricsReport:
    """
    한 셀: (선택) 분할 전 SMOTE → 폴드 계획 → 폴드마다 학습 폴드 SMOTE → 정규화 → 학습 → 검증
    무작위성은 (seed, window, mode, algorithm, repeat, fold)에서 파생
    """
    if len(y) == 0:
        raise EmptyResultError(f"No observations for window {window}")
    cv = grid.cv
    cell_seed = derive_seed(grid.rng_seed, window, _MODE_CODES[mode], _ALGO_CODES[algorithm])
    plan_seed = derive_seed(grid.rng_seed, window)

    if cv.smote_mode is SmoteMode.BEFORE_SPLIT:
        balanced = smote_balance(X, y, k=cv.smote_k, rng_seed=derive_seed(plan_seed, 0))
        if groups is not None:
            seed_rows = np.where(balanced.synthetic, balanced.seed_index, np.arange(balanced.y.size))
            groups = groups[seed_rows]
        X, y = balanced.X, balanced.y

    plan = stratified_kfold(y, cv.k, cv.repeats, plan_seed, groups if cv.grouped else None)

    fold_acc, fold_auc = [], []
    fold_p, fold_r, fold_f = [], [], []
    undefined: Dict[str, int] = {}
    skipped = 0
    smote_warnings = 0
    pooled = np.zeros((N_CLASSES, N_CLASSES), dtype=int)

    for r, f, train_idx, val_idx in plan.splits():
        fold_seed = derive_seed(cell_seed, r, f)
        X_train, y_train = X[train_idx], y[train_idx]
        if cv.smote_mode is SmoteMode.FOLD:
            balanced = smote_balance(X_train, y_train, k=cv.smote_k, rng_seed=fold_seed)
            X_train, y_train = balanced.X, balanced.y
            smote_warnings += len(balanced.warnings) + len(balanced.absent)
        X_val = X[val_idx]
        if cv.minmax:
            scaler = MinMaxScaler().fit(X_train)
            X_train, X_val = scaler.transform(X_train), scaler.transform(X_val)

        proba = _fit_predict(algorithm, X_train, y_train, X_val, grid, fold_seed)
        cm = confusion_matrix(y[val_idx], predict_label(proba))
        pooled += cm
        metrics = prf_per_class(cm)
        auc = ovo_auc(y[val_idx], proba)

        fold_acc.append(np.trace(cm) / cm.sum())
        fold_p.append(metrics.precision)
        fold_r.append(metrics.recall)
        fold_f.append(metrics.f1)
        if not math.isnan(auc.macro):
            fold_auc.append(auc.macro)
        skipped += len(auc.skipped)
        for flag in metrics.undefined:
            undefined[flag] = undefined.get(flag, 0) + 1

    slugs = [c.slug for c in InteractionClass]
    counts = np.bincount(y, minlength=N_CLASSES)
    return MetricsReport(
        window_size=window,
        feature_mode=mode.value,
        algorithm=algorithm,
        accuracy=float(np.mean(fold_acc)),
        accuracy_std=float(np.std(fold_acc)),
        pooled_accuracy=float(np.trace(pooled) / pooled.sum()),
        auc_ovo=float(np.mean(fold_auc)) if fold_auc else None,
        precision=dict(zip(slugs, np.mean(fold_p, axis=0).tolist())),
        recall=dict(zip(slugs, np.mean(fold_r, axis=0).tolist())),
        f1=dict(zip(slugs, np.mean(fold_f, axis=0).tolist())),
        confusion_matrix=pooled.tolist(),
        undefined_metrics=undefined,
        skipped_auc_pairs=skipped,
        n_observations=int(y.size),
        n_features=int(X.shape[1]),
        class_counts=dict(zip(slugs, counts.tolist())),
        provenance={
            "rng_seed": grid.rng_seed,
            "cell_seed": cell_seed,
            "fold_plan_seed": plan_seed,
            "cv": cv.model_dump(mode="json"),
            "hyperparameters": (grid.knn if algorithm == "knn" else grid.forest).model_dump(mode="json"),
            "stride": grid.stride,
            "calibrate": grid.calibrate,
            "absolute_yank": grid.absolute_yank,
            "smote_warnings": smote_warnings,
        },
    )


def _safe_evaluate(X, y, groups, window, mode, algorithm, grid, prepare_error=None) -> MetricsReport:
    if prepare_error is None:
        try:
            return evaluate_cell(X, y, groups, window, mode, algorithm, grid)
        except Exception as e:
            prepare_error = f"{type(e).__name__}: {e}"
    logger.error("Grid cell w=%d %s/%s failed: %s", window, mode.value, algorithm, prepare_error)
    return MetricsReport(window_size=window, feature_mode=mode.value, algorithm=algorithm, status="failed",
                         error=prepare_error, n_observations=0 if X is None else int(len(y)))


@dataclass(frozen=True)
class GridResult:
    reports: List[MetricsReport]
    observation_counts: Dict[int, Dict[str, int]]

    @property
    def failed(self) -> List[MetricsReport]:
        return [r for r in self.reports if r.status != "ok"]

    def sweep_rows(self) -> List[Dict[str, Any]]:
        return [r.sweep_row() for r in self.reports]


def _observation_counts(dataset: LabeledDataset) -> Dict[str, int]:
    return {c.slug: n for c, n in dataset.class_counts.items()}


def _check_class_coverage(counts: Dict[str, int], present: Sequence[InteractionClass], window: int) -> None:
    """입력에 있는 클래스가 이 윈도우에서 관측치 0개면 셀을 평가하지 않음"""
    missing = [c.slug for c in present if counts.get(c.slug, 0) == 0]
    if missing:
        raise EmptyResultError(f"No observations at window {window} for class(es): {', '.join(missing)}")


def run_experiment_grid(recordings: Sequence[Recording], grid: Optional[GridConfig] = None) -> GridResult:
    """
    윈도우별 데이터셋과 특징 행렬을 한 번씩 만든 뒤 셀들을 병렬 평가
    실패한 셀은 status="failed"로 기록하고 계속 진행
    """
    grid = grid or GridConfig()
    tasks = []
    observation_counts: Dict[int, Dict[str, int]] = {}
    present = sorted({r.label for r in recordings if r.label is not None})
    for window in grid.windows:
        try:
            dataset = build_dataset(recordings, window, grid.stride)
            observation_counts[window] = _observation_counts(dataset)
            _check_class_coverage(observation_counts[window], present, window)
            groups = np.asarray(dataset.source_ids)
        except Exception as e:
            error = f"{type(e).__name__}: {e}"
            tasks.extend((None, None, None, window, m, a, error) for m in grid.feature_modes for a in grid.algorithms)
            continue
        for mode in grid.feature_modes:
            try:
                X, y = feature_matrix(dataset, grid.feature_config(mode))
                error = None
            except Exception as e:
                X, y, error = None, None, f"{type(e).__name__}: {e}"
            tasks.extend((X, y, groups, window, mode, a, error) for a in grid.algorithms)

    reports = Parallel(n_jobs=grid.n_jobs)(
        delayed(_safe_evaluate)(X, y, groups, window, mode, algorithm, grid, error)
        for X, y, groups, window, mode, algorithm, error in tasks)
    logger.info("Grid finished: %d cells, %d failed", len(reports), sum(r.status != "ok" for r in reports))
    return GridResult(reports=list(reports), observation_counts=observation_counts)


# ==================== grid 도구 ====================

def grid_config_from_arguments(arguments: Dict[str, Any]) -> GridConfig:
    """설정 파일의 grid 섹션 위에 플래그를 덮어씀 (플래그 우선)"""
    from tools.utils import as_int_list, as_str_list, load_config_file, resolve_seed

    section = dict(load_config_file(arguments.get("config")).get("grid", {}))
    cv = dict(section.pop("cv", {}))
    forest = dict(section.pop("forest", {}))
    knn = dict(section.pop("knn", {}))

    windows = as_int_list(arguments.get("windows"), "windows")
    if windows is not None:
        section["windows"] = windows
    modes = as_str_list(arguments.get("features"), [m.value for m in FeatureMode], "feature modes")
    if modes is not None:
        section["feature_modes"] = modes
    algorithms = as_str_list(arguments.get("algorithms"), ALGORITHMS, "algorithms")
    if algorithms is not None:
        section["algorithms"] = algorithms
    for key in ("stride", "n_jobs", "calibrate", "absolute_yank"):
        if arguments.get(key) is not None:
            section[key] = arguments[key]
    for key, target in (("folds", "k"), ("repeats", "repeats"), ("smote", "smote_mode"), ("smote_k", "smote_k"),
                        ("minmax", "minmax")):
        if arguments.get(key) is not None:
            cv[target] = arguments[key]
    if arguments.get("ungrouped"):
        cv["grouped"] = False
    if arguments.get("trees") is not None:
        forest["n_trees"] = arguments["trees"]
    if arguments.get("knn_k") is not None:
        knn["k"] = arguments["knn_k"]

    section["rng_seed"] = resolve_seed(arguments.get("seed"), section.get("rng_seed"))
    return GridConfig(cv=CvConfig(**cv), forest=ForestParams(**forest), knn=KnnParams(**knn), **section)


async def handle_grid(arguments: Dict[str, Any]) -> Dict[str, Any]:
    """
    번들 → 그리드 평가
    out/cells/*.json, out/sweep.csv, SVG 두 개, grid_manifest.json
    모든 셀이 실패한 경우에만 오류
    """
    import pandas as pd

    from tools.errors import DataError
    from tools.manifest import RunManifest, manifest_path
    from tools.plots import write_sweep_plots
    from tools.recording_io import load_bundle
    from tools.utils import normalize_path, write_json

    bundle_str = arguments.get("bundle", "")
    out_str = arguments.get("out", "")
    if not bundle_str or not out_str:
        raise UsageError("bundle and out arguments are required")
    grid = grid_config_from_arguments(arguments)
    bundle_path = normalize_path(bundle_str)
    out_dir = normalize_path(out_str)

    recordings = load_bundle(bundle_path)
    manifest = RunManifest(command="grid", config=grid.model_dump(mode="json"), seeds={"rng_seed": grid.rng_seed},
                           inputs=[str(bundle_path)])
    result = run_experiment_grid(recordings, grid)

    cells_dir = out_dir / config.CELLS_DIR_NAME
    for report in result.reports:
        path = write_json(cells_dir / f"{report.cell_name}.json", report)
        manifest.outputs.append(str(path.relative_to(out_dir)))
    rows = result.sweep_rows()
    sweep_path = out_dir / config.SWEEP_CSV_NAME
    pd.DataFrame(rows, columns=list(MetricsReport(window_size=0, feature_mode="", algorithm="").sweep_row())).to_csv(
        sweep_path, index=False, float_format="%.9g", lineterminator="\n")
    manifest.outputs.append(config.SWEEP_CSV_NAME)
    for plot in write_sweep_plots(rows, out_dir):
        manifest.outputs.append(plot.name)

    manifest.notes = {
        "failed_cells": {r.cell_name: r.error for r in result.failed},
        "observation_counts": {str(w): c for w, c in result.observation_counts.items()},
    }
    manifest.finish(manifest_path(out_dir, "grid"))

    if result.reports and len(result.failed) == len(result.reports):
        raise DataError(f"All {len(result.reports)} grid cells failed; first error: {result.failed[0].error}")

    ok = [r for r in result.reports if r.status == "ok"]
    best = max(ok, key=lambda r: r.accuracy)
    return {
        "out": str(out_dir),
        "cells": len(result.reports),
        "failed": len(result.failed),
        "best_cell": best.cell_name,
        "best_accuracy": best.accuracy,
    }
