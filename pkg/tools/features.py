"""
관측 윈도우 → 분류기 입력 특징
원시(raw) 시계열 펼침과 추상(abstract) 특징 36개 (채널별 충격량 J, 최대 yank, 최대 힘)
"""

import logging
import pathlib
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import trapezoid

from tools.dataset import N_SENSORS, InteractionClass, LabeledDataset, Observation
from tools.errors import DimensionMismatchError, EmptyResultError, SeriesTooShortError, UsageError
from tools.statics import DEFAULT_K1_N_PER_MM, DEFAULT_K2_N_PER_MM, NodeCalibration, fsr_calibrate

logger = logging.getLogger(__name__)

N_ABSTRACT_FEATURES = 3 * N_SENSORS
ABSTRACT_GROUPS = ("J", "Ymax", "Fmax")


class FeatureMode(str, Enum):
    RAW = "raw"
    ABSTRACT = "abstract"


class FeatureConfig(BaseModel):
    """특징 추출 설정 - calibrate=True면 FSR 측정값을 실제 힘으로 환산한 뒤 추출"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: FeatureMode = FeatureMode.ABSTRACT
    calibrate: bool = True
    absolute_yank: bool = False
    k1_N_per_mm: float = Field(DEFAULT_K1_N_PER_MM, ge=0)
    k2_N_per_mm: float = Field(DEFAULT_K2_N_PER_MM, gt=0)

    @property
    def calibration(self) -> NodeCalibration:
        return NodeCalibration(self.k1_N_per_mm, self.k2_N_per_mm)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    mode: FeatureMode
    label: Optional[InteractionClass] = None
    window_size: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        expected = N_ABSTRACT_FEATURES if self.mode is FeatureMode.ABSTRACT else N_SENSORS * self.window_size
        if values.size != expected:
            raise DimensionMismatchError(f"{self.mode.value} vector must have {expected} values, got {values.size}")


def _series(series: Sequence[float], minimum: int) -> np.ndarray:
    arr = np.asarray(series, dtype=float)
    if arr.shape[0] < minimum:
        if minimum == 1:
            raise EmptyResultError("Series is empty")
        raise SeriesTooShortError(f"Series needs at least {minimum} samples, got {arr.shape[0]}")
    return arr


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")


def total_impulse(series: Sequence[float], dt: float) -> float:
    """사다리꼴 적분 Σ dt/2 (F[i-1] + F[i]) (N·s)"""
    _check_dt(dt)
    return float(trapezoid(_series(series, 2), dx=dt, axis=0))


def max_yank(series: Sequence[float], dt: float, absolute: bool = False) -> float:
    """최대 이산 미분 max (F[i+1] - F[i]) / dt (N/s) - 기본은 부호 유지"""
    _check_dt(dt)
    diff = np.diff(_series(series, 2), axis=0) / dt
    if absolute:
        diff = np.abs(diff)
    return float(diff.max())


def max_force(series: Sequence[float]) -> float:
    return float(_series(series, 1).max())


def abstract_matrix(windows: np.ndarray, dt: float, absolute_yank: bool = False) -> np.ndarray:
    """(n, W, 12) → (n, 36) [J_0..J_11, Ymax_0..Ymax_11, Fmax_0..Fmax_11]"""
    _check_dt(dt)
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[2] != N_SENSORS:
        raise DimensionMismatchError(f"Windows must be (n, W, {N_SENSORS}), got {windows.shape}")
    if windows.shape[1] < 2:
        raise SeriesTooShortError(f"Windows need at least 2 samples, got {windows.shape[1]}")
    impulse = trapezoid(windows, dx=dt, axis=1)
    diff = np.diff(windows, axis=1) / dt
    if absolute_yank:
        diff = np.abs(diff)
    return np.hstack([impulse, diff.max(axis=1), windows.max(axis=1)])


def raw_matrix(windows: np.ndarray) -> np.ndarray:
    """(n, W, 12) → (n, 12·W), 센서 우선 순서 (센서 0의 모든 샘플, 센서 1, ...)"""
    windows = np.asarray(windows, dtype=float)
    return np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(windows.shape[0], -1)


def extract_abstract(obs: Observation, absolute_yank: bool = False) -> FeatureVector:
    dt = 1.0 / obs.sample_rate_hz
    values = abstract_matrix(obs.window[None, :, :], dt, absolute_yank)[0]
    return FeatureVector(values=values, mode=FeatureMode.ABSTRACT, label=obs.label, window_size=obs.window_size)


def extract_raw(obs: Observation) -> FeatureVector:
    return FeatureVector(values=raw_matrix(obs.window[None, :, :])[0], mode=FeatureMode.RAW, label=obs.label,
                         window_size=obs.window_size)


def unflatten_raw(values: np.ndarray, window_size: int) -> np.ndarray:
    """extract_raw의 역변환 - (W, 12) 윈도우 복원"""
    values = np.asarray(values, dtype=float)
    if values.size != N_SENSORS * window_size:
        raise DimensionMismatchError(f"Raw vector must have {N_SENSORS * window_size} values, got {values.size}")
    return values.reshape(N_SENSORS, window_size).T.copy()


def feature_names(mode: FeatureMode, window_size: int) -> List[str]:
    if FeatureMode(mode) is FeatureMode.ABSTRACT:
        return [f"{group}_{s:02d}" for group in ABSTRACT_GROUPS for s in range(N_SENSORS)]
    return [f"s{s:02d}_t{i:03d}" for s in range(N_SENSORS) for i in range(window_size)]


def prepare_windows(windows: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """특징 추출 전 단계: 설정에 따라 FSR 측정값을 실제 힘으로 환산"""
    if cfg.calibrate:
        return np.asarray(fsr_calibrate(np.asarray(windows, dtype=float), cfg.calibration))
    return np.asarray(windows, dtype=float)


def windows_to_matrix(windows: np.ndarray, sample_rate_hz: float, cfg: FeatureConfig) -> np.ndarray:
    prepared = prepare_windows(windows, cfg)
    if cfg.mode is FeatureMode.ABSTRACT:
        return abstract_matrix(prepared, 1.0 / sample_rate_hz, cfg.absolute_yank)
    return raw_matrix(prepared)


def feature_matrix(dataset: LabeledDataset, cfg: FeatureConfig) -> Tuple[np.ndarray, np.ndarray]:
    """데이터셋 전체를 한 번에 (X, y)로 변환"""
    n_features = N_ABSTRACT_FEATURES if cfg.mode is FeatureMode.ABSTRACT else N_SENSORS * dataset.window_size
    if len(dataset) == 0:
        return np.zeros((0, n_features)), np.zeros(0, dtype=int)
    rates = {obs.sample_rate_hz for obs in dataset.observations}
    if len(rates) != 1:
        raise UsageError(f"Observations mix sample rates {sorted(rates)}")
    X = windows_to_matrix(dataset.windows, rates.pop(), cfg)
    if not np.isfinite(X).all():
        raise DimensionMismatchError("Feature matrix contains non-finite values")
    return X, dataset.labels


def export_feature_csv(path: pathlib.Path, X: np.ndarray, y: np.ndarray, names: Sequence[str],
                       source_ids: Optional[Sequence[str]] = None) -> pathlib.Path:
    """헤더에 특징 슬롯 이름을 담은 CSV - label(이름) 옆에 class(정수 인코딩)도 기록"""
    frame = pd.DataFrame(np.asarray(X, dtype=float), columns=list(names))
    codes = [int(InteractionClass(int(v))) for v in y]
    frame.insert(0, "class", codes)
    frame.insert(0, "label", [InteractionClass(c).slug for c in codes])
    if source_ids is not None:
        frame.insert(0, "source_id", list(source_ids))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    logger.debug("Wrote %d feature rows to %s", len(frame), path)
    return path


def read_feature_csv(path: pathlib.Path) -> Tuple[np.ndarray, np.ndarray, List[str], Optional[List[str]]]:
    """export_feature_csv 출력 → (X, y, 특징 이름, source_id)"""
    # "null" 라벨이 NaN으로 읽히지 않도록 기본 NA 값 끔
    frame = pd.read_csv(path, keep_default_na=False)
    source_ids = frame.pop("source_id").astype(str).tolist() if "source_id" in frame.columns else None
    frame.pop("label")
    y = frame.pop("class").to_numpy(dtype=int)
    return frame.to_numpy(dtype=float), y, list(frame.columns), source_ids
