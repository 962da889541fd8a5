"""
레코딩 / 관측 데이터 모델
검증, 구간 자르기, 윈도우 분할
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from tools.errors import EmptyResultError, InvalidRangeError, UnlabeledRecordingError, UsageError

logger = logging.getLogger(__name__)

N_SENSORS = 12
JITTER_TOLERANCE = 0.2
TIME_EPS_S = 1e-9


class InteractionClass(IntEnum):
    """상호작용 클래스 - 정수 인코딩 0..3 고정"""
    NULL = 0
    DROP = 1
    SQUEEZE = 2
    HANDLE = 3

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def from_slug(cls, value: str) -> "InteractionClass":
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise UsageError(f"Unknown interaction class: {value!r}")


N_CLASSES = len(InteractionClass)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ForceFrame:
    t: float
    f: np.ndarray


@dataclass(frozen=True)
class Recording:
    """12채널 힘 시계열 - t는 초 단위 (N,), forces는 뉴턴 (N, 12)"""
    t: np.ndarray
    forces: np.ndarray
    sample_rate_hz: float = 60.0
    label: Optional[InteractionClass] = None
    meta: Mapping[str, str] = field(default_factory=dict)
    recording_id: str = "recording"

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t).reshape(-1))
        forces = _frozen(self.forces)
        if forces.size == 0:
            forces = _frozen(np.zeros((0, N_SENSORS)))
        object.__setattr__(self, "forces", forces)
        object.__setattr__(self, "meta", dict(self.meta))
        if self.label is not None:
            object.__setattr__(self, "label", InteractionClass(self.label))

    @property
    def n_samples(self) -> int:
        return int(self.t.shape[0])

    @property
    def duration_s(self) -> float:
        return self.n_samples / float(self.sample_rate_hz)

    @property
    def frames(self) -> List[ForceFrame]:
        return [ForceFrame(float(t), f) for t, f in zip(self.t, self.forces)]

    def replace(self, **changes) -> "Recording":
        values = dict(t=self.t, forces=self.forces, sample_rate_hz=self.sample_rate_hz, label=self.label,
                      meta=self.meta, recording_id=self.recording_id)
        values.update(changes)
        return Recording(**values)


@dataclass(frozen=True)
class Violation:
    """검증 위반 - 프레임 인덱스와 규칙 이름"""
    index: int
    rule: str
    message: str

    def as_dict(self) -> Dict[str, object]:
        return {"index": self.index, "rule": self.rule, "message": self.message}


@dataclass(frozen=True)
class Observation:
    window: np.ndarray
    label: InteractionClass
    source_id: str
    offset: int
    sample_rate_hz: float = 60.0

    @property
    def window_size(self) -> int:
        return int(self.window.shape[0])


@dataclass(frozen=True)
class LabeledDataset:
    observations: tuple
    window_size: int

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        for obs in self.observations:
            if obs.window_size != self.window_size:
                raise UsageError(
                    f"Observation from {obs.source_id} has window {obs.window_size}, expected {self.window_size}")

    def __len__(self) -> int:
        return len(self.observations)

    @cached_property
    def class_counts(self) -> Dict[InteractionClass, int]:
        counts = {c: 0 for c in InteractionClass}
        for obs in self.observations:
            counts[obs.label] += 1
        return counts

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(obs.label) for obs in self.observations], dtype=int)

    @property
    def source_ids(self) -> List[str]:
        return [obs.source_id for obs in self.observations]

    @property
    def windows(self) -> np.ndarray:
        """(n, W, 12) 배열"""
        if not self.observations:
            return np.zeros((0, self.window_size, N_SENSORS))
        return np.stack([obs.window for obs in self.observations])


def validate_recording(rec: Recording) -> List[Violation]:
    """불변 조건 검사 - 위반은 예외가 아닌 데이터로 반환"""
    violations: List[Violation] = []

    if rec.n_samples == 0:
        return [Violation(0, "nonempty", "recording has no frames")]
    if rec.forces.ndim != 2 or rec.forces.shape[1] != N_SENSORS:
        return [Violation(0, "channel_count", f"expected {N_SENSORS} force channels, got shape {rec.forces.shape}")]
    if rec.forces.shape[0] != rec.n_samples:
        return [Violation(0, "frame_count", "timestamp and force frame counts differ")]
    if not rec.sample_rate_hz > 0:
        return [Violation(0, "sample_rate", f"sample rate must be positive, got {rec.sample_rate_hz}")]

    finite = np.isfinite(rec.forces)
    for i in np.flatnonzero(~finite.all(axis=1)):
        channels = np.flatnonzero(~finite[i]).tolist()
        violations.append(Violation(int(i), "finite", f"non-finite force on channels {channels}"))
    negative = np.where(finite, rec.forces, 0.0) < 0
    for i in np.flatnonzero(negative.any(axis=1)):
        channels = np.flatnonzero(negative[i]).tolist()
        violations.append(Violation(int(i), "non_negative", f"negative force on channels {channels}"))
    if not np.isfinite(rec.t).all():
        for i in np.flatnonzero(~np.isfinite(rec.t)):
            violations.append(Violation(int(i), "finite_time", "non-finite timestamp"))

    period = 1.0 / rec.sample_rate_hz
    dt = np.diff(rec.t)
    for i in np.flatnonzero(~(dt > 0)):
        violations.append(Violation(int(i) + 1, "monotonic", f"timestamp does not increase ({dt[i]:.6g} s step)"))
    jitter = np.abs(dt - period) > JITTER_TOLERANCE * period
    # 증가하지 않은 스텝 바로 다음 스텝은 같은 결함이므로 지터로 다시 세지 않음
    after_ok = np.concatenate([[True], dt[:-1] > 0])
    for i in np.flatnonzero(jitter & (dt > 0) & after_ok):
        violations.append(Violation(int(i) + 1, "jitter",
                                    f"step {dt[i]:.6g} s deviates from period {period:.6g} s by more than 20%"))

    violations.sort(key=lambda v: (v.index, v.rule))
    return violations


def truncate_recording(rec: Recording, start_s: float, end_s: float, rebase: bool = False) -> Recording:
    """start_s <= t < end_s 구간의 프레임만 남김 (라벨/메타 유지)"""
    if not (0 <= start_s < end_s):
        raise InvalidRangeError(f"Invalid truncation range [{start_s}, {end_s})")

    mask = (rec.t >= start_s - TIME_EPS_S) & (rec.t < end_s - TIME_EPS_S)
    if not mask.any():
        raise EmptyResultError(f"No frames of {rec.recording_id} fall in [{start_s}, {end_s})")

    t = rec.t[mask]
    if rebase:
        t = t - t[0]
    return rec.replace(t=t, forces=rec.forces[mask])


def window_count(n_samples: int, window_size: int, stride: int) -> int:
    if n_samples < window_size:
        return 0
    return (n_samples - window_size) // stride + 1


def window_offsets(n_samples: int, window_size: int, stride: Optional[int] = None) -> List[int]:
    """윈도우 시작 인덱스 0, stride, 2·stride, ... (라벨 없는 분류 입력에도 사용)"""
    stride = window_size if stride is None else stride
    if window_size < 2:
        raise UsageError(f"window_size must be >= 2, got {window_size}")
    if stride < 1:
        raise UsageError(f"stride must be >= 1, got {stride}")
    return [i * stride for i in range(window_count(n_samples, window_size, stride))]


def window_recording(rec: Recording, window_size: int, stride: Optional[int] = None) -> List[Observation]:
    """연속 윈도우로 분할 - 기본 stride는 window_size (비중첩), 남는 꼬리는 버림"""
    offsets = window_offsets(rec.n_samples, window_size, stride)
    if rec.label is None:
        raise UnlabeledRecordingError(f"Recording {rec.recording_id} has no label")

    observations = []
    for offset in offsets:
        window = rec.forces[offset:offset + window_size]
        observations.append(Observation(window=window, label=rec.label, source_id=rec.recording_id,
                                        offset=offset, sample_rate_hz=rec.sample_rate_hz))
    return observations


def build_dataset(recordings: Sequence[Recording], window_size: int, stride: Optional[int] = None) -> LabeledDataset:
    observations: List[Observation] = []
    for rec in recordings:
        observations.extend(window_recording(rec, window_size, stride))
    dataset = LabeledDataset(observations=tuple(observations), window_size=window_size)
    logger.debug("window=%d stride=%s -> %d observations %s", window_size, stride, len(dataset),
                 {c.slug: n for c, n in dataset.class_counts.items()})
    return dataset
