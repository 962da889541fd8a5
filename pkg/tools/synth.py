"""
상호작용 클래스별 합성 12채널 레코딩 생성기
외력 패턴을 정역학 선형 사상에 통과시켜 바 압축력 → FSR 측정값을 만듦
"""

import logging
import math
from typing import Any, Callable, Dict, List, Mapping, Optional, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

import config
from tools.dataset import InteractionClass, Recording
from tools.errors import UsageError
from tools.manifest import RunManifest, manifest_path
from tools.statics import (DEFAULT_K1_N_PER_MM, DEFAULT_K2_N_PER_MM, NodeCalibration, StaticsModel,
                           build_statics_model, fsr_measure)
from tools.utils import derive_seed, load_config_file, normalize_path, resolve_seed

logger = logging.getLogger(__name__)

# 관측 개수 비율 (window 60 기준)
REFERENCE_CLASS_COUNTS: Dict[InteractionClass, int] = {
    InteractionClass.NULL: 3930,
    InteractionClass.DROP: 2643,
    InteractionClass.SQUEEZE: 4648,
    InteractionClass.HANDLE: 539,
}

# 60 Hz에서 모든 클래스가 가장 큰 기본 윈도우(100샘플) 이상
DEFAULT_DURATIONS_S = {"null": 3.0, "drop": 1.8, "squeeze": 2.0, "handle": 4.0}


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sample_rate_hz: float = Field(config.DEFAULT_SAMPLE_RATE_HZ, gt=0)
    duration_s: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_DURATIONS_S))
    noise_std_N: float = Field(0.02, ge=0)
    preload_N: float = Field(20.0, gt=0)
    rng_seed: int = config.DEFAULT_SEED
    orientation_seed: int = 0
    quantize_N: Optional[float] = Field(None, gt=0)
    k1_N_per_mm: float = Field(DEFAULT_K1_N_PER_MM, ge=0)
    k2_N_per_mm: float = Field(DEFAULT_K2_N_PER_MM, gt=0)

    @field_validator("duration_s")
    @classmethod
    def _known_classes(cls, value: Dict[str, float]) -> Dict[str, float]:
        merged = dict(DEFAULT_DURATIONS_S)
        for key, seconds in value.items():
            if key not in merged:
                raise ValueError(f"unknown class in duration_s: {key}")
            if not seconds > 0:
                raise ValueError(f"duration for {key} must be positive")
            merged[key] = float(seconds)
        return merged

    @model_validator(mode="after")
    def _noise_below_preload(self) -> "SynthConfig":
        if not self.noise_std_N < self.preload_N / 10:
            raise ValueError("noise_std_N must be below preload_N / 10")
        return self

    @property
    def calibration(self) -> NodeCalibration:
        return NodeCalibration(self.k1_N_per_mm, self.k2_N_per_mm)

    def n_samples(self, cls: InteractionClass) -> int:
        return max(1, int(round(self.duration_s[cls.slug] * self.sample_rate_hz)))


class DropTemplate(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    height_m: float = Field(1.0, gt=0)
    gravity: float = Field(9.81, gt=0)
    impact_N: float = Field(200.0, ge=0)
    impact_width_s: float = Field(0.02, gt=0)
    rebound_count: int = Field(4, ge=0)
    restitution: float = Field(0.6, gt=0, lt=1)
    # 충격 후 구조 진동 (충격 진폭 대비 비율, 0이면 없음)
    ring_ratio: float = Field(0.35, ge=0)
    ring_hz: float = Field(7.0, gt=0)
    ring_decay_s: float = Field(0.25, gt=0)
    amplitude_jitter: float = Field(0.2, ge=0, lt=1)
    contact_band_m: float = Field(0.03, ge=0)
    max_contacts: int = Field(3, ge=1, le=3)

    @property
    def free_fall_s(self) -> float:
        return math.sqrt(2.0 * self.height_m / self.gravity)

    def impacts(self, amplitude_N: float) -> List[tuple]:
        """(충격 시각, 진폭) 목록 - 반발마다 속도가 restitution 배로 줄어듦"""
        t = self.free_fall_s
        events = [(t, amplitude_N)]
        for k in range(1, self.rebound_count + 1):
            t += 2.0 * self.free_fall_s * self.restitution ** k
            events.append((t, amplitude_N * self.restitution ** k))
        return events

    def ground_reaction(self, t: np.ndarray, amplitude_N: float) -> np.ndarray:
        """충격마다 가우시안 펄스 + 감쇠 진동"""
        ground = np.zeros_like(t, dtype=float)
        for t_k, a_k in self.impacts(amplitude_N):
            lag = t - t_k
            ground += a_k * np.exp(-0.5 * (lag / self.impact_width_s) ** 2)
            after = lag > 0
            ground[after] += (a_k * self.ring_ratio * np.exp(-lag[after] / self.ring_decay_s)
                              * np.sin(2.0 * np.pi * self.ring_hz * lag[after]))
        return ground


class SqueezeTemplate(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lead_s: float = Field(0.0, ge=0)
    ramp_s: float = Field(0.5, gt=0)
    hold_N: float = Field(40.0, gt=0)
    hold_s: float = Field(1.0, ge=0)
    force_jitter: float = Field(0.15, ge=0, lt=1)

    def envelope(self, t: np.ndarray) -> np.ndarray:
        """상승-유지-하강 포락선 (0..1)"""
        up = self.lead_s + self.ramp_s
        down = up + self.hold_s
        knots = [(0.0, 0.0), (self.lead_s, 0.0), (up, 1.0), (down, 1.0), (down + self.ramp_s, 0.0)]
        # np.interp는 같은 x 좌표가 겹치면 안 됨 (lead_s=0, hold_s=0)
        xp, fp = zip(*[k for i, k in enumerate(knots) if i == 0 or k[0] > knots[i - 1][0]])
        return np.interp(t, xp, fp, right=0.0)


class HandleTemplate(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    period_s: float = Field(3.0, gt=0)
    grip_N: float = Field(10.0, ge=0)
    sharpness: float = Field(4.0, gt=0)
    period_jitter: float = Field(0.1, ge=0, lt=1)


class ClassTemplate(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    drop: DropTemplate = Field(default_factory=DropTemplate)
    squeeze: SqueezeTemplate = Field(default_factory=SqueezeTemplate)
    handle: HandleTemplate = Field(default_factory=HandleTemplate)


def _rng(cfg: SynthConfig, cls: InteractionClass) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed, cfg.orientation_seed, int(cls)])


def _model(cfg: SynthConfig) -> StaticsModel:
    return build_statics_model(float(cfg.preload_N))


def _time_axis(cfg: SynthConfig, cls: InteractionClass) -> np.ndarray:
    return np.arange(cfg.n_samples(cls)) / cfg.sample_rate_hz


def _finish(cfg: SynthConfig, cls: InteractionClass, t: np.ndarray, compression: np.ndarray,
            rng: np.random.Generator) -> Recording:
    """바 압축력 → FSR 측정값 + 가우시안 잡음, 0에서 잘림"""
    measured = fsr_measure(compression, cfg.calibration)
    measured = measured + rng.normal(0.0, cfg.noise_std_N, size=measured.shape)
    measured = np.clip(measured, 0.0, None)
    if cfg.quantize_N:
        measured = np.round(measured / cfg.quantize_N) * cfg.quantize_N
    meta = {
        "source": "synthetic",
        "operator": "synthetic",
        "orientation_seed": str(cfg.orientation_seed),
        "rng_seed": str(cfg.rng_seed),
    }
    return Recording(t=t, forces=measured, sample_rate_hz=cfg.sample_rate_hz, label=cls, meta=meta,
                     recording_id=f"{cls.slug}-{cfg.orientation_seed}")


def _orientation(rng: np.random.Generator) -> Rotation:
    return Rotation.random(random_state=rng)


def equilibrium_reading(cfg: SynthConfig) -> np.ndarray:
    """외력이 없을 때 채널별 측정값"""
    model = _model(cfg)
    return np.asarray(fsr_measure(model.bar_preload_N[model.graph.bar_of_node], cfg.calibration))


def synth_null(cfg: SynthConfig, tmpl: Optional[ClassTemplate] = None) -> Recording:
    """표면 위에 놓인 상태 - 평형 측정값 + 잡음"""
    cls = InteractionClass.NULL
    rng = _rng(cfg, cls)
    model = _model(cfg)
    t = _time_axis(cfg, cls)
    compression = np.broadcast_to(model.bar_preload_N[model.graph.bar_of_node], (t.size, model.graph.node_count))
    return _finish(cfg, cls, t, compression, rng)


def contact_nodes(world: np.ndarray, band_m: float, max_contacts: int) -> List[int]:
    """바닥(z 최소)에 가까운 1~3개 노드"""
    z = world[:, 2]
    order = np.argsort(z, kind="stable")
    lowest = z[order[0]]
    return [int(n) for n in order[:max_contacts] if z[n] - lowest <= band_m] or [int(order[0])]


def synth_drop(cfg: SynthConfig, tmpl: Optional[ClassTemplate] = None) -> Recording:
    """
    1m 높이에서 낙하: 자유낙하(외력 없음) → 바닥 충격과 구조 진동 → 감쇠 반발
    지면 반력은 접촉 노드에, 관성력은 전체 노드에 균등 분배
    """
    drop = (tmpl or ClassTemplate()).drop
    cls = InteractionClass.DROP
    rng = _rng(cfg, cls)
    model = _model(cfg)
    t = _time_axis(cfg, cls)

    rotation = _orientation(rng)
    x = model.positions.coordinates
    contacts = contact_nodes(rotation.apply(x), drop.contact_band_m, drop.max_contacts)
    up = rotation.inv().apply([0.0, 0.0, 1.0])
    amplitude = drop.impact_N * (1.0 + drop.amplitude_jitter * rng.uniform(-1.0, 1.0))

    ground = drop.ground_reaction(t, amplitude)

    n = model.graph.node_count
    external = np.zeros((t.size, n, 3))
    external -= (ground / n)[:, None, None] * up
    for node in contacts:
        external[:, node, :] += (ground / len(contacts))[:, None] * up

    recording = _finish(cfg, cls, t, model.node_compression(external), rng)
    recording.meta.update({"contacts": ",".join(map(str, contacts)), "free_fall_s": f"{drop.free_fall_s:.6f}"})
    return recording


def synth_squeeze(cfg: SynthConfig, tmpl: Optional[ClassTemplate] = None) -> Recording:
    """두 강체면 사이 압축 - 방향에 따른 대척 노드 쌍에 크기 같고 반대인 힘"""
    squeeze = (tmpl or ClassTemplate()).squeeze
    cls = InteractionClass.SQUEEZE
    rng = _rng(cfg, cls)
    model = _model(cfg)
    t = _time_axis(cfg, cls)

    rotation = _orientation(rng)
    x = model.positions.coordinates
    pressed = contact_nodes(rotation.apply(x), 0.0, 1)[0]
    opposite = model.antipode(pressed)
    inward = -x[pressed] / np.linalg.norm(x[pressed])
    force = squeeze.hold_N * (1.0 + squeeze.force_jitter * rng.uniform(-1.0, 1.0))

    envelope = squeeze.envelope(t) * force
    external = np.zeros((t.size, model.graph.node_count, 3))
    external[:, pressed, :] = envelope[:, None] * inward
    external[:, opposite, :] = -envelope[:, None] * inward

    recording = _finish(cfg, cls, t, model.node_compression(external), rng)
    recording.meta.update({"pressed_nodes": f"{pressed},{opposite}", "hold_force_N": f"{force:.6f}"})
    return recording


def hand_weights(azimuth: np.ndarray, phase: Union[float, np.ndarray], sharpness: float) -> np.ndarray:
    """두 손(phase, phase+π)의 노드별 파지 가중치"""
    diff = np.subtract.outer(np.atleast_1d(phase), azimuth)
    front = np.clip(np.cos(diff), 0.0, None) ** sharpness
    back = np.clip(np.cos(diff - np.pi), 0.0, None) ** sharpness
    weights = front + back
    return weights[0] if np.ndim(phase) == 0 else weights


def node_azimuths(x: np.ndarray, axis: np.ndarray) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return np.arctan2(x @ e2, x @ e1)


def synth_handle(cfg: SynthConfig, tmpl: Optional[ClassTemplate] = None) -> Recording:
    """손으로 한 바퀴 돌림 - 파지력이 회전 주기 동안 노드 순서를 따라 이동"""
    handle = (tmpl or ClassTemplate()).handle
    cls = InteractionClass.HANDLE
    rng = _rng(cfg, cls)
    model = _model(cfg)
    t = _time_axis(cfg, cls)

    rotation = _orientation(rng)
    x = model.positions.coordinates
    axis = rotation.inv().apply([1.0, 0.0, 0.0])
    azimuth = node_azimuths(x, axis)
    period = handle.period_s * (1.0 + handle.period_jitter * rng.uniform(-1.0, 1.0))
    phase0 = rng.uniform(0.0, 2.0 * np.pi)

    weights = hand_weights(azimuth, phase0 + 2.0 * np.pi * t / period, handle.sharpness)
    inward = -x / np.linalg.norm(x, axis=1, keepdims=True)
    external = handle.grip_N * weights[:, :, None] * inward[None, :, :]

    recording = _finish(cfg, cls, t, model.node_compression(external), rng)
    recording.meta.update({"rotation_period_s": f"{period:.6f}"})
    return recording


GENERATORS: Dict[InteractionClass, Callable[[SynthConfig, Optional[ClassTemplate]], Recording]] = {
    InteractionClass.NULL: synth_null,
    InteractionClass.DROP: synth_drop,
    InteractionClass.SQUEEZE: synth_squeeze,
    InteractionClass.HANDLE: synth_handle,
}


def counts_from_ratios(total: int, ratios: Mapping[InteractionClass, float] = REFERENCE_CLASS_COUNTS) -> Dict[InteractionClass, int]:
    """최대 잉여(largest remainder) 반올림 - 동률은 낮은 클래스 인코딩 우선"""
    if total < 0:
        raise UsageError(f"total must be >= 0, got {total}")
    weights = np.array([float(ratios.get(c, 0.0)) for c in InteractionClass])
    if weights.sum() <= 0:
        raise UsageError("ratios must have a positive sum")
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(int)
    remainder = total - int(counts.sum())
    order = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return {c: int(n) for c, n in zip(InteractionClass, counts)}


def _synth_one(cfg: SynthConfig, templates: ClassTemplate, index: int, cls: InteractionClass) -> Recording:
    orientation_seed = derive_seed(cfg.rng_seed, index)
    recording = GENERATORS[cls](cfg.model_copy(update={"orientation_seed": orientation_seed}), templates)
    return recording.replace(recording_id=f"{cls.slug}-{index:05d}")


def synth_dataset(cfg: SynthConfig, templates: Optional[ClassTemplate] = None,
                  counts: Optional[Mapping[Any, int]] = None, n_jobs: int = 1) -> List[Recording]:
    """클래스별 요청 개수만큼 생성 - 레코딩 인덱스마다 독립 RNG 스트림 (병렬/직렬 결과 동일)"""
    templates = templates or ClassTemplate()
    counts = counts if counts is not None else {c: 1 for c in InteractionClass}
    plan = []
    for cls in InteractionClass:
        n = int(counts.get(cls, counts.get(cls.slug, 0)) if hasattr(counts, "get") else 0)
        if n < 0:
            raise UsageError(f"count for {cls.slug} must be >= 0")
        plan.extend([cls] * n)

    if not plan:
        return []
    recordings = Parallel(n_jobs=n_jobs)(
        delayed(_synth_one)(cfg, templates, index, cls) for index, cls in enumerate(plan))
    logger.info("Synthesized %d recordings", len(recordings))
    return list(recordings)


def _parse_counts(value: Any) -> Optional[Dict[InteractionClass, int]]:
    if value is None:
        return None
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        if len(parts) != len(InteractionClass):
            raise UsageError("counts must list four integers (null,drop,squeeze,handle)")
        value = parts
    if isinstance(value, dict):
        return {InteractionClass.from_slug(k): int(v) for k, v in value.items()}
    return {c: int(v) for c, v in zip(InteractionClass, value)}


# "table1"이 기본 이름, "reference"는 별칭
REFERENCE_RATIO_NAMES = ("table1", "reference")


def _parse_ratios(value: Any) -> Mapping[InteractionClass, float]:
    if value is None or value in REFERENCE_RATIO_NAMES:
        return REFERENCE_CLASS_COUNTS
    if value == "equal":
        return {c: 1.0 for c in InteractionClass}
    if isinstance(value, dict):
        return {InteractionClass.from_slug(k): float(v) for k, v in value.items()}
    raise UsageError(f"Unknown ratios: {value!r} (expected 'table1', 'equal' or a mapping)")


async def handle_synth(arguments: Dict[str, Any]) -> Dict[str, Any]:
    """합성 레코딩 생성 도구 - 레코딩마다 CSV + JSON 사이드카, 실행 매니페스트 1개"""
    from tools.recording_io import write_recording

    out_str = arguments.get("out", "")
    if not out_str:
        raise UsageError("out argument is required")
    file_config = load_config_file(arguments.get("config"))

    synth_section = dict(file_config.get("synth", {}))
    synth_section["rng_seed"] = resolve_seed(arguments.get("seed"), synth_section.get("rng_seed"))
    cfg = SynthConfig(**synth_section)
    templates = ClassTemplate(**file_config.get("templates", {}))

    counts = _parse_counts(arguments.get("counts", file_config.get("counts")))
    total = arguments.get("total", file_config.get("total"))
    if counts is None:
        ratios = _parse_ratios(arguments.get("ratios", file_config.get("ratios")))
        counts = counts_from_ratios(int(total if total is not None else 118), ratios)

    out_dir = normalize_path(out_str)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="synth",
                           config={"synth": cfg.model_dump(), "templates": templates.model_dump(),
                                   "counts": {c.slug: n for c, n in counts.items()}},
                           seeds={"rng_seed": cfg.rng_seed})

    recordings = synth_dataset(cfg, templates, counts, n_jobs=int(arguments.get("n_jobs", 1)))
    for rec in recordings:
        csv_path, _ = write_recording(rec, out_dir)
        manifest.outputs.append(csv_path.name)
    manifest.finish(manifest_path(out_dir, "synth"))

    return {
        "out": str(out_dir),
        "recordings": len(recordings),
        "counts": {c.slug: n for c, n in counts.items()},
        "rng_seed": cfg.rng_seed,
    }
