"""
6-바 정이십면체 텐세그리티 정역학
force-density 평형, 외력 → 부재 축력 변화 선형 사상, FSR 힘 분배기 보정
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from scipy import linalg

from tools.errors import DimensionMismatchError, NegativeForceError, NoSelfStressError, PhriError, UsageError
from tools.manifest import RunManifest, manifest_path
from tools.utils import normalize_path, write_json

logger = logging.getLogger(__name__)

STRUCTURE_DIAMETER_M = 0.56
STRUCTURE_MASS_KG = 0.70
DEFAULT_K1_N_PER_MM = 3.78
DEFAULT_K2_N_PER_MM = 0.37
SVD_RTOL = 1e-8
STRUCTURE_DOCUMENT_VERSION = 1

# 평형 형상: 노드 (0, ±a, ±b)의 순환 치환, b = 2a
_SHORT = 1.0
_LONG = 2.0


class MemberKind(str, Enum):
    BAR = "bar"
    CABLE = "cable"


@dataclass(frozen=True)
class Member:
    a: int
    b: int
    kind: MemberKind


@dataclass(frozen=True)
class TensegrityGraph:
    node_count: int
    members: Tuple[Member, ...]

    @property
    def bars(self) -> List[int]:
        return [i for i, m in enumerate(self.members) if m.kind is MemberKind.BAR]

    @property
    def cables(self) -> List[int]:
        return [i for i, m in enumerate(self.members) if m.kind is MemberKind.CABLE]

    @property
    def is_bar(self) -> np.ndarray:
        return np.array([m.kind is MemberKind.BAR for m in self.members])

    @property
    def bar_of_node(self) -> np.ndarray:
        """노드 i에 닿는 바(부재 인덱스) - 센서 채널 i가 읽는 부재"""
        mapping = np.full(self.node_count, -1, dtype=int)
        for idx in self.bars:
            member = self.members[idx]
            mapping[member.a] = idx
            mapping[member.b] = idx
        return mapping

    def degree(self, node: int, kind: MemberKind) -> int:
        return sum(1 for m in self.members if m.kind is kind and node in (m.a, m.b))

    def violations(self) -> List[str]:
        problems = []
        for idx, m in enumerate(self.members):
            if m.a == m.b:
                problems.append(f"member {idx} connects node {m.a} to itself")
        for node in range(self.node_count):
            bars = self.degree(node, MemberKind.BAR)
            cables = self.degree(node, MemberKind.CABLE)
            if bars != 1 or cables != 4:
                problems.append(f"node {node} touches {bars} bars and {cables} cables")
        return problems


@dataclass(frozen=True)
class NodePositions:
    coordinates: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coordinates, dtype=float, copy=True)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise DimensionMismatchError(f"Node coordinates must be (n, 3), got {coords.shape}")
        coords.setflags(write=False)
        object.__setattr__(self, "coordinates", coords)

    @property
    def diameter(self) -> float:
        center = self.coordinates.mean(axis=0)
        return 2.0 * float(np.linalg.norm(self.coordinates - center, axis=1).max())


@dataclass(frozen=True)
class EquilibriumState:
    force_densities: np.ndarray
    positions: NodePositions
    residual: float
    scale_N: float


@dataclass(frozen=True)
class NodeCalibration:
    """힘 분배기 스프링 상수 (N/mm) - k1=0이면 분배기 없음"""
    k1: float = DEFAULT_K1_N_PER_MM
    k2: float = DEFAULT_K2_N_PER_MM

    def __post_init__(self):
        if self.k1 < 0 or not self.k2 > 0:
            raise UsageError(f"Spring constants must satisfy k1 >= 0, k2 > 0 (got k1={self.k1}, k2={self.k2})")


def build_icosahedron_topology(diameter_m: float = STRUCTURE_DIAMETER_M) -> Tuple[TensegrityGraph, NodePositions]:
    """
    표준 6-스트럿 텐세그리티 (expanded octahedron)
    축에 평행한 바 3쌍, 외접구 지름 diameter_m
    """
    if not diameter_m > 0:
        raise UsageError(f"diameter_m must be positive, got {diameter_m}")

    a, b = _SHORT, _LONG
    coords = np.array([
        # z 방향 바
        (0, a, b), (0, a, -b), (0, -a, b), (0, -a, -b),
        # y 방향 바
        (a, b, 0), (a, -b, 0), (-a, b, 0), (-a, -b, 0),
        # x 방향 바
        (b, 0, a), (-b, 0, a), (b, 0, -a), (-b, 0, -a),
    ], dtype=float)

    members = [Member(2 * k, 2 * k + 1, MemberKind.BAR) for k in range(6)]
    cable_sq = 6.0 * a * a
    bar_pairs = {(m.a, m.b) for m in members}
    for i in range(len(coords)):
        for j in range(i + 1, len(coords)):
            if (i, j) in bar_pairs:
                continue
            if abs(np.sum((coords[i] - coords[j]) ** 2) - cable_sq) < 1e-9:
                members.append(Member(i, j, MemberKind.CABLE))

    graph = TensegrityGraph(node_count=len(coords), members=tuple(members))
    problems = graph.violations()
    if len(graph.bars) != 6 or len(graph.cables) != 24 or problems:
        raise PhriError(f"Topology construction failed: {problems}")

    coords *= (diameter_m / 2.0) / np.sqrt(a * a + b * b)
    return graph, NodePositions(coords)


def _check_consistent(graph: TensegrityGraph, pos: NodePositions) -> None:
    if pos.coordinates.shape[0] != graph.node_count:
        raise DimensionMismatchError(
            f"Graph has {graph.node_count} nodes but positions hold {pos.coordinates.shape[0]}")


def equilibrium_matrix(graph: TensegrityGraph, pos: NodePositions) -> np.ndarray:
    """(3n, m) 평형 행렬 - 열 m은 노드 a 행에 (x_a - x_b), 노드 b 행에 (x_b - x_a)"""
    _check_consistent(graph, pos)
    x = pos.coordinates
    A = np.zeros((3 * graph.node_count, len(graph.members)))
    for col, member in enumerate(graph.members):
        d = x[member.a] - x[member.b]
        A[3 * member.a:3 * member.a + 3, col] = d
        A[3 * member.b:3 * member.b + 3, col] = -d
    return A


def member_lengths(graph: TensegrityGraph, pos: NodePositions) -> np.ndarray:
    x = pos.coordinates
    return np.array([np.linalg.norm(x[m.a] - x[m.b]) for m in graph.members])


def self_stress_basis(A: np.ndarray, rtol: float = SVD_RTOL) -> Tuple[np.ndarray, np.ndarray]:
    """SVD 영공간 - (m, d) 기저와 특이값"""
    _, s, vt = linalg.svd(A, full_matrices=True)
    singular = np.zeros(A.shape[1])
    singular[:s.size] = s
    null_mask = singular <= rtol * singular[0]
    return vt[null_mask].T, singular


def self_stress_dimension(graph: TensegrityGraph, pos: NodePositions, rtol: float = SVD_RTOL) -> int:
    basis, _ = self_stress_basis(equilibrium_matrix(graph, pos), rtol)
    return int(basis.shape[1])


def solve_force_densities(graph: TensegrityGraph, pos: NodePositions, scale_N: float = 1.0,
                          rtol: float = SVD_RTOL) -> EquilibriumState:
    """
    자기응력(self-stress) 해
    케이블 > 0, 바 < 0 부호로 맞추고, 최대 바 압축력 |q|·L 이 scale_N 이 되도록 정규화
    """
    if not scale_N > 0:
        raise UsageError(f"scale_N must be positive, got {scale_N}")

    A = equilibrium_matrix(graph, pos)
    basis, singular = self_stress_basis(A, rtol)
    if basis.shape[1] == 0:
        raise NoSelfStressError(
            f"Smallest singular value {singular[-1] / singular[0]:.3e} (relative) exceeds tolerance {rtol}")

    is_bar = graph.is_bar
    target = np.where(is_bar, -1.0, 1.0)
    q = basis @ (basis.T @ target)
    if not (np.all(q[~is_bar] > 0) and np.all(q[is_bar] < 0)):
        raise NoSelfStressError("No self-stress puts every cable in tension and every bar in compression")

    lengths = member_lengths(graph, pos)
    q = q * (scale_N / np.max(-q[is_bar] * lengths[is_bar]))

    residual = float(np.max(np.abs(A @ q)))
    if residual > 1e-8 * scale_N:
        raise NoSelfStressError(f"Equilibrium residual {residual:.3e} N exceeds {1e-8 * scale_N:.3e} N")

    logger.debug("self-stress dim=%d residual=%.3e", basis.shape[1], residual)
    q.setflags(write=False)
    return EquilibriumState(force_densities=q, positions=pos, residual=residual, scale_N=float(scale_N))


def external_load_operator(graph: TensegrityGraph, pos: NodePositions, rtol: float = SVD_RTOL) -> np.ndarray:
    """(m, 3n) 선형 사상: 외력 벡터 → 부재 축력 변화 (최소 노름 최소제곱)"""
    A = equilibrium_matrix(graph, pos)
    return member_lengths(graph, pos)[:, None] * np.linalg.pinv(A, rcond=rtol)


def member_loads_under_external(graph: TensegrityGraph, pos: NodePositions, eq: EquilibriumState,
                                external: np.ndarray) -> np.ndarray:
    """외력 (12x3 또는 36) 에 대한 부재별 축력 변화 (N, 인장 +)"""
    ext = np.asarray(external, dtype=float).reshape(-1)
    if ext.size != 3 * graph.node_count:
        raise DimensionMismatchError(f"External force vector must have {3 * graph.node_count} entries, got {ext.size}")
    if eq.force_densities.size != len(graph.members):
        raise DimensionMismatchError("Equilibrium state does not match the graph")
    return external_load_operator(graph, pos) @ ext


def _check_non_negative(value: Union[float, np.ndarray], name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if np.any(arr < 0):
        raise NegativeForceError(f"{name} must be >= 0")
    return arr


def _scalar_or_array(arr: np.ndarray) -> Union[float, np.ndarray]:
    return float(arr) if arr.ndim == 0 else arr


def fsr_calibrate(f_meas: Union[float, np.ndarray], cal: NodeCalibration = NodeCalibration()) -> Union[float, np.ndarray]:
    """F = (k1 + k2) / k2 * F_meas"""
    arr = _check_non_negative(f_meas, "f_meas")
    return _scalar_or_array(arr * (cal.k1 + cal.k2) / cal.k2)


def fsr_measure(f_actual: Union[float, np.ndarray], cal: NodeCalibration = NodeCalibration()) -> Union[float, np.ndarray]:
    """F_meas = F * k2 / (k1 + k2)"""
    arr = _check_non_negative(f_actual, "f_actual")
    return _scalar_or_array(arr * cal.k2 / (cal.k1 + cal.k2))


@dataclass(frozen=True)
class StaticsModel:
    """합성기가 쓰는 고정 형상 정역학 묶음"""
    graph: TensegrityGraph
    positions: NodePositions
    equilibrium: EquilibriumState
    lengths: np.ndarray
    load_operator: np.ndarray

    @property
    def bar_preload_N(self) -> np.ndarray:
        """바별 평형 압축력 (양수)"""
        q = self.equilibrium.force_densities
        return -q * self.lengths

    def antipode(self, node: int) -> int:
        x = self.positions.coordinates
        return int(np.argmin(np.linalg.norm(x + x[node], axis=1)))

    def node_compression(self, external: np.ndarray) -> np.ndarray:
        """
        외력 시계열 (..., 12, 3) → 채널별 바 압축력 (..., 12), 0에서 잘림
        채널 i는 노드 i에 닿는 바의 압축력을 읽음
        """
        ext = np.asarray(external, dtype=float)
        flat = ext.reshape(ext.shape[:-2] + (-1,))
        delta = flat @ self.load_operator.T
        bar_idx = self.graph.bar_of_node
        compression = self.bar_preload_N[bar_idx] - delta[..., bar_idx]
        return np.clip(compression, 0.0, None)


@lru_cache(maxsize=8)
def build_statics_model(preload_N: float = 20.0, diameter_m: float = STRUCTURE_DIAMETER_M) -> StaticsModel:
    graph, pos = build_icosahedron_topology(diameter_m)
    eq = solve_force_densities(graph, pos, scale_N=preload_N)
    return StaticsModel(graph=graph, positions=pos, equilibrium=eq, lengths=member_lengths(graph, pos),
                        load_operator=external_load_operator(graph, pos))


def bar_cable_length_ratio(graph: TensegrityGraph, pos: NodePositions) -> float:
    lengths = member_lengths(graph, pos)
    return float(lengths[graph.bars].mean() / lengths[graph.cables].mean())


def structure_document(model: StaticsModel) -> Dict[str, Any]:
    """버전이 붙은 구조 JSON 문서 (report 명령과 structure 명령이 사용)"""
    graph, eq = model.graph, model.equilibrium
    q = eq.force_densities
    members = []
    for idx, member in enumerate(graph.members):
        members.append({
            "index": idx,
            "a": member.a,
            "b": member.b,
            "kind": member.kind.value,
            "length_m": float(model.lengths[idx]),
            "force_density_N_per_m": float(q[idx]),
            "axial_force_N": float(q[idx] * model.lengths[idx]),
        })
    return {
        "schema_version": STRUCTURE_DOCUMENT_VERSION,
        "nodes": [[float(v) for v in row] for row in model.positions.coordinates],
        "members": members,
        "diameter_m": model.positions.diameter,
        "mass_kg": STRUCTURE_MASS_KG,
        "preload_N": eq.scale_N,
        "equilibrium_residual_N": eq.residual,
        "self_stress_dimension": self_stress_dimension(graph, model.positions),
        "bar_cable_length_ratio": bar_cable_length_ratio(graph, model.positions),
        "calibration": {"k1_N_per_mm": DEFAULT_K1_N_PER_MM, "k2_N_per_mm": DEFAULT_K2_N_PER_MM},
    }


async def handle_structure(arguments: Dict[str, Any]) -> Dict[str, Any]:
    """구조/평형 JSON 문서 내보내기 도구"""
    out_str = arguments.get("out", "")
    if not out_str:
        raise UsageError("out argument is required")
    preload = float(arguments.get("preload_N", 20.0))
    diameter = float(arguments.get("diameter_m", STRUCTURE_DIAMETER_M))

    manifest = RunManifest(command="structure", config={"preload_N": preload, "diameter_m": diameter})
    model = build_statics_model(preload, diameter)
    document = structure_document(model)
    path = write_json(normalize_path(out_str), document)
    manifest.outputs.append(str(path))
    manifest.finish(manifest_path(path.parent, "structure"))
    logger.info("Structure document written to %s", path)
    return {
        "path": str(path),
        "self_stress_dimension": document["self_stress_dimension"],
        "bar_cable_length_ratio": document["bar_cable_length_ratio"],
        "equilibrium_residual_N": document["equilibrium_residual_N"],
    }
