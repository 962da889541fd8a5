"""
SMOTE 클래스 균형 맞추기
소수 클래스마다 같은 클래스 k-최근접 이웃과의 선분 위에 합성 샘플 생성
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial.distance import cdist

from tools.dataset import N_CLASSES, InteractionClass
from tools.errors import ClassTooSmallError, LengthMismatchError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_SMOTE_K = 5
_DISTANCE_CHUNK = 512


@dataclass(frozen=True)
class SmoteWarning:
    label: InteractionClass
    requested_k: int
    used_k: int

    @property
    def message(self) -> str:
        return (f"k={self.requested_k} clamped to {self.used_k} for class {self.label.slug} "
                f"({self.used_k + 1} members)")


@dataclass(frozen=True)
class BalancedDataset:
    """
    원본 행이 먼저(순서 그대로), 이어서 클래스 순서대로 합성 행
    합성 행 i = X[seed_index[i]] + lam[i] * (X[neighbor_index[i]] - X[seed_index[i]])
    (seed/neighbor 인덱스는 입력 행렬 기준, 원본 행은 -1)
    """
    X: np.ndarray
    y: np.ndarray
    synthetic: np.ndarray
    seed_index: np.ndarray
    neighbor_index: np.ndarray
    lam: np.ndarray
    target_count: int
    k: int
    warnings: List[SmoteWarning] = field(default_factory=list)
    # 입력에 한 행도 없어 균형을 맞추지 못한 클래스
    absent: List[InteractionClass] = field(default_factory=list)

    @property
    def class_counts(self) -> Dict[InteractionClass, int]:
        counts = np.bincount(self.y, minlength=N_CLASSES)
        return {c: int(counts[c]) for c in InteractionClass}

    @property
    def n_synthetic(self) -> int:
        return int(self.synthetic.sum())


def _nearest_same_class(Xc: np.ndarray, rows: np.ndarray, k: int) -> np.ndarray:
    """rows 각각의 k-최근접 이웃 (자기 자신 제외, 거리 동률은 낮은 인덱스 우선)"""
    table = np.empty((rows.size, k), dtype=int)
    for start in range(0, rows.size, _DISTANCE_CHUNK):
        chunk = rows[start:start + _DISTANCE_CHUNK]
        dist = cdist(Xc[chunk], Xc, "sqeuclidean")
        dist[np.arange(chunk.size), chunk] = np.inf
        table[start:start + chunk.size] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return table


def smote_balance(X: np.ndarray, y: np.ndarray, k: int = DEFAULT_SMOTE_K, rng_seed: int = 0) -> BalancedDataset:
    """
    모든 (존재하는) 클래스를 최다 클래스 개수까지 채움
    클래스마다 (seed, class) 파생 RNG를 써서 클래스 간 처리 순서와 무관하게 결정적
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LengthMismatchError(f"X {X.shape} and y {y.shape} do not align")
    if k < 1:
        raise UsageError(f"SMOTE k must be >= 1, got {k}")

    counts = np.bincount(y, minlength=N_CLASSES)
    target = int(counts.max()) if y.size else 0

    blocks_X, blocks_y = [X], [y]
    seeds, neighbors, lams = [np.full(y.size, -1)], [np.full(y.size, -1)], [np.full(y.size, np.nan)]
    warnings: List[SmoteWarning] = []
    absent = [c for c in InteractionClass if counts[c] == 0] if y.size else []
    if absent:
        logger.warning("SMOTE cannot synthesize class(es) with no members: %s", ", ".join(c.slug for c in absent))

    for c in InteractionClass:
        members = np.flatnonzero(y == c)
        n, missing = members.size, target - members.size
        if n == 0 or missing == 0:
            continue
        if n < 2:
            raise ClassTooSmallError(f"Class {c.slug} has {n} member; SMOTE needs at least 2")

        used_k = min(k, n - 1)
        if used_k < k:
            warning = SmoteWarning(label=c, requested_k=k, used_k=used_k)
            warnings.append(warning)
            logger.warning(warning.message)

        rng = np.random.default_rng([rng_seed, int(c)])
        Xc = X[members]
        # 시드는 무작위 순열을 순환 - 모든 원본이 고르게 쓰임
        seed_local = rng.permutation(n)[np.arange(missing) % n]
        unique_seeds, inverse = np.unique(seed_local, return_inverse=True)
        table = _nearest_same_class(Xc, unique_seeds, used_k)
        choice = rng.integers(0, used_k, size=missing)
        lam = rng.random(missing)
        neighbor_local = table[inverse, choice]

        blocks_X.append(Xc[seed_local] + lam[:, None] * (Xc[neighbor_local] - Xc[seed_local]))
        blocks_y.append(np.full(missing, int(c)))
        seeds.append(members[seed_local])
        neighbors.append(members[neighbor_local])
        lams.append(lam)
        logger.debug("SMOTE class %s: %d originals + %d synthetic (k=%d)", c.slug, n, missing, used_k)

    synthetic = np.concatenate([np.zeros(y.size, dtype=bool)] + [np.ones(b.size, dtype=bool) for b in blocks_y[1:]])
    return BalancedDataset(
        X=np.vstack(blocks_X),
        y=np.concatenate(blocks_y).astype(int),
        synthetic=synthetic,
        seed_index=np.concatenate(seeds).astype(int),
        neighbor_index=np.concatenate(neighbors).astype(int),
        lam=np.concatenate(lams),
        target_count=target,
        k=k,
        warnings=warnings,
        absent=absent,
    )


def smote_counts(counts: Dict[InteractionClass, int]) -> Dict[InteractionClass, int]:
    """균형을 맞추기 위해 클래스별로 추가될 합성 샘플 수"""
    target = max(counts.values()) if counts else 0
    return {c: (target - n if n > 0 else 0) for c, n in counts.items()}


def balance_or_passthrough(X: np.ndarray, y: np.ndarray, enabled: bool, k: int, rng_seed: Optional[int]) -> tuple:
    if not enabled:
        return X, y, []
    balanced = smote_balance(X, y, k=k, rng_seed=int(rng_seed or 0))
    return balanced.X, balanced.y, balanced.warnings
