"""
직접 구현한 다중 클래스 KNN / 랜덤 포레스트
두 모델 모두 4개 클래스에 대한 확률 벡터를 출력 (AUC 계산용)
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from tools.dataset import N_CLASSES, InteractionClass
from tools.errors import (DimensionMismatchError, EmptyResultError, InvalidDistributionError, KOutOfRangeError,
                          LengthMismatchError, UsageError)

logger = logging.getLogger(__name__)

MODEL_DOCUMENT_VERSION = 1
PROBA_TOLERANCE = 1e-9
_PREDICT_CHUNK = 1024
_SPLIT_BLOCK_CELLS = 2_000_000
_IMPURITY_EPS = 1e-12


class KnnParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(5, ge=1)


class ForestParams(BaseModel):
    """max_features: "sqrt" = ceil(√d), None = 전체 특징"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_trees: int = Field(100, ge=1)
    max_features: Union[Literal["sqrt"], int, None] = "sqrt"
    min_samples_leaf: int = Field(1, ge=1)
    max_depth: Optional[int] = Field(None, ge=0)
    bootstrap: bool = True
    n_jobs: int = 1


def _check_train(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2:
        raise DimensionMismatchError(f"Training matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptyResultError("Training set is empty")
    if X.shape[0] != y.shape[0]:
        raise LengthMismatchError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= N_CLASSES:
        raise UsageError(f"Labels must be class encodings 0..{N_CLASSES - 1}")
    return X, y


def _check_query(X: np.ndarray, n_features: int) -> Tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != n_features:
        raise DimensionMismatchError(f"Query has {X.shape[1]} features, model expects {n_features}")
    return X, single


# ==================== KNN ====================

@dataclass(frozen=True)
class KnnModel:
    """지연 학습 - 학습 데이터를 그대로 보관"""
    X: np.ndarray
    y: np.ndarray
    k: int

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])


def knn_fit(X: np.ndarray, y: np.ndarray, k: int = 5) -> KnnModel:
    X, y = _check_train(X, y)
    if not 1 <= k <= X.shape[0]:
        raise KOutOfRangeError(f"k={k} must be within [1, {X.shape[0]}]")
    return KnnModel(X=X.copy(), y=y.copy(), k=int(k))


def knn_predict_proba(model: KnnModel, X: np.ndarray) -> np.ndarray:
    """
    k개 이웃의 클래스 득표 비율
    이웃 순서: 거리 → 클래스 인코딩 → 학습 인덱스
    """
    X, single = _check_query(X, model.n_features)
    n_train = model.X.shape[0]
    index = np.arange(n_train)
    proba = np.zeros((X.shape[0], N_CLASSES))
    for start in range(0, X.shape[0], _PREDICT_CHUNK):
        chunk = X[start:start + _PREDICT_CHUNK]
        dist = cdist(chunk, model.X, "sqeuclidean")
        rows = chunk.shape[0]
        order = np.lexsort((np.broadcast_to(index, dist.shape), np.broadcast_to(model.y, dist.shape), dist), axis=-1)
        nearest = model.y[order[:, :model.k]]
        block = np.zeros((rows, N_CLASSES))
        np.add.at(block, (np.repeat(np.arange(rows), model.k), nearest.ravel()), 1.0)
        proba[start:start + rows] = block / model.k
    return proba[0] if single else proba


# ==================== 결정 트리 ====================

@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


@dataclass(frozen=True)
class Leaf:
    counts: Tuple[float, ...]


TreeNode = Union[Split, Leaf]


@dataclass(frozen=True)
class DecisionTree:
    """
    평탄 배열 트리 - 노드 0이 루트, feature < 0이면 리프
    x[feature] <= threshold 이면 왼쪽
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def distribution(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, totals, out=np.zeros_like(self.counts), where=totals > 0)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """행마다 도달한 리프 인덱스"""
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            feat = self.feature[node]
            rows = np.flatnonzero(feat >= 0)
            if rows.size == 0:
                return node
            current = node[rows]
            go_left = X[rows, feat[rows]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])

    def root(self, node: int = 0) -> TreeNode:
        if self.feature[node] < 0:
            return Leaf(counts=tuple(float(c) for c in self.counts[node]))
        return Split(feature=int(self.feature[node]), threshold=float(self.threshold[node]),
                     left=self.root(int(self.left[node])), right=self.root(int(self.right[node])))


def gini(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=-1)
    safe = np.where(total > 0, total, 1.0)
    # 빈 노드는 불순도 0
    return np.where(total > 0, 1.0 - ((counts / safe[..., None]) ** 2).sum(axis=-1), 0.0)


def best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray, min_samples_leaf: int
               ) -> Optional[Tuple[int, float, float]]:
    """
    가중 Gini가 최소인 (feature, threshold, impurity)
    후보 임계값: 정렬된 고유값 사이 중점
    동률: 낮은 특징 인덱스, 이어서 낮은 임계값
    부모보다 불순도가 줄지 않으면 None
    """
    n = y.size
    onehot = np.eye(N_CLASSES)[y]
    parent = float(gini(onehot.sum(axis=0)))
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    size_ok = (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)

    best: Optional[Tuple[int, float, float]] = None
    block = max(1, _SPLIT_BLOCK_CELLS // max(1, n * N_CLASSES))
    for start in range(0, features.size, block):
        feats = features[start:start + block]
        cols = X[:, feats]
        order = np.argsort(cols, axis=0, kind="stable")
        xs = np.take_along_axis(cols, order, axis=0)
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = onehot.sum(axis=0) - left
        score = (n_left * gini(left) + n_right * gini(right)) / n
        valid = (xs[:-1] < xs[1:]) & size_ok
        score = np.where(valid, score, np.inf)
        flat = int(np.argmin(score.T))
        f_pos, i = divmod(flat, n - 1)
        value = float(score[i, f_pos])
        if not np.isfinite(value) or (best is not None and value >= best[2]):
            continue
        lo, hi = xs[i, f_pos], xs[i + 1, f_pos]
        threshold = (lo + hi) / 2.0
        if threshold >= hi:
            threshold = lo
        best = (int(feats[f_pos]), float(threshold), value)

    if best is None or best[2] >= parent - _IMPURITY_EPS:
        return None
    return best


def resolve_max_features(max_features: Union[str, int, None], n_features: int) -> int:
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if isinstance(max_features, int) and max_features >= 1:
        return min(max_features, n_features)
    raise UsageError(f"Invalid max_features: {max_features!r}")


def grow_tree(X: np.ndarray, y: np.ndarray, max_features: int, min_samples_leaf: int,
              max_depth: Optional[int], rng: np.random.Generator) -> DecisionTree:
    """너비 우선으로 노드 확장 - RNG 소비 순서가 고정됨"""
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    counts: List[np.ndarray] = []

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=N_CLASSES).astype(float))
        return len(feature) - 1

    queue = deque([(new_node(np.arange(y.size)), np.arange(y.size), 0)])
    n_features = X.shape[1]
    while queue:
        node, idx, depth = queue.popleft()
        if np.count_nonzero(counts[node]) <= 1 or idx.size < 2 * min_samples_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        feats = np.sort(rng.choice(n_features, size=max_features, replace=False))
        split = best_split(X[idx], y[idx], feats, min_samples_leaf)
        if split is None:
            continue
        f, thr, _ = split
        goes_left = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left_idx, right_idx = idx[goes_left], idx[~goes_left]
        left[node] = new_node(left_idx)
        queue.append((left[node], left_idx, depth + 1))
        right[node] = new_node(right_idx)
        queue.append((right[node], right_idx, depth + 1))

    return DecisionTree(feature=np.array(feature, dtype=int), threshold=np.array(threshold, dtype=float),
                        left=np.array(left, dtype=int), right=np.array(right, dtype=int),
                        counts=np.array(counts, dtype=float))


# ==================== 랜덤 포레스트 ====================

@dataclass(frozen=True)
class ForestModel:
    trees: Tuple[DecisionTree, ...]
    n_features: int
    params: ForestParams
    rng_seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _fit_one_tree(X: np.ndarray, y: np.ndarray, params: ForestParams, rng_seed: int, tree_index: int) -> DecisionTree:
    rng = np.random.default_rng([rng_seed, tree_index])
    n = y.size
    sample = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
    return grow_tree(X[sample], y[sample], resolve_max_features(params.max_features, X.shape[1]),
                     params.min_samples_leaf, params.max_depth, rng)


def rf_fit(X: np.ndarray, y: np.ndarray, params: Optional[ForestParams] = None, rng_seed: int = 0,
           **overrides: Any) -> ForestModel:
    """트리마다 (seed, tree index) 파생 RNG - 병렬 실행 결과가 직렬과 동일"""
    X, y = _check_train(X, y)
    params = params or ForestParams()
    if overrides:
        params = ForestParams(**{**params.model_dump(), **overrides})
    trees = Parallel(n_jobs=params.n_jobs)(
        delayed(_fit_one_tree)(X, y, params, rng_seed, t) for t in range(params.n_trees))
    logger.debug("Fitted forest: %d trees, %d features", len(trees), X.shape[1])
    return ForestModel(trees=tuple(trees), n_features=X.shape[1], params=params, rng_seed=int(rng_seed))


def rf_predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """트리별 리프 클래스 빈도 분포의 평균"""
    X, single = _check_query(X, model.n_features)
    proba = np.zeros((X.shape[0], N_CLASSES))
    for tree in model.trees:
        proba += tree.distribution[tree.apply(X)]
    proba /= model.n_trees
    return proba[0] if single else proba


def tree_votes(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """(n_trees, n) 트리별 예측 라벨"""
    X, _ = _check_query(X, model.n_features)
    return np.array([np.argmax(tree.distribution[tree.apply(X)], axis=1) for tree in model.trees])


def predict_label(proba: np.ndarray) -> Union[InteractionClass, np.ndarray]:
    """argmax, 동률이면 낮은 클래스 인코딩"""
    arr = np.asarray(proba, dtype=float)
    rows = np.atleast_2d(arr)
    if rows.shape[1] != N_CLASSES:
        raise InvalidDistributionError(f"Probability vector must have {N_CLASSES} entries")
    if (rows < -PROBA_TOLERANCE).any() or (np.abs(rows.sum(axis=1) - 1.0) > PROBA_TOLERANCE).any():
        raise InvalidDistributionError("Probabilities must be non-negative and sum to 1")
    labels = np.argmax(rows, axis=1)
    return InteractionClass(int(labels[0])) if arr.ndim == 1 else labels


# ==================== 모델 문서 (JSON) ====================

def _tree_record(tree: DecisionTree, node: int = 0) -> Dict[str, Any]:
    if tree.feature[node] < 0:
        return {"leaf": [float(c) for c in tree.counts[node]]}
    return {
        "feature": int(tree.feature[node]),
        "threshold": float(tree.threshold[node]),
        "left": _tree_record(tree, int(tree.left[node])),
        "right": _tree_record(tree, int(tree.right[node])),
    }


def _tree_from_record(record: Dict[str, Any]) -> DecisionTree:
    feature, threshold, left, right, counts = [], [], [], [], []
    queue = deque([(record, None, None)])
    while queue:
        item, parent, side = queue.popleft()
        node = len(feature)
        if parent is not None:
            (left if side == "left" else right)[parent] = node
        if "leaf" in item:
            feature.append(-1)
            threshold.append(0.0)
            counts.append(item["leaf"])
        else:
            feature.append(int(item["feature"]))
            threshold.append(float(item["threshold"]))
            counts.append([0.0] * N_CLASSES)
            queue.append((item["left"], node, "left"))
            queue.append((item["right"], node, "right"))
        left.append(-1)
        right.append(-1)
    return DecisionTree(feature=np.array(feature, dtype=int), threshold=np.array(threshold, dtype=float),
                        left=np.array(left, dtype=int), right=np.array(right, dtype=int),
                        counts=np.array(counts, dtype=float))


def model_document(model: Union[KnnModel, ForestModel], extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    if isinstance(model, KnnModel):
        body = {"algorithm": "knn", "k": model.k, "X": model.X.tolist(), "y": model.y.tolist()}
    else:
        body = {
            "algorithm": "rf",
            "n_features": model.n_features,
            "params": model.params.model_dump(),
            "rng_seed": model.rng_seed,
            "trees": [_tree_record(tree) for tree in model.trees],
        }
    document = {"schema_version": MODEL_DOCUMENT_VERSION, **body}
    if extra:
        document.update(extra)
    return document


def model_from_document(document: Dict[str, Any]) -> Union[KnnModel, ForestModel]:
    version = document.get("schema_version")
    if version != MODEL_DOCUMENT_VERSION:
        raise UsageError(f"Unsupported model document version: {version}")
    algorithm = document.get("algorithm")
    if algorithm == "knn":
        return knn_fit(np.array(document["X"], dtype=float), np.array(document["y"], dtype=int), int(document["k"]))
    if algorithm == "rf":
        trees = tuple(_tree_from_record(record) for record in document["trees"])
        return ForestModel(trees=trees, n_features=int(document["n_features"]),
                           params=ForestParams(**document["params"]), rng_seed=int(document["rng_seed"]))
    raise UsageError(f"Unknown model algorithm: {algorithm!r}")


def predict_proba(model: Union[KnnModel, ForestModel], X: np.ndarray) -> np.ndarray:
    if isinstance(model, KnnModel):
        return knn_predict_proba(model, X)
    return rf_predict_proba(model, X)
