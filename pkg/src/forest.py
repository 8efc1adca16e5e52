#!/usr/bin/env python3
"""
从零实现的决策树 / 随机森林

- CART 二叉树，Gini 不纯度，阈值取相邻不同取值的中点，x <= t 走左子树
- 每棵树使用有放回自助采样（n 次抽样），每个节点随机抽取 max_features 个候选特征；
  候选特征中找不到合法划分时继续检查其余特征
- 每棵树的随机数流由 (seed, 树编号) 派生，与并行调度顺序无关
- 预测：各树叶节点多数类投票，平票取标签值最小者
"""
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from logger import log_debug, log_info

MODEL_FORMAT = "cascade-ids/random-forest"
MODEL_VERSION = 1
# best_split 认为不纯度下降小于该值的划分无效
GAIN_EPS = 1e-12


class ForestError(ValueError):
    """森林模块通用错误"""


class TrainingError(ForestError):
    """训练失败"""


class PredictionError(ForestError):
    """预测失败（特征数不符或存在缺失值）"""


@dataclass
class TrainConfig:
    """
    随机森林训练参数

    batch_size 只影响预测时的分块大小，不改变任何预测结果。
    n_jobs 为训练/预测使用的线程数，同样不影响结果。
    """

    num_trees: int = 100
    max_features: Optional[int] = None
    min_samples_leaf: int = 1
    max_depth: Optional[int] = None
    bootstrap: bool = True
    seed: int = 0
    batch_size: int = 1000
    n_jobs: int = 1

    def resolved_max_features(self, n_features: int) -> int:
        """未指定时取 floor(log2 F) + 1"""
        if self.max_features is None:
            return min(n_features, int(math.floor(math.log2(n_features))) + 1)
        return int(self.max_features)

    def validate(self, n_features: int) -> None:
        if int(self.num_trees) < 1:
            raise TrainingError(f"num_trees 必须 >= 1，实际为 {self.num_trees}")
        mf = self.resolved_max_features(n_features)
        if not 1 <= mf <= n_features:
            raise TrainingError(f"max_features 必须在 [1, {n_features}]，实际为 {mf}")
        if int(self.min_samples_leaf) < 1:
            raise TrainingError(f"min_samples_leaf 必须 >= 1，实际为 {self.min_samples_leaf}")
        if self.max_depth is not None and int(self.max_depth) < 1:
            raise TrainingError(f"max_depth 必须 >= 1，实际为 {self.max_depth}")
        if int(self.batch_size) < 1:
            raise TrainingError(f"batch_size 必须 >= 1，实际为 {self.batch_size}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise TrainingError(f"seed 必须是 64 位无符号整数，实际为 {self.seed}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class SplitCandidate:
    """一次划分：特征下标、阈值、子节点加权 Gini"""

    feature: int
    threshold: float
    impurity: float


def gini(counts: Sequence[float]) -> float:
    """
    Gini 不纯度 1 - Σ p_i²

    Raises:
        ForestError: 计数全为 0 或为负
    """
    arr = np.asarray(counts, dtype=np.float64).reshape(-1)
    if (arr < 0).any():
        raise ForestError("类别计数不能为负")
    total = arr.sum()
    if total <= 0:
        raise ForestError("类别计数全为 0，Gini 无定义")
    p = arr / total
    return float(1.0 - np.dot(p, p))


def _midpoint(a: float, b: float) -> float:
    t = (a + b) / 2.0
    # 相邻浮点数时中点可能舍入到 b，此时退回 a 以保证 a <= t < b
    if not a <= t < b:
        t = a
    return float(t)


def _best_split_encoded(X: np.ndarray, y: np.ndarray, n_classes: int,
                        features: Sequence[int], min_samples_leaf: int = 1) -> Optional[SplitCandidate]:
    """零增益划分也会返回：完全生长的树靠它拆开 XOR 这类节点"""
    n = y.shape[0]
    if n < 2:
        return None
    total = np.bincount(y, minlength=n_classes).astype(np.float64)
    if np.count_nonzero(total) <= 1:
        return None
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    size_ok = (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)

    best: Optional[SplitCandidate] = None
    for f in features:
        x = X[:, f]
        order = np.argsort(x, kind="mergesort")
        xs = x[order]
        valid = (xs[:-1] < xs[1:]) & size_ok
        if not valid.any():
            continue
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = total - left
        g_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
        g_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
        weighted = (n_left * g_left + n_right * g_right) / n
        weighted[~valid] = np.inf
        i = int(np.argmin(weighted))
        if best is None or weighted[i] < best.impurity:
            best = SplitCandidate(int(f), _midpoint(float(xs[i]), float(xs[i + 1])), float(weighted[i]))
    return best


def best_split(X: np.ndarray, y: Sequence[int], candidate_features: Sequence[int],
               min_samples_leaf: int = 1) -> Optional[SplitCandidate]:
    """
    在候选特征上寻找加权子节点 Gini 最小的划分

    Args:
        X: (n, F) 特征矩阵
        y: 长度为 n 的标签
        candidate_features: 候选特征下标
        min_samples_leaf: 子节点最少样本数

    Returns:
        SplitCandidate 或 None（节点已纯、没有合法阈值，或最优划分不降低不纯度）
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise ForestError("best_split 需要非空样本")
    classes, encoded = np.unique(y, return_inverse=True)
    encoded = encoded.reshape(-1)
    split = _best_split_encoded(X, encoded, len(classes), list(candidate_features), min_samples_leaf)
    if split is None or split.impurity >= gini(np.bincount(encoded)) - GAIN_EPS:
        return None
    return split


# ============ 决策树 ============

@dataclass
class DecisionTree:
    """
    扁平数组表示的二叉树

    feature[i] == -1 表示叶节点；value[i] 为该节点的类别计数向量（按标签空间顺序）。
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def constant(cls, class_index: int, n_classes: int, count: int = 1) -> "DecisionTree":
        """只有一个纯叶节点的树"""
        value = np.zeros((1, n_classes), dtype=np.int64)
        value[0, class_index] = count
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), value)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if self.n_nodes else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """每行落到的叶节点编号"""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.nonzero(self.feature[node] >= 0)[0]
        while active.size:
            current = node[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        """叶节点多数类（标签空间中的下标，平票取较小下标）"""
        return np.argmax(self.value[self.apply(X)], axis=1)

    def to_dict(self) -> Dict:
        return {
            "feature": [int(v) for v in self.feature],
            "threshold": [float(v) for v in self.threshold],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "value": [[int(c) for c in row] for row in self.value],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DecisionTree":
        return cls(
            np.asarray(data["feature"], dtype=np.int64),
            np.asarray(data["threshold"], dtype=np.float64),
            np.asarray(data["left"], dtype=np.int64),
            np.asarray(data["right"], dtype=np.int64),
            np.asarray(data["value"], dtype=np.int64),
        )


def build_tree(X: np.ndarray, y: np.ndarray, n_classes: int, cfg: TrainConfig,
               rng: np.random.Generator) -> DecisionTree:
    """
    在 (X, y) 上生长一棵树

    Args:
        X: 训练特征（已完成自助采样）
        y: 编码后的标签 0..n_classes-1
        n_classes: 标签空间大小
        cfg: 训练参数
        rng: 该树专用的随机数发生器
    """
    n_features = X.shape[1]
    max_features = cfg.resolved_max_features(n_features)
    min_leaf = int(cfg.min_samples_leaf)
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[np.ndarray] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(None)
        return len(feature) - 1

    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes)
        value[node] = counts
        if (np.count_nonzero(counts) <= 1
                or idx.shape[0] < 2 * min_leaf
                or (cfg.max_depth is not None and depth >= int(cfg.max_depth))):
            continue

        order = rng.permutation(n_features)
        Xn, yn = X[idx], y[idx]
        split = _best_split_encoded(Xn, yn, n_classes, order[:max_features], min_leaf)
        if split is None and max_features < n_features:
            split = _best_split_encoded(Xn, yn, n_classes, order[max_features:], min_leaf)
        if split is None:
            continue

        goes_left = Xn[:, split.feature] <= split.threshold
        left_id, right_id = new_node(), new_node()
        feature[node] = split.feature
        threshold[node] = split.threshold
        left[node] = left_id
        right[node] = right_id
        stack.append((right_id, idx[~goes_left], depth + 1))
        stack.append((left_id, idx[goes_left], depth + 1))

    return DecisionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.vstack(value).astype(np.int64),
    )


# ============ 随机森林 ============

def training_fingerprint(X: np.ndarray, y: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    return digest.hexdigest()


@dataclass
class RandomForestModel:
    """训练好的随机森林；训练后不再修改，可在线程间共享"""

    trees: List[DecisionTree]
    label_space: Tuple[int, ...]
    config: TrainConfig
    fingerprint: str
    n_features: int

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise PredictionError(f"特征数应为 {self.n_features}，实际输入形状为 {X.shape}")
        if np.isnan(X).any():
            raise PredictionError("输入含缺失值，请先插补")
        return X

    def _votes_chunk(self, X: np.ndarray) -> np.ndarray:
        votes = np.zeros((X.shape[0], len(self.label_space)), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict_index(X)), 1)
        return votes

    def vote_counts(self, X: np.ndarray) -> np.ndarray:
        """(n, k) 票数矩阵，按 batch_size 分块计算"""
        X = self._check(X)
        if X.shape[0] == 0:
            return np.zeros((0, len(self.label_space)), dtype=np.int64)
        step = int(self.config.batch_size)
        chunks = [X[i:i + step] for i in range(0, X.shape[0], step)]
        workers = max(1, int(self.config.n_jobs))
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(self._votes_chunk, chunks))
        else:
            parts = [self._votes_chunk(c) for c in chunks]
        return np.vstack(parts)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """多数票标签；平票取较小标签"""
        labels = np.asarray(self.label_space, dtype=np.int64)
        return labels[np.argmax(self.vote_counts(X), axis=1)]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """(n, k) 票数占比，列顺序为 label_space"""
        return self.vote_counts(X) / float(len(self.trees))

    # ---- 序列化 ----

    def to_dict(self) -> Dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "label_space": [int(v) for v in self.label_space],
            "n_features": int(self.n_features),
            "config": self.config.to_dict(),
            "fingerprint": self.fingerprint,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "RandomForestModel":
        if data.get("format") != MODEL_FORMAT:
            raise ForestError(f"不是随机森林模型文档: format={data.get('format')!r}")
        if data.get("version") != MODEL_VERSION:
            raise ForestError(f"不支持的模型版本: {data.get('version')!r}")
        trees = [DecisionTree.from_dict(t) for t in data["trees"]]
        label_space = tuple(int(v) for v in data["label_space"])
        for tree in trees:
            if tree.value.shape[1] != len(label_space):
                raise ForestError("树的类别数与标签空间不一致")
        return cls(trees, label_space, TrainConfig.from_dict(data["config"]),
                   data.get("fingerprint", ""), int(data["n_features"]))


def train_forest(X: np.ndarray, y: Sequence[int], cfg: TrainConfig) -> RandomForestModel:
    """
    训练随机森林

    Args:
        X: (n, F) 完整特征矩阵
        y: 长度为 n 的标签
        cfg: 训练参数

    Returns:
        RandomForestModel

    Raises:
        TrainingError: 样本为空、含缺失值或参数非法
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("训练样本为空")
    if X.shape[0] != y.shape[0]:
        raise TrainingError(f"特征行数 {X.shape[0]} 与标签数 {y.shape[0]} 不一致")
    if np.isnan(X).any():
        raise TrainingError("训练样本含缺失值，请先插补")
    cfg.validate(X.shape[1])

    label_space, encoded = np.unique(y, return_inverse=True)
    encoded = encoded.reshape(-1)
    n_classes = len(label_space)
    n = X.shape[0]

    def grow(tree_index: int) -> DecisionTree:
        rng = np.random.default_rng([int(cfg.seed), tree_index])
        rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        return build_tree(X[rows], encoded[rows], n_classes, cfg, rng)

    workers = max(1, int(cfg.n_jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(grow, range(int(cfg.num_trees))))
    else:
        trees = [grow(i) for i in range(int(cfg.num_trees))]

    model = RandomForestModel(trees, tuple(int(v) for v in label_space), cfg,
                              training_fingerprint(X, y), X.shape[1])
    log_debug(f"随机森林训练完成: {len(trees)} 棵树, {n} 条样本, 标签 {model.label_space}, "
              f"平均节点数 {np.mean([t.n_nodes for t in trees]):.1f}")
    return model


def predict(m: RandomForestModel, features: np.ndarray) -> Union[int, np.ndarray]:
    """
    多数票预测

    一维输入（单条记录）返回 int，二维输入返回标签数组。
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        return int(m.predict(X.reshape(1, -1))[0])
    return m.predict(X)


def predict_proba(m: RandomForestModel, features: np.ndarray) -> Union[Dict[int, float], np.ndarray]:
    """
    票数占比

    一维输入返回 {标签: 占比}，二维输入返回 (n, k) 矩阵（列顺序为 label_space）。
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        row = m.predict_proba(X.reshape(1, -1))[0]
        return {label: float(p) for label, p in zip(m.label_space, row)}
    return m.predict_proba(X)


def save_forest(m: RandomForestModel, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(m.to_dict(), f)
    log_info(f"模型已保存: {path}")


def load_forest(path: Union[str, Path]) -> RandomForestModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ForestError(f"模型文件 {path} 解析失败: {e}") from None
    return RandomForestModel.from_dict(data)
