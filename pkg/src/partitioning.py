#!/usr/bin/env python3
"""
分层三等分与训练/测试折

- 以 35+1 级的 specified 标签分层
- 每个标签的成员按种子打乱后轮转分配到三个分片，轮转指针跨标签延续，
  因此每个标签在各分片的数量相差不超过 1，分片总大小也相差不超过 1
- 第 i 折用第 i 个分片测试，其余两个分片训练
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import yaml

from ingestion import Dataset, load_dataset
from logger import log_info

N_SPLITS = 3


class PartitionError(ValueError):
    """分片结构错误（重叠或遗漏下标）"""


@dataclass(frozen=True)
class Split:
    """数据集的一个分片（升序下标）"""

    indices: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Fold:
    """训练/测试折"""

    fold_id: int
    train: Tuple[int, ...]
    test: Tuple[int, ...]

    @property
    def ratio(self) -> float:
        """训练集占比"""
        total = len(self.train) + len(self.test)
        return len(self.train) / total if total else 0.0


def stratified_split3(d: Union[Dataset, Sequence[int]], seed: int) -> Tuple[Split, Split, Split]:
    """
    分层三等分

    Args:
        d: 数据集（按 specified 标签分层），或直接给出标签序列
        seed: 随机种子

    Returns:
        tuple: 三个互不相交、并集覆盖全部下标的分片
    """
    if isinstance(d, Dataset):
        if not d.is_complete:
            raise PartitionError("数据集仍有缺失值，请先插补再分片")
        labels = np.asarray(d.subclass)
    else:
        labels = np.asarray(d, dtype=np.int64)

    rng = np.random.default_rng(seed)
    order = rng.permutation(labels.shape[0])
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    pointer = 0
    for level in np.unique(labels):
        members = order[labels[order] == level]
        assignment[members] = (pointer + np.arange(members.shape[0])) % N_SPLITS
        pointer = (pointer + members.shape[0]) % N_SPLITS

    splits = tuple(
        Split(tuple(int(i) for i in np.nonzero(assignment == k)[0]))
        for k in range(N_SPLITS)
    )
    log_info(f"分层分片完成: 大小 {[len(s) for s in splits]} (seed={seed})")
    return splits


def make_folds(splits: Sequence[Split]) -> Tuple[Fold, Fold, Fold]:
    """
    由三个分片构造三折

    Raises:
        PartitionError: 分片数量不是 3、分片重叠或下标不连续
    """
    if len(splits) != N_SPLITS:
        raise PartitionError(f"需要 {N_SPLITS} 个分片，实际 {len(splits)} 个")
    all_indices = [i for s in splits for i in s.indices]
    total = len(all_indices)
    if len(set(all_indices)) != total:
        raise PartitionError("分片之间存在重复下标")
    if set(all_indices) != set(range(total)):
        raise PartitionError(f"分片下标没有覆盖 0..{total - 1}")

    folds = []
    for k in range(N_SPLITS):
        train = sorted(i for m, s in enumerate(splits) if m != k for i in s.indices)
        folds.append(Fold(fold_id=k + 1, train=tuple(train), test=tuple(splits[k].indices)))
    return tuple(folds)


def split_deviation(labels: Sequence[int], splits: Sequence[Split]) -> int:
    """各标签在分片间的最大计数差"""
    labels = np.asarray(labels)
    worst = 0
    for level in np.unique(labels):
        counts = [int((labels[list(s.indices)] == level).sum()) if len(s) else 0 for s in splits]
        worst = max(worst, max(counts) - min(counts))
    return worst


# ============ 清单读写 ============

def write_index_list(indices: Sequence[int], path: Union[str, Path]) -> None:
    """每行一个整数"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i in indices:
            f.write(f"{int(i)}\n")


def read_index_list(path: Union[str, Path]) -> Tuple[int, ...]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            return tuple(int(line) for line in f if line.strip())
        except ValueError as e:
            raise PartitionError(f"下标清单 {path} 格式错误: {e}") from None


def write_partition(d: Dataset, dataset_path: Union[str, Path], out_dir: Union[str, Path],
                    seed: int) -> List[Path]:
    """
    分片并写出三个分片清单、三个折清单

    Returns:
        list: 三个折清单文件路径
    """
    out = Path(out_dir)
    splits = stratified_split3(d, seed)
    folds = make_folds(splits)
    for k, split in enumerate(splits, 1):
        write_index_list(split.indices, out / f"split_{k}.txt")

    fingerprint = d.fingerprint()
    manifests = []
    for fold in folds:
        write_index_list(fold.train, out / f"fold_{fold.fold_id}_train.txt")
        write_index_list(fold.test, out / f"fold_{fold.fold_id}_test.txt")
        manifest = {
            "fold_id": fold.fold_id,
            "dataset": str(Path(dataset_path).resolve()),
            "fingerprint": fingerprint,
            "seed": int(seed),
            "train": f"fold_{fold.fold_id}_train.txt",
            "test": f"fold_{fold.fold_id}_test.txt",
            "sizes": {"train": len(fold.train), "test": len(fold.test)},
        }
        path = out / f"fold_{fold.fold_id}.yml"
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(manifest, f, allow_unicode=True, sort_keys=False)
        manifests.append(path)

    summary = {
        "dataset": str(Path(dataset_path).resolve()),
        "fingerprint": fingerprint,
        "seed": int(seed),
        "split_sizes": [len(s) for s in splits],
        "max_label_deviation": split_deviation(d.subclass, splits),
    }
    with open(out / "split_manifest.yml", "w", encoding="utf-8") as f:
        yaml.safe_dump(summary, f, allow_unicode=True, sort_keys=False)
    return manifests


def load_fold(manifest_path: Union[str, Path]) -> Tuple[Dataset, Dataset, Dict]:
    """
    读取折清单，返回 (训练视图, 测试视图, 清单内容)

    Raises:
        PartitionError: 清单不完整或数据集指纹不符
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = yaml.safe_load(f) or {}
    for key in ("dataset", "train", "test"):
        if key not in manifest:
            raise PartitionError(f"折清单 {manifest_path} 缺少字段 {key}")

    base = manifest_path.parent
    dataset = load_dataset(manifest["dataset"])
    expected = manifest.get("fingerprint")
    if expected and expected != dataset.fingerprint():
        raise PartitionError(f"数据集 {manifest['dataset']} 与折清单记录的指纹不一致")
    train = read_index_list(base / manifest["train"])
    test = read_index_list(base / manifest["test"])
    if set(train) & set(test):
        raise PartitionError("折清单的训练集与测试集有交集")
    n = len(dataset)
    if any(i < 0 or i >= n for i in train + test):
        raise PartitionError("折清单中的下标超出数据集范围")
    return dataset.view(train), dataset.view(test), manifest
