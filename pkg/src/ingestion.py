#!/usr/bin/env python3
"""
数据集读写与合成数据生成

CSV 约定：
- UTF-8，逗号分隔，首行为表头（17 个特征名 + binary, categorized, specified）
- 缺失值写为空字段，读取时 "?" 也视为缺失
- 写出时使用 LF 换行，数值使用最短可回读的十进制表示
"""
import hashlib
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from logger import log_debug, log_info, log_warning
from taxonomy import (
    DOS_CATEGORY,
    GAS_PIPELINE_SCHEMA,
    LABEL_COLUMNS,
    PUBLISHED_CATEGORY_COUNTS,
    PUBLISHED_SUBCLASS_COUNTS,
    TAXONOMY,
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
    Record,
    Taxonomy,
    feature_violations,
    label_violations,
)

PROVENANCES = ("real", "synthetic", "imputed")

MISSING_TOKENS = ("", "?")

Source = Union[str, Path, BinaryIO]


class LoadError(ValueError):
    """数据文件格式错误；row 为出错的数据行号（从 1 开始，不含表头）"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"第 {row} 行数据: {message}"
        super().__init__(message)


# ============ 数据集 ============

class Dataset:
    """
    列式存储的记录集合

    features 为 (n, 17) 的 float64 矩阵，缺失值为 NaN；三个标签各为 int64 向量。
    构造后所有数组只读。
    """

    def __init__(self, features: np.ndarray, binary: np.ndarray, category: np.ndarray,
                 subclass: np.ndarray, schema: FeatureSchema = GAS_PIPELINE_SCHEMA,
                 provenance: str = "real"):
        features = np.array(features, dtype=np.float64, copy=True)
        if features.ndim != 2 or features.shape[1] != len(schema):
            if features.size == 0:
                features = features.reshape(0, len(schema))
            else:
                raise ValueError(f"特征矩阵形状应为 (n, {len(schema)})，实际为 {features.shape}")
        n = features.shape[0]
        labels = []
        for name, values in zip(LABEL_COLUMNS, (binary, category, subclass)):
            arr = np.array(values, dtype=np.int64, copy=True).reshape(-1)
            if arr.shape[0] != n:
                raise ValueError(f"标签列 {name} 长度 {arr.shape[0]} 与特征行数 {n} 不一致")
            arr.setflags(write=False)
            labels.append(arr)
        if provenance not in PROVENANCES:
            raise ValueError(f"未知数据来源标记: {provenance}")
        features.setflags(write=False)
        self.schema = schema
        self.features = features
        self.binary, self.category, self.subclass = labels
        self.provenance = provenance

    def __len__(self) -> int:
        return self.features.shape[0]

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, provenance={self.provenance!r})"

    @classmethod
    def empty(cls, schema: FeatureSchema = GAS_PIPELINE_SCHEMA, provenance: str = "real") -> "Dataset":
        return cls(np.empty((0, len(schema))), [], [], [], schema, provenance)

    def record(self, i: int) -> Record:
        """第 i 条记录（缺失值为 None）"""
        values = [None if math.isnan(v) else float(v) for v in self.features[i]]
        return Record(values, int(self.binary[i]), int(self.category[i]), int(self.subclass[i]))

    def records(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield self.record(i)

    def view(self, indices: Sequence[int]) -> "Dataset":
        """按下标取子集（保持给定顺序）"""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[idx], self.binary[idx], self.category[idx],
                       self.subclass[idx], self.schema, self.provenance)

    def with_features(self, features: np.ndarray, provenance: str) -> "Dataset":
        """替换特征矩阵、保留标签"""
        return Dataset(features, self.binary, self.category, self.subclass, self.schema, provenance)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.features)

    @property
    def is_complete(self) -> bool:
        return not bool(self.missing.any())

    def equals(self, other: "Dataset") -> bool:
        """逐字段比较（缺失位置必须一致）；不比较 provenance"""
        return (
            self.schema.names == other.schema.names
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features, equal_nan=True)
            and np.array_equal(self.binary, other.binary)
            and np.array_equal(self.category, other.category)
            and np.array_equal(self.subclass, other.subclass)
        )

    def fingerprint(self) -> str:
        """数据内容的 sha256 摘要"""
        digest = hashlib.sha256()
        digest.update("|".join(self.schema.names).encode("utf-8"))
        digest.update(np.ascontiguousarray(self.missing).tobytes())
        digest.update(np.ascontiguousarray(np.nan_to_num(self.features, nan=0.0)).tobytes())
        for arr in (self.binary, self.category, self.subclass):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def histogram(self, column: str = "specified") -> Dict[int, int]:
        """某个标签列的取值计数"""
        values = {"binary": self.binary, "categorized": self.category, "specified": self.subclass}[column]
        labels, counts = np.unique(values, return_counts=True)
        return {int(k): int(v) for k, v in zip(labels, counts)}


def dataset_violations(d: Dataset, taxonomy: Taxonomy = TAXONOMY,
                       allow_missing: bool = True) -> List[Tuple[int, str]]:
    """
    向量化的整表校验

    Args:
        d: 数据集
        allow_missing: 是否允许载荷特征缺失（插补前允许）

    Returns:
        list: (行下标, 违反描述)，按行排序
    """
    bad_rows: Dict[int, List[str]] = {}
    missing = d.missing
    for j, spec in enumerate(d.schema):
        col = d.features[:, j]
        allowed_missing = spec.missable and allow_missing
        suspicious = np.zeros(len(d), dtype=bool)
        if not allowed_missing:
            suspicious |= missing[:, j]
        observed = ~missing[:, j]
        suspicious |= observed & ~np.isfinite(col)
        if spec.domain is not None:
            suspicious |= observed & ~np.isin(col, spec.domain)
        for i in np.nonzero(suspicious)[0]:
            value = None if missing[i, j] else float(col[i])
            messages = feature_violations(spec.name, spec, value) or [f"{spec.name} must not be missing"]
            bad_rows.setdefault(int(i), []).extend(messages)

    lookup = np.asarray(taxonomy.lookup_table(), dtype=np.int64)
    sub = d.subclass
    in_range = (sub >= 0) & (sub <= taxonomy.max_subclass)
    owner = np.where(in_range, lookup[np.clip(sub, 0, taxonomy.max_subclass)], -1)
    label_bad = (
        ~np.isin(d.binary, (0, 1))
        | (d.category < 0) | (d.category > taxonomy.max_category)
        | ~in_range
        | ((d.binary == 0) != (d.category == 0))
        | ((d.category == 0) != (sub == 0))
        | (owner != d.category)
    )
    for i in np.nonzero(label_bad)[0]:
        problems = label_violations(int(d.binary[i]), int(d.category[i]), int(sub[i]), taxonomy)
        bad_rows.setdefault(int(i), []).extend(problems)
    return [(i, "; ".join(bad_rows[i])) for i in sorted(bad_rows)]


# ============ CSV 读写 ============

def _open_text(source: Source) -> io.TextIOBase:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def load_dataset(source: Source, schema: FeatureSchema = GAS_PIPELINE_SCHEMA,
                 provenance: str = "real", taxonomy: Taxonomy = TAXONOMY) -> Dataset:
    """
    读取 CSV 数据集

    Args:
        source: 文件路径或二进制流
        schema: 特征定义
        provenance: 数据来源标记

    Returns:
        Dataset: 每个数据行对应一条记录

    Raises:
        LoadError: 表头不符、列数错误、数值无法解析或标签不一致
    """
    expected = schema.header
    stream = _open_text(source)
    try:
        frame = pd.read_csv(
            stream,
            dtype=str,
            keep_default_na=False,
            na_values=[],
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        raise LoadError("文件为空，缺少表头") from None
    except UnicodeDecodeError as e:
        raise LoadError(f"不是合法的 UTF-8 文本: {e.reason}") from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        row = int(match.group(1)) - 1 if match else None
        raise LoadError(f"列数不是 {len(expected)}: {e}", row=row) from None
    finally:
        if isinstance(source, (str, Path)):
            stream.close()
        else:
            stream.detach()

    # 首个数据行多出字段时 pandas 会把多余的列当作行索引
    if len(frame) and not isinstance(frame.index, pd.RangeIndex):
        raise LoadError(f"列数不是 {len(expected)}", row=1)

    header = [str(c) for c in frame.columns]
    if header != expected:
        raise LoadError(f"表头不匹配，期望 {expected}，实际 {header}")

    # 列数不足的行会被 pandas 用 NaN 补齐（空字段读成 ""）
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        i = int(np.argmax(short))
        raise LoadError(f"列数不是 {len(expected)}", row=i + 1)

    n = len(frame)
    features = np.empty((n, len(schema)), dtype=np.float64)
    for j, spec in enumerate(schema):
        raw = frame.iloc[:, j].str.strip()
        is_missing = raw.isin(MISSING_TOKENS).to_numpy()
        parsed = pd.to_numeric(raw.where(~raw.isin(MISSING_TOKENS)), errors="coerce").to_numpy(dtype=np.float64)
        unparseable = ~is_missing & np.isnan(parsed)
        if unparseable.any():
            i = int(np.argmax(unparseable))
            raise LoadError(f"{spec.name} 的值 {raw.iloc[i]!r} 不是数字", row=i + 1)
        features[:, j] = np.where(is_missing, np.nan, parsed)

    labels = []
    for k, name in enumerate(LABEL_COLUMNS):
        raw = frame.iloc[:, len(schema) + k].str.strip()
        parsed = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(parsed) | (parsed != np.round(parsed))
        if bad.any():
            i = int(np.argmax(bad))
            raise LoadError(f"标签 {name} 的值 {raw.iloc[i]!r} 不是整数", row=i + 1)
        labels.append(parsed.astype(np.int64))

    dataset = Dataset(features, labels[0], labels[1], labels[2], schema, provenance)
    problems = dataset_violations(dataset, taxonomy)
    if problems:
        i, message = problems[0]
        raise LoadError(message, row=i + 1)

    log_info(f"已读取数据集: {n} 条记录, 缺失单元格 {int(dataset.missing.sum())} 个")
    return dataset


def format_number(value: float) -> str:
    """最短可回读的十进制表示；整数值不带小数点，-0.0 保留符号"""
    if math.isnan(value):
        return ""
    if value == 0 and math.copysign(1.0, value) < 0:
        return "-0.0"
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def write_dataset(d: Dataset, sink: Source) -> None:
    """
    写出 CSV 数据集

    Args:
        d: 数据集
        sink: 文件路径或二进制流
    """
    columns = {}
    for j, name in enumerate(d.schema.names):
        columns[name] = [format_number(float(v)) for v in d.features[:, j]]
    for name, values in zip(LABEL_COLUMNS, (d.binary, d.category, d.subclass)):
        columns[name] = [str(int(v)) for v in values]
    frame = pd.DataFrame(columns, columns=d.schema.header)
    text = frame.to_csv(index=False, lineterminator="\n")

    data = text.encode("utf-8")
    if isinstance(sink, (str, Path)):
        Path(sink).parent.mkdir(parents=True, exist_ok=True)
        with open(sink, "wb") as f:
            f.write(data)
    else:
        sink.write(data)
    log_debug(f"已写出数据集: {len(d)} 条记录")


# ============ 合成数据 ============

# Normal 流量的基础取值区间
BASE_RANGES: Dict[str, Tuple[float, float]] = {
    "Address": (4.0, 4.0),
    "Length": (10.0, 18.0),
    "Gain": (100.0, 130.0),
    "Deadband": (0.2, 0.8),
    "Rate": (0.2, 0.6),
    "Control Scheme": (0.0, 1.0),
    "Solenoid": (0.0, 1.0),
    "CRC Rate": (0.0, 4.0),
    "Timestamp": (1.4185e9, 1.4195e9),
    "Function": (3.0, 3.0),
    "Set Point": (10.0, 30.0),
    "Reset Rate": (0.5, 1.5),
    "Cycle Time": (0.5, 1.5),
    "System Mode": (0.0, 2.0),
    "Pump Mode": (0.0, 1.0),
    "Pressure Measurement": (0.0, 40.0),
    "Command Response": (0.0, 1.0),
}

# NMRI 与 CMRI 共享的 Length 区段；二者靠压力区间区分
RESPONSE_LENGTH_BAND = (30.0, 38.0)
NMRI_PRESSURE = (0.0, 10.0)
CMRI_PRESSURE = (10.0, 20.0)


@dataclass
class SynthesisSpec:
    """
    合成数据参数

    Attributes:
        counts: 子类(0..35) → 实例数
        ranges: 特征名 → (最小, 最大)，覆盖 BASE_RANGES
        missing_rates: 载荷特征名 → 缺失比例
        seed: 随机种子
        response_overlap: NMRI/CMRI 压力区间重叠程度 [0, 1]
        linear_relations: 目标特征 → (来源特征, 斜率, 截距)
    """

    counts: Dict[int, int]
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    missing_rates: Dict[str, float] = field(default_factory=dict)
    seed: int = 0
    response_overlap: float = 0.0
    linear_relations: Dict[str, Tuple[str, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self, schema: FeatureSchema = GAS_PIPELINE_SCHEMA,
                 taxonomy: Taxonomy = TAXONOMY) -> None:
        def feature(name: str) -> FeatureSpec:
            try:
                return schema[schema.index_of(name)]
            except KeyError:
                raise ValueError(f"未知特征: {name}") from None

        for s, n in self.counts.items():
            if not 0 <= int(s) <= taxonomy.max_subclass:
                raise ValueError(f"未知子类标签: {s}")
            if int(n) < 0:
                raise ValueError(f"子类 {s} 的实例数为负: {n}")
        missable = {schema[i].name for i in schema.missable_indices}
        for name, rate in self.missing_rates.items():
            if name not in missable:
                raise ValueError(f"特征 {name} 不允许缺失")
            if not 0.0 <= float(rate) <= 1.0:
                raise ValueError(f"缺失比例必须在 [0,1]: {name}={rate}")
        for name, (lo, hi) in self.ranges.items():
            spec = feature(name)
            if lo > hi:
                raise ValueError(f"取值区间非法: {name}=({lo}, {hi})")
            if spec.is_categorical and not {float(lo), float(hi)} <= set(spec.domain):
                raise ValueError(f"离散特征 {name} 的区间端点必须取自 {spec.domain}: ({lo}, {hi})")
        if not 0.0 <= self.response_overlap <= 1.0:
            raise ValueError(f"response_overlap 必须在 [0,1]: {self.response_overlap}")
        for target, (source, _, _) in self.linear_relations.items():
            if feature(target).is_categorical:
                raise ValueError(f"线性关系的目标不能是离散特征: {target}")
            feature(source)

    @property
    def total(self) -> int:
        return sum(int(n) for n in self.counts.values())


def apportion(total: int, weights: Dict[int, float]) -> Dict[int, int]:
    """最大余数法把 total 按权重分配成整数"""
    keys = sorted(weights)
    weight_sum = float(sum(weights[k] for k in keys))
    if total == 0 or weight_sum == 0:
        return {k: 0 for k in keys}
    quotas = {k: total * weights[k] / weight_sum for k in keys}
    result = {k: int(math.floor(quotas[k])) for k in keys}
    remainder = total - sum(result.values())
    order = sorted(keys, key=lambda k: (-(quotas[k] - result[k]), k))
    for k in order[:remainder]:
        result[k] += 1
    return result


def uniform_missing_rates(rate: float, schema: FeatureSchema = GAS_PIPELINE_SCHEMA) -> Dict[str, float]:
    """所有可缺失特征使用同一缺失比例；rate 为 0 时返回空映射"""
    if not rate:
        return {}
    return {schema[i].name: float(rate) for i in schema.missable_indices}


def published_scaled_spec(scale: float, seed: int = 0, missing_rate: float = 0.0,
                      response_overlap: float = 0.0,
                      schema: FeatureSchema = GAS_PIPELINE_SCHEMA,
                      taxonomy: Taxonomy = TAXONOMY) -> SynthesisSpec:
    """
    按原始数据集类别比例缩放的合成参数

    每个类别的总数为 round(原始计数 × scale)，再按各子类公开计数用最大余数法
    分配到子类。

    Args:
        scale: 缩放比例，例如 0.01
        seed: 随机种子
        missing_rate: 所有可缺失特征的统一缺失比例
        response_overlap: NMRI/CMRI 压力区间重叠程度
    """
    counts: Dict[int, int] = {0: int(round(PUBLISHED_CATEGORY_COUNTS[0] * scale))}
    for c in taxonomy.categories:
        total = int(round(PUBLISHED_CATEGORY_COUNTS[c] * scale))
        weights = {s: float(sum(PUBLISHED_SUBCLASS_COUNTS[s])) for s in taxonomy.category_subclasses(c)}
        counts.update(apportion(total, weights))
    return SynthesisSpec(counts=counts, missing_rates=uniform_missing_rates(missing_rate, schema), seed=seed,
                         response_overlap=response_overlap)


def subclass_ranges(subclass: int, spec: SynthesisSpec, schema: FeatureSchema = GAS_PIPELINE_SCHEMA,
                    taxonomy: Taxonomy = TAXONOMY) -> List[Tuple[float, float]]:
    """
    某个子类各特征的均匀分布区间

    Length 区段编码类别（NMRI/CMRI 共用一段），CRC Rate 区段编码类内子类序号，
    NMRI/CMRI 的压力区间按 response_overlap 靠拢。
    """
    base = dict(BASE_RANGES)
    base.update(spec.ranges)
    ranges = [base[name] for name in schema.names]
    if subclass == 0:
        return ranges

    category = taxonomy.subclass_to_category(subclass)
    position = taxonomy.category_subclasses(category).index(subclass)
    length_i = schema.index_of("Length")
    crc_i = schema.index_of("CRC Rate")
    pressure_i = schema.index_of("Pressure Measurement")

    if category in (1, 2):
        ranges[length_i] = RESPONSE_LENGTH_BAND
        shift = 8.0 * spec.response_overlap
        ranges[pressure_i] = NMRI_PRESSURE if category == 1 else (
            CMRI_PRESSURE[0] - shift, CMRI_PRESSURE[1] - shift)
    else:
        lo = 20.0 + 10.0 * category + (10.0 if category > 2 else 0.0)
        ranges[length_i] = (lo, lo + 8.0)
    crc_lo = 5.0 * (position + 1)
    ranges[crc_i] = (crc_lo, crc_lo + 4.0)
    if category == DOS_CATEGORY:
        ranges[crc_i] = (90.0, 99.0)
    return ranges


def generate_synthetic(spec: SynthesisSpec, schema: FeatureSchema = GAS_PIPELINE_SCHEMA,
                       taxonomy: Taxonomy = TAXONOMY) -> Dataset:
    """
    生成符合特征定义的合成数据集

    各子类实例数严格等于 spec.counts；同一 seed 结果完全相同。
    记录按子类升序排列。

    Args:
        spec: 合成参数

    Returns:
        Dataset: provenance 为 synthetic
    """
    spec.validate(schema, taxonomy)
    rng = np.random.default_rng(spec.seed)
    blocks: List[np.ndarray] = []
    subclass_labels: List[np.ndarray] = []

    for s in sorted(int(k) for k in spec.counts):
        n = int(spec.counts[s])
        if n == 0:
            continue
        block = np.empty((n, len(schema)))
        for j, (lo, hi) in enumerate(subclass_ranges(s, spec, schema, taxonomy)):
            kind = schema[j].kind
            if kind in (FeatureKind.BINARY01, FeatureKind.TERNARY012):
                block[:, j] = rng.integers(int(lo), int(hi) + 1, size=n)
            elif kind == FeatureKind.TIMESTAMP:
                block[:, j] = np.floor(rng.uniform(lo, hi, size=n))
            else:
                block[:, j] = rng.uniform(lo, hi, size=n)
        blocks.append(block)
        subclass_labels.append(np.full(n, s, dtype=np.int64))

    if not blocks:
        log_warning("合成参数中所有计数均为 0，生成空数据集")
        return Dataset.empty(schema, "synthetic")

    features = np.vstack(blocks)
    subclass = np.concatenate(subclass_labels)

    for target, (source, slope, intercept) in spec.linear_relations.items():
        features[:, schema.index_of(target)] = slope * features[:, schema.index_of(source)] + intercept

    for name, rate in sorted(spec.missing_rates.items()):
        if rate > 0:
            drop = rng.random(features.shape[0]) < rate
            features[drop, schema.index_of(name)] = np.nan

    lookup = np.asarray(taxonomy.lookup_table(), dtype=np.int64)
    category = lookup[subclass]
    binary = (subclass > 0).astype(np.int64)
    dataset = Dataset(features, binary, category, subclass, schema, "synthetic")
    log_info(f"已生成合成数据集: {len(dataset)} 条记录 (seed={spec.seed})")
    return dataset
