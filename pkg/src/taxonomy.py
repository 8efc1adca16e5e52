#!/usr/bin/env python3
"""
特征与标签体系模块

定义燃气管道 SCADA 数据集的 17 个特征、三级标签（二分类 / 7 类 / 35 个子类）
以及子类 → 攻击类别的固定映射。其余所有模块都以这里的定义为准。

类别编号（与数据集 categorized 列一致）：
    0 = Normal, 1 = NMRI, 2 = CMRI, 3 = MSCI, 4 = MPCI, 5 = MFCI, 6 = DoS, 7 = Recon
"""
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

TAXONOMY_VERSION = "gas-pipeline-v1"

# 三个标签列在 CSV 中的列名
LABEL_COLUMNS = ("binary", "categorized", "specified")

NORMAL = 0
ATTACK = 1


class TaxonomyError(ValueError):
    """标签体系相关的错误（例如对 Normal 求攻击类别）"""


class FeatureGroup(Enum):
    NETWORK = "Network"
    COMMAND_PAYLOAD = "CommandPayload"
    RESPONSE_PAYLOAD = "ResponsePayload"


class FeatureKind(Enum):
    NUMERIC = "numeric"
    BINARY01 = "binary01"
    TERNARY012 = "ternary012"
    TIMESTAMP = "timestamp"


# 有限取值域的特征类型
KIND_DOMAINS: Dict[FeatureKind, Tuple[float, ...]] = {
    FeatureKind.BINARY01: (0.0, 1.0),
    FeatureKind.TERNARY012: (0.0, 1.0, 2.0),
}


class Category(IntEnum):
    """攻击类别（categorized 标签）"""

    NORMAL = 0
    NMRI = 1
    CMRI = 2
    MSCI = 3
    MPCI = 4
    MFCI = 5
    DOS = 6
    RECON = 7


@dataclass(frozen=True)
class FeatureSpec:
    """单个特征的描述"""

    name: str
    group: FeatureGroup
    kind: FeatureKind
    # 载荷特征在原始数据中可能缺失（Function 功能码每帧都有，不会缺失）
    missable: bool = False

    @property
    def domain(self) -> Optional[Tuple[float, ...]]:
        """有限取值域，数值型特征返回 None"""
        return KIND_DOMAINS.get(self.kind)

    @property
    def is_categorical(self) -> bool:
        return self.kind in KIND_DOMAINS


@dataclass(frozen=True)
class FeatureSchema:
    """有序的特征列表"""

    features: Tuple[FeatureSpec, ...]

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, index: int) -> FeatureSpec:
        return self.features[index]

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.features]

    def index_of(self, name: str) -> int:
        """按名称查找特征下标"""
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(f"未知特征: {name}")

    def indices(self, group: FeatureGroup) -> List[int]:
        return [i for i, f in enumerate(self.features) if f.group == group]

    @property
    def missable_indices(self) -> List[int]:
        return [i for i, f in enumerate(self.features) if f.missable]

    @property
    def categorical_indices(self) -> List[int]:
        return [i for i, f in enumerate(self.features) if f.is_categorical]

    @property
    def header(self) -> List[str]:
        """CSV 表头：17 个特征 + 3 个标签列"""
        return self.names + list(LABEL_COLUMNS)


_N = FeatureGroup.NETWORK
_C = FeatureGroup.COMMAND_PAYLOAD
_R = FeatureGroup.RESPONSE_PAYLOAD

# 特征顺序与原始数据集一致
GAS_PIPELINE_SCHEMA = FeatureSchema(features=(
    FeatureSpec("Address", _N, FeatureKind.NUMERIC),
    FeatureSpec("Length", _N, FeatureKind.NUMERIC),
    FeatureSpec("Gain", _C, FeatureKind.NUMERIC, missable=True),
    FeatureSpec("Deadband", _C, FeatureKind.NUMERIC, missable=True),
    FeatureSpec("Rate", _C, FeatureKind.NUMERIC, missable=True),
    FeatureSpec("Control Scheme", _C, FeatureKind.BINARY01, missable=True),
    FeatureSpec("Solenoid", _C, FeatureKind.BINARY01, missable=True),
    FeatureSpec("CRC Rate", _N, FeatureKind.NUMERIC),
    FeatureSpec("Timestamp", _N, FeatureKind.TIMESTAMP),
    FeatureSpec("Function", _C, FeatureKind.NUMERIC),
    FeatureSpec("Set Point", _C, FeatureKind.NUMERIC, missable=True),
    FeatureSpec("Reset Rate", _C, FeatureKind.NUMERIC, missable=True),
    FeatureSpec("Cycle Time", _C, FeatureKind.NUMERIC, missable=True),
    FeatureSpec("System Mode", _C, FeatureKind.TERNARY012, missable=True),
    FeatureSpec("Pump Mode", _C, FeatureKind.BINARY01, missable=True),
    FeatureSpec("Pressure Measurement", _R, FeatureKind.NUMERIC, missable=True),
    FeatureSpec("Command Response", _N, FeatureKind.BINARY01),
))


# ============ 标签层级 ============

CATEGORY_NAMES: Dict[int, str] = {
    1: "NMRI",
    2: "CMRI",
    3: "MSCI",
    4: "MPCI",
    5: "MFCI",
    6: "DoS",
    7: "Recon",
}

CATEGORY_LONG_NAMES: Dict[int, str] = {
    0: "Normal",
    1: "Naive Malicious Response Injection",
    2: "Complex Malicious Response Injection",
    3: "Malicious State Command Injection",
    4: "Malicious Parameter Command Injection",
    5: "Malicious Function Code Injection",
    6: "Denial of Service",
    7: "Reconnaissance",
}

# 每个类别拥有的子类
_CATEGORY_SUBCLASSES: Dict[int, Tuple[int, ...]] = {
    1: (29, 30, 31, 32),
    2: (25, 26, 27, 28, 33, 34, 35),
    3: (13, 14, 15, 16, 17),
    4: tuple(range(1, 13)),
    5: (19, 21, 22),
    6: (18,),
    7: (20, 23, 24),
}

SUBCLASS_NAMES: Dict[int, str] = {
    1: "Setpoint Attack (outside range)",
    2: "Setpoint Attack (inside range)",
    3: "PID Gain Attack (outside range)",
    4: "PID Gain Attack (inside range)",
    5: "PID Reset Rate Attack (outside range)",
    6: "PID Reset Rate Attack (inside range)",
    7: "PID Rate Attack (outside range)",
    8: "PID Rate Attack (inside range)",
    9: "PID Deadband Attack (outside range)",
    10: "PID Deadband Attack (inside range)",
    11: "PID Cycle Time Attack (outside range)",
    12: "PID Cycle Time Attack (inside range)",
    13: "Pump Attack",
    14: "Solenoid Attack",
    15: "System Mode Attack",
    16: "Critical Condition Attack",
    17: "Critical Condition Attack",
    18: "Bad CRC Attack",
    19: "Clean Register Attack",
    20: "Device Scan Attack",
    21: "Force Listen Attack",
    22: "Restart Attack",
    23: "Read ID Attack",
    24: "Function Code Scan Attack",
    25: "Rise/Fall Attack",
    26: "Rise/Fall Attack",
    27: "Slope Attack",
    28: "Slope Attack",
    29: "Random Value Attack",
    30: "Random Value Attack",
    31: "Random Value Attack",
    32: "Negative Pressure Attack",
    33: "Fast Attack",
    34: "Fast Attack",
    35: "Slow Attack",
}

# DoS 只有一个子类，不训练第三级分类器
DOS_CATEGORY = 6
DOS_SUBCLASS = 18


@dataclass(frozen=True)
class Taxonomy:
    """子类(1–35) → 类别(1–7) 的固定映射"""

    category_subclass_map: Dict[int, Tuple[int, ...]] = field(
        default_factory=lambda: dict(_CATEGORY_SUBCLASSES)
    )
    version: str = TAXONOMY_VERSION

    def __post_init__(self):
        seen: Dict[int, int] = {}
        for category, subclasses in self.category_subclass_map.items():
            for s in subclasses:
                if s in seen:
                    raise TaxonomyError(f"子类 {s} 同时属于类别 {seen[s]} 和 {category}")
                seen[s] = category
        if sorted(seen) != list(range(1, len(seen) + 1)):
            raise TaxonomyError("子类编号必须连续覆盖 1..N")
        object.__setattr__(self, "_subclass_to_category", seen)

    @property
    def categories(self) -> List[int]:
        return sorted(self.category_subclass_map)

    @property
    def subclasses(self) -> List[int]:
        return sorted(self._subclass_to_category)

    @property
    def max_subclass(self) -> int:
        return len(self._subclass_to_category)

    @property
    def max_category(self) -> int:
        return max(self.category_subclass_map)

    def subclass_to_category(self, s: int) -> int:
        """
        子类对应的攻击类别

        Args:
            s: 子类标签（1..35）

        Returns:
            int: 类别标签（1..7）
        """
        if s == NORMAL:
            raise TaxonomyError("Normal has no attack category")
        try:
            return self._subclass_to_category[int(s)]
        except KeyError:
            raise TaxonomyError(f"未知子类标签: {s}") from None

    def category_subclasses(self, c: int) -> Tuple[int, ...]:
        """类别拥有的子类（升序）"""
        try:
            return tuple(sorted(self.category_subclass_map[int(c)]))
        except KeyError:
            raise TaxonomyError(f"未知类别标签: {c}") from None

    def category_name(self, c: int) -> str:
        if c == NORMAL:
            return "Normal"
        return CATEGORY_NAMES[int(c)]

    def category_long_name(self, c: int) -> str:
        return CATEGORY_LONG_NAMES[int(c)]

    def subclass_name(self, s: int) -> str:
        if s == NORMAL:
            return "Normal"
        return SUBCLASS_NAMES[int(s)]

    def lookup_table(self) -> List[int]:
        """下标为子类、值为类别的查找表（下标 0 对应 Normal → 0），便于向量化"""
        table = [NORMAL] * (self.max_subclass + 1)
        for s, c in self._subclass_to_category.items():
            table[s] = c
        return table


TAXONOMY = Taxonomy()


def subclass_to_category(s: int, taxonomy: Taxonomy = TAXONOMY) -> int:
    """模块级快捷方式，见 Taxonomy.subclass_to_category"""
    return taxonomy.subclass_to_category(s)


# ============ 公开数据集的实例计数 ============

# 各类别总实例数（含 Normal）
PUBLISHED_CATEGORY_COUNTS: Dict[int, int] = {
    0: 214580,
    1: 7753,
    2: 13035,
    3: 7900,
    4: 20412,
    5: 4898,
    6: 2176,
    7: 3874,
}

# 第一折各子类的训练 / 测试数
PUBLISHED_SUBCLASS_COUNTS: Dict[int, Tuple[int, int]] = {
    1: (1221, 571), 2: (1015, 445), 3: (1126, 574), 4: (1277, 655),
    5: (931, 485), 6: (1326, 700), 7: (997, 515), 8: (1186, 612),
    9: (936, 460), 10: (955, 519), 11: (1206, 628), 12: (1374, 698),
    13: (1077, 517), 14: (1158, 518), 15: (1148, 510), 16: (1115, 543),
    17: (963, 451), 18: (1449, 727), 19: (1089, 545), 20: (474, 192),
    21: (1134, 588), 22: (1009, 533), 23: (1355, 693), 24: (752, 408),
    25: (995, 477), 26: (1237, 571), 27: (1389, 690), 28: (1233, 625),
    29: (1276, 580), 30: (1414, 706), 31: (1268, 638), 32: (1264, 607),
    33: (1071, 533), 34: (1327, 683), 35: (1491, 713),
}

# 第二级各类别的训练 / 测试数
PUBLISHED_STAGE2_COUNTS: Dict[int, Tuple[int, int]] = {
    1: (5222, 2531),
    2: (8743, 4292),
    3: (5361, 2539),
    4: (13550, 6862),
    5: (3232, 1666),
    6: (1449, 727),
    7: (2581, 1293),
}

# 第一级训练 / 测试中的 Normal、Attack 数
PUBLISHED_STAGE1_COUNTS: Dict[str, Tuple[int, int]] = {
    "train": (142901, 40138),
    "test": (71679, 19910),
}


# ============ 记录校验 ============

@dataclass
class Record:
    """一条网络/载荷观测：17 个特征（None 或 NaN 表示缺失）+ 三个标签"""

    features: Sequence[Optional[float]]
    binary: int
    category: int
    subclass: int


@dataclass
class ValidationResult:
    """校验结果：violations 为空即通过"""

    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def is_missing(value: Optional[float]) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def label_violations(binary: int, category: int, subclass: int,
                     taxonomy: Taxonomy = TAXONOMY) -> List[str]:
    """检查三个标签各自的取值范围以及相互一致性"""
    problems: List[str] = []
    if binary not in (NORMAL, ATTACK):
        problems.append(f"binary label {binary} not in {{0,1}}")
    if not 0 <= category <= taxonomy.max_category:
        problems.append(f"category label {category} not in [0,{taxonomy.max_category}]")
    if not 0 <= subclass <= taxonomy.max_subclass:
        problems.append(f"subclass label {subclass} not in [0,{taxonomy.max_subclass}]")
    if problems:
        return problems

    normal_flags = (binary == NORMAL, category == NORMAL, subclass == NORMAL)
    if len(set(normal_flags)) != 1:
        problems.append(
            f"labels disagree on Normal: binary={binary} category={category} subclass={subclass}"
        )
    elif subclass != NORMAL:
        owner = taxonomy.subclass_to_category(subclass)
        if owner != category:
            problems.append(f"subclass {subclass} belongs to category {owner}")
    return problems


def feature_violations(name: str, spec: FeatureSpec, value: Optional[float]) -> List[str]:
    """单个特征值是否符合其声明的类型"""
    if is_missing(value):
        if not spec.missable:
            return [f"{name} must not be missing"]
        return []
    value = float(value)
    if not math.isfinite(value):
        return [f"{name} value {value} is not finite"]
    domain = spec.domain
    if domain is not None and value not in domain:
        allowed = ",".join(str(int(v)) for v in domain)
        return [f"{name} value {value:g} not in {{{allowed}}}"]
    return []


def validate_record(r: Record, schema: FeatureSchema = GAS_PIPELINE_SCHEMA,
                    taxonomy: Taxonomy = TAXONOMY) -> ValidationResult:
    """
    校验单条记录

    违反项以数据形式返回，不抛异常。

    Args:
        r: 待校验记录
        schema: 特征定义

    Returns:
        ValidationResult: 所有违反项
    """
    result = ValidationResult()
    if len(r.features) != len(schema):
        result.violations.append(
            f"expected {len(schema)} features, got {len(r.features)}"
        )
    else:
        for spec, value in zip(schema, r.features):
            result.violations.extend(feature_violations(spec.name, spec, value))
    result.violations.extend(label_violations(r.binary, r.category, r.subclass, taxonomy))
    return result
