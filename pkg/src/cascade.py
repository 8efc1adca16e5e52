#!/usr/bin/env python3
"""
三级级联分类器

第一级：Normal / Attack
第二级：攻击类别 1–7（只用攻击样本训练）
第三级：每个类别一个子类分类器；DoS(6) 只有子类 18，不训练模型，直接输出
"""
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from forest import ForestError, RandomForestModel, TrainConfig, load_forest, save_forest, train_forest
from ingestion import Dataset, dataset_violations
from logger import log_info, log_success, log_warning
from metrics import END_TO_END, GROUND_TRUTH_ROUTED, StageReport, confusion
from taxonomy import ATTACK, DOS_CATEGORY, DOS_SUBCLASS, NORMAL, TAXONOMY, Taxonomy

CASCADE_FORMAT = "cascade-ids/cascade"
CASCADE_VERSION = 1
MANIFEST_NAME = "cascade.yml"

BINARY_NAMES = {NORMAL: "Normal", ATTACK: "Attack"}


class CascadeError(RuntimeError):
    """级联训练 / 路由 / 载入失败，stage 和 category 指明出错位置"""

    def __init__(self, message: str, stage: Optional[str] = None, category: Optional[int] = None):
        self.stage = stage
        self.category = category
        prefix = stage or ""
        if category is not None:
            prefix += f"[类别 {category}]"
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass(frozen=True)
class CascadeOutput:
    """单条记录的分类结果；Normal 时 category 与 subclass 为 None"""

    binary: int
    category: Optional[int] = None
    subclass: Optional[int] = None

    @property
    def outcome(self) -> int:
        """36 值结果：Normal 为 0，否则为子类"""
        return NORMAL if self.binary == NORMAL else int(self.subclass)


@dataclass
class StageConfigs:
    """三级训练参数；第三级每个类别的种子为 stage3.seed + 类别号"""

    stage1: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=1000))
    stage2: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=100))
    stage3: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=10))

    def for_category(self, c: int) -> TrainConfig:
        return replace(self.stage3, seed=int(self.stage3.seed) + int(c))


class StageCounters:
    """各级被调用的记录数，线程安全"""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: Dict[str, int] = {}

    def add(self, key: str, n: int = 1) -> None:
        if n <= 0:
            return
        with self._lock:
            self._counts[key] = self._counts.get(key, 0) + int(n)

    def get(self, key: str) -> int:
        with self._lock:
            return self._counts.get(key, 0)

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()


# ============ 各级训练数据 ============

@dataclass
class LabeledView:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def histogram(self) -> Dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(k): int(v) for k, v in zip(values, counts)}


@dataclass
class StageDatasets:
    """
    stage1: 全部训练行，二分类标签
    stage2: 攻击行，类别标签
    stage3: 类别 → 该类别攻击行，子类标签（不含 DoS）
    """

    stage1: LabeledView
    stage2: LabeledView
    stage3: Dict[int, LabeledView]
    dos_rows: int = 0
    missing_categories: Tuple[int, ...] = ()

    def populations(self) -> Dict:
        """训练日志中的各级样本数"""
        stage1 = self.stage1.histogram()
        return {
            "stage1": {BINARY_NAMES[k]: v for k, v in sorted(stage1.items())},
            "stage2": self.stage2.histogram(),
            "stage3": {c: view.histogram() for c, view in sorted(self.stage3.items())},
            "dos_passthrough": self.dos_rows,
        }


def _check_complete(d: Dataset, taxonomy: Taxonomy, stage: str) -> None:
    if not d.is_complete:
        raise CascadeError("数据集仍有缺失值，请先运行 impute 插补", stage=stage)
    problems = dataset_violations(d, taxonomy, allow_missing=False)
    if problems:
        row, message = problems[0]
        raise CascadeError(f"第 {row + 1} 行标签不一致: {message}", stage=stage)


def derive_stage_datasets(train: Dataset, taxonomy: Taxonomy = TAXONOMY,
                          strict: bool = True) -> StageDatasets:
    """
    由训练集派生三级训练数据

    Args:
        train: 完整的训练视图
        taxonomy: 子类 → 类别映射
        strict: True 时任何类别没有训练样本都报错；False 时跳过该类别

    Raises:
        CascadeError: 缺失值、标签不一致，或（strict 下）某类别为空
    """
    _check_complete(train, taxonomy, "stage1")
    X = train.features
    stage1 = LabeledView(X, train.binary.copy())

    attack = train.binary == ATTACK
    stage2 = LabeledView(X[attack], train.category[attack])

    stage3: Dict[int, LabeledView] = {}
    missing = []
    dos_rows = 0
    for c in taxonomy.categories:
        rows = attack & (train.category == c)
        count = int(rows.sum())
        if count == 0:
            if strict:
                raise CascadeError("训练集中没有该类别的样本", stage="stage2", category=c)
            missing.append(c)
            continue
        if c == DOS_CATEGORY:
            dos_rows = count
            continue
        stage3[c] = LabeledView(X[rows], train.subclass[rows])
    return StageDatasets(stage1, stage2, stage3, dos_rows, tuple(missing))


# ============ 模型 ============

class CascadeModel:
    """三级模型；训练后只读，counters 记录各级调用次数"""

    def __init__(self, stage1: RandomForestModel, stage2: RandomForestModel,
                 stage3: Dict[int, RandomForestModel], taxonomy: Taxonomy = TAXONOMY,
                 configs: Optional[StageConfigs] = None, training_log: Optional[Dict] = None):
        self.stage1 = stage1
        self.stage2 = stage2
        self.stage3 = dict(stage3)
        self.taxonomy = taxonomy
        self.configs = configs or StageConfigs()
        self.training_log = training_log or {}
        self.dos_category = DOS_CATEGORY
        self.dos_subclass = DOS_SUBCLASS
        self.counters = StageCounters()
        self.validate()

    def validate(self) -> None:
        """检查各级标签空间与分类体系一致"""
        if not set(self.stage1.label_space) <= {NORMAL, ATTACK}:
            raise CascadeError(f"标签空间 {self.stage1.label_space} 不是二分类", stage="stage1")
        categories = set(self.taxonomy.categories)
        if not set(self.stage2.label_space) <= categories:
            raise CascadeError(f"标签空间 {self.stage2.label_space} 超出类别 1..{self.taxonomy.max_category}",
                               stage="stage2")
        if self.dos_category in self.stage3:
            raise CascadeError("DoS 类别不应有第三级模型", stage="stage3", category=self.dos_category)
        for c, model in self.stage3.items():
            if c not in categories:
                raise CascadeError("未知类别", stage="stage3", category=c)
            allowed = set(self.taxonomy.category_subclasses(c))
            if not set(model.label_space) <= allowed:
                raise CascadeError(f"标签空间 {model.label_space} 不属于该类别", stage="stage3", category=c)
        for c in self.stage2.label_space:
            if c != self.dos_category and c not in self.stage3:
                raise CascadeError("第二级可输出该类别但缺少第三级模型", stage="stage3", category=c)
        n_features = {self.stage1.n_features, self.stage2.n_features}
        n_features.update(m.n_features for m in self.stage3.values())
        if len(n_features) != 1:
            raise CascadeError(f"各级模型特征数不一致: {sorted(n_features)}")

    @property
    def n_features(self) -> int:
        return self.stage1.n_features

    def models(self) -> Dict[str, RandomForestModel]:
        result = {"stage1": self.stage1, "stage2": self.stage2}
        result.update({f"stage3-c{c}": m for c, m in sorted(self.stage3.items())})
        return result


def _train_stage(stage: str, view: LabeledView, cfg: TrainConfig,
                 category: Optional[int] = None) -> RandomForestModel:
    try:
        model = train_forest(view.features, view.labels, cfg)
    except ForestError as e:
        raise CascadeError(str(e), stage=stage, category=category) from e
    where = stage if category is None else f"{stage} 类别 {category}"
    log_info(f"{where} 训练完成: {len(view)} 条样本, 标签 {list(model.label_space)}, seed={cfg.seed}")
    return model


def train_cascade(train: Dataset, cfgs: StageConfigs, taxonomy: Taxonomy = TAXONOMY) -> CascadeModel:
    """
    训练三级级联模型

    训练集缺少的类别只记录警告并跳过，DoS 始终由固定规则处理。
    """
    ds = derive_stage_datasets(train, taxonomy, strict=False)
    for c in ds.missing_categories:
        log_warning(f"训练集中没有类别 {c} ({taxonomy.category_name(c)}) 的样本，跳过该类别")
    if len(ds.stage1) == 0:
        raise CascadeError("训练集为空", stage="stage1")
    if len(ds.stage2) == 0:
        raise CascadeError("训练集没有攻击样本，无法训练第二级", stage="stage2")

    log_info(f"开始训练级联模型: 第一级 {len(ds.stage1)} 条, 第二级 {len(ds.stage2)} 条, "
             f"第三级 {len(ds.stage3)} 个分类器")
    stage1 = _train_stage("stage1", ds.stage1, cfgs.stage1)
    stage2 = _train_stage("stage2", ds.stage2, cfgs.stage2)
    stage3 = {}
    for c, view in sorted(ds.stage3.items()):
        stage3[c] = _train_stage("stage3", view, cfgs.for_category(c), category=c)

    training_log = ds.populations()
    training_log["seeds"] = {
        "stage1": int(cfgs.stage1.seed),
        "stage2": int(cfgs.stage2.seed),
        "stage3": {c: int(cfgs.for_category(c).seed) for c in sorted(stage3)},
    }
    training_log["missing_categories"] = list(ds.missing_categories)
    log_success("级联模型训练完成")
    return CascadeModel(stage1, stage2, stage3, taxonomy, cfgs, training_log)


# ============ 路由 ============

def classify_batch(m: CascadeModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    批量路由

    Returns:
        tuple: (binary, category, subclass)，Normal 行的 category / subclass 为 0
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise CascadeError(f"特征数应为 {m.n_features}，实际输入形状为 {X.shape}", stage="stage1")
    n = X.shape[0]
    binary = np.zeros(n, dtype=np.int64)
    category = np.zeros(n, dtype=np.int64)
    subclass = np.zeros(n, dtype=np.int64)
    if n == 0:
        return binary, category, subclass

    m.counters.add("stage1", n)
    binary[:] = m.stage1.predict(X)
    attack = np.nonzero(binary == ATTACK)[0]
    if attack.size == 0:
        return binary, category, subclass

    m.counters.add("stage2", attack.size)
    category[attack] = m.stage2.predict(X[attack])
    for c in np.unique(category[attack]):
        rows = attack[category[attack] == c]
        if c == m.dos_category:
            m.counters.add("dos_rule", rows.size)
            subclass[rows] = m.dos_subclass
            continue
        model = m.stage3.get(int(c))
        if model is None:
            raise CascadeError("没有可用的第三级分类器", stage="stage3", category=int(c))
        m.counters.add(f"stage3-c{int(c)}", rows.size)
        subclass[rows] = model.predict(X[rows])
    return binary, category, subclass


def classify(m: CascadeModel, features) -> CascadeOutput:
    """单条记录分类"""
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    binary, category, subclass = classify_batch(m, x)
    if binary[0] == NORMAL:
        return CascadeOutput(NORMAL)
    return CascadeOutput(ATTACK, int(category[0]), int(subclass[0]))


# ============ 评估 ============

def evaluate_stagewise(m: CascadeModel, test: Dataset) -> List[StageReport]:
    """
    按真实标签路由的逐级评估

    第二级只评估真实攻击行，第三级只评估真实属于该类别的行；
    第一级误报为攻击的 Normal 行不进入后续各级。空的评估集合跳过。
    """
    taxonomy = m.taxonomy
    _check_complete(test, taxonomy, "evaluate")
    X = test.features
    reports: List[StageReport] = []
    if len(test) == 0:
        log_warning("测试集为空，没有可评估的记录")
        return reports

    cm = confusion(test.binary, m.stage1.predict(X), (NORMAL, ATTACK))
    reports.append(StageReport("stage1", GROUND_TRUTH_ROUTED, cm, dict(BINARY_NAMES)))

    attack = test.binary == ATTACK
    if attack.any():
        cm = confusion(test.category[attack], m.stage2.predict(X[attack]), taxonomy.categories)
        reports.append(StageReport("stage2", GROUND_TRUTH_ROUTED, cm))

    for c in taxonomy.categories:
        rows = attack & (test.category == c)
        if not rows.any():
            continue
        if c == m.dos_category:
            predicted = np.full(int(rows.sum()), m.dos_subclass)
        elif c in m.stage3:
            predicted = m.stage3[c].predict(X[rows])
        else:
            log_warning(f"类别 {c} 没有第三级分类器，跳过其评估")
            continue
        cm = confusion(test.subclass[rows], predicted, taxonomy.category_subclasses(c))
        reports.append(StageReport(f"stage3-c{c}", GROUND_TRUTH_ROUTED, cm))

    for r in reports:
        log_info(f"{r.name} 准确率 {r.accuracy * 100:.2f}% ({r.correct}/{r.matrix.total})")
    return reports


def evaluate_end_to_end(m: CascadeModel, test: Dataset) -> StageReport:
    """
    端到端评估：按各级预测结果路由，误差逐级传递

    结果为 {Normal} ∪ {1..35} 共 36 个标签的混淆矩阵。
    """
    taxonomy = m.taxonomy
    _check_complete(test, taxonomy, "evaluate")
    _, _, predicted = classify_batch(m, test.features)
    labels = [NORMAL] + taxonomy.subclasses
    cm = confusion(test.subclass, predicted, labels)
    report = StageReport("end-to-end", END_TO_END, cm, {NORMAL: "Normal"})
    log_info(f"端到端准确率 {report.accuracy * 100:.2f}% ({report.correct}/{cm.total})")
    return report


# ============ 序列化 ============

def save_cascade(m: CascadeModel, out_dir: Union[str, Path]) -> Path:
    """
    写出各级模型 JSON 和 cascade.yml 清单

    Returns:
        Path: 清单文件路径
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_forest(m.stage1, out / "stage1.json")
    save_forest(m.stage2, out / "stage2.json")
    stage3_files = {}
    for c, model in sorted(m.stage3.items()):
        name = f"stage3_c{c}.json"
        save_forest(model, out / name)
        stage3_files[int(c)] = name

    manifest = {
        "format": CASCADE_FORMAT,
        "version": CASCADE_VERSION,
        "taxonomy_version": m.taxonomy.version,
        "dos_rule": {"category": m.dos_category, "subclass": m.dos_subclass},
        "stages": {
            "stage1": "stage1.json",
            "stage2": "stage2.json",
            "stage3": stage3_files,
        },
        "training_log": m.training_log,
    }
    path = out / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, allow_unicode=True, sort_keys=False)
    log_info(f"级联模型清单已保存: {path}")
    return path


def load_cascade(path: Union[str, Path], taxonomy: Taxonomy = TAXONOMY) -> CascadeModel:
    """
    读取 cascade.yml（或其所在目录）

    Raises:
        CascadeError: 清单格式、分类体系版本或标签空间不符
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise CascadeError(f"无法读取级联清单 {path}: {e}") from None

    if manifest.get("format") != CASCADE_FORMAT or manifest.get("version") != CASCADE_VERSION:
        raise CascadeError(f"不是受支持的级联清单: {path}")
    if manifest.get("taxonomy_version") != taxonomy.version:
        raise CascadeError(f"分类体系版本不符: 清单为 {manifest.get('taxonomy_version')}，"
                           f"当前为 {taxonomy.version}")
    rule = manifest.get("dos_rule") or {}
    if rule.get("category") != DOS_CATEGORY or rule.get("subclass") != DOS_SUBCLASS:
        raise CascadeError(f"DoS 规则与分类体系不符: {rule}")

    base = path.parent
    stages = manifest.get("stages") or {}
    try:
        stage1 = load_forest(base / stages["stage1"])
        stage2 = load_forest(base / stages["stage2"])
        stage3 = {int(c): load_forest(base / name) for c, name in (stages.get("stage3") or {}).items()}
    except KeyError as e:
        raise CascadeError(f"清单缺少模型条目 {e}") from None
    except (OSError, ForestError) as e:
        raise CascadeError(f"模型载入失败: {e}") from None

    stage3_cfg = TrainConfig(batch_size=10)
    if stage3:
        c, model = min(stage3.items(), key=lambda item: item[0])
        stage3_cfg = replace(model.config, seed=int(model.config.seed) - c)
    configs = StageConfigs(stage1.config, stage2.config, stage3_cfg)
    return CascadeModel(stage1, stage2, stage3, taxonomy, configs, manifest.get("training_log") or {})
