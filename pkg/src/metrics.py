#!/usr/bin/env python3
"""
混淆矩阵与分类指标

- 行为真实标签、列为预测标签
- 每个标签按一对其余计算 TPR/FPR/TNR/FNR/Precision/Recall
- 加权值按真实样本数（行和）加权
- 分母为 0 的比值记为 0，并记录在 ill_defined 中
"""
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

REPORT_FORMAT_VERSION = 1

GROUND_TRUTH_ROUTED = "ground-truth-routed"
END_TO_END = "end-to-end"
SEMANTICS = (GROUND_TRUTH_ROUTED, END_TO_END)

RATE_NAMES = ("tpr", "fpr", "tnr", "fnr", "precision", "recall")


class MetricsError(ValueError):
    """指标计算或报告解析失败"""


# ============ 混淆矩阵 ============

class ConfusionMatrix:
    """带标签顺序的方阵，构造后只读"""

    def __init__(self, labels: Sequence[int], counts):
        labels = tuple(int(v) for v in labels)
        counts = np.array(counts, dtype=np.int64)
        if len(set(labels)) != len(labels):
            raise MetricsError(f"标签集合有重复: {labels}")
        if counts.shape != (len(labels), len(labels)):
            raise MetricsError(f"混淆矩阵形状 {counts.shape} 与标签数 {len(labels)} 不符")
        if (counts < 0).any():
            raise MetricsError("混淆矩阵不能有负数")
        counts.setflags(write=False)
        self.labels = labels
        self.counts = counts

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"ConfusionMatrix(labels={self.labels}, total={self.total})"

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def support(self) -> np.ndarray:
        """每个真实标签的样本数（行和）"""
        return self.counts.sum(axis=1)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """同标签集合的两个矩阵逐格相加"""
        if other.labels != self.labels:
            raise MetricsError("只能合并标签集合相同的混淆矩阵")
        return ConfusionMatrix(self.labels, self.counts + other.counts)

    def cell(self, truth: int, predicted: int) -> int:
        return int(self.counts[self.labels.index(truth), self.labels.index(predicted)])


def confusion(truth: Sequence[int], predicted: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    """
    构造混淆矩阵

    Raises:
        MetricsError: 长度不一致，或出现标签集合之外的值
    """
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    predicted = np.asarray(predicted, dtype=np.int64).reshape(-1)
    labels = [int(v) for v in labels]
    if not labels:
        raise MetricsError("标签集合不能为空")
    if truth.shape[0] != predicted.shape[0]:
        raise MetricsError(f"真实标签 {truth.shape[0]} 个，预测标签 {predicted.shape[0]} 个，长度不一致")
    allowed = np.asarray(labels)
    for name, values in (("真实", truth), ("预测", predicted)):
        outside = np.setdiff1d(values, allowed)
        if outside.size:
            raise MetricsError(f"{name}标签 {outside.tolist()} 不在标签集合 {labels} 中")
    if truth.shape[0] == 0:
        return ConfusionMatrix(labels, np.zeros((len(labels), len(labels)), dtype=np.int64))
    return ConfusionMatrix(labels, confusion_matrix(truth, predicted, labels=labels))


# ============ 分类指标 ============

def _ratio(num: np.ndarray, den: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """逐元素 num / den，den 为 0 时取 0；同时返回无定义位置"""
    num = num.astype(np.float64)
    den = den.astype(np.float64)
    undefined = den == 0
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=~undefined)
    return out, undefined


@dataclass
class ClassMetrics:
    """一对其余指标；所有比值位于 [0, 1]"""

    labels: Tuple[int, ...]
    support: Tuple[int, ...]
    tp: Tuple[int, ...]
    fp: Tuple[int, ...]
    fn: Tuple[int, ...]
    tn: Tuple[int, ...]
    rates: Dict[str, Tuple[float, ...]]
    accuracy: float
    weighted: Dict[str, float]
    ill_defined: Tuple[str, ...] = ()

    def rate(self, name: str, label: int) -> float:
        return self.rates[name][self.labels.index(label)]

    def row(self, label: int) -> Dict[str, float]:
        i = self.labels.index(label)
        return {name: self.rates[name][i] for name in RATE_NAMES}

    @property
    def weighted_precision(self) -> float:
        return self.weighted["precision"]

    @property
    def weighted_recall(self) -> float:
        return self.weighted["recall"]


def per_class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    """
    由混淆矩阵计算每个标签的指标、总体准确率和加权平均

    Raises:
        MetricsError: 矩阵全为 0
    """
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise MetricsError("混淆矩阵全为 0，无法计算指标")

    tp = np.diag(counts).astype(np.int64)
    support = counts.sum(axis=1)
    fn = support - tp
    fp = counts.sum(axis=0) - tp
    tn = total - tp - fn - fp

    tpr, tpr_undef = _ratio(tp, tp + fn)
    fpr, fpr_undef = _ratio(fp, fp + tn)
    precision, precision_undef = _ratio(tp, tp + fp)
    rates = {
        "tpr": tpr,
        "fpr": fpr,
        "tnr": 1.0 - fpr,
        "fnr": 1.0 - tpr,
        "precision": precision,
        "recall": tpr,
    }

    ill_defined = []
    for name, mask in (("tpr", tpr_undef), ("fpr", fpr_undef), ("precision", precision_undef)):
        ill_defined.extend(f"{name}:{cm.labels[i]}" for i in np.nonzero(mask)[0])

    weights = support / float(total)
    weighted = {name: float(np.dot(weights, values)) for name, values in rates.items()}

    return ClassMetrics(
        labels=cm.labels,
        support=tuple(int(v) for v in support),
        tp=tuple(int(v) for v in tp),
        fp=tuple(int(v) for v in fp),
        fn=tuple(int(v) for v in fn),
        tn=tuple(int(v) for v in tn),
        rates={name: tuple(float(v) for v in values) for name, values in rates.items()},
        accuracy=cm.trace / float(total),
        weighted=weighted,
        ill_defined=tuple(ill_defined),
    )


@dataclass(frozen=True)
class StageFigures:
    """只有汇总值的阶段结果（例如已发表的汇总数字）"""

    accuracy: float
    weighted_precision: float
    weighted_recall: float


@dataclass(frozen=True)
class CombinedMetrics:
    accuracy: float
    precision: float
    recall: float

    def to_dict(self) -> Dict[str, float]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall}


def combined_two_stage(stage1, stage2) -> CombinedMetrics:
    """
    前两级的组合指标：准确率、加权精确率、加权召回率分别相乘

    Args:
        stage1: ClassMetrics 或 StageFigures
        stage2: ClassMetrics 或 StageFigures
    """
    return CombinedMetrics(
        accuracy=stage1.accuracy * stage2.accuracy,
        precision=stage1.weighted_precision * stage2.weighted_precision,
        recall=stage1.weighted_recall * stage2.weighted_recall,
    )


# ============ 阶段报告 ============

@dataclass
class StageReport:
    """
    一次评估的结果

    name 标识阶段（stage1 / stage2 / stage3-c4 / end-to-end 等），
    semantics 标识评估口径（按真实标签路由 或 端到端）。
    """

    name: str
    semantics: str
    matrix: ConfusionMatrix
    label_names: Dict[int, str] = field(default_factory=dict)
    metrics: Optional[ClassMetrics] = None

    def __post_init__(self):
        if self.semantics not in SEMANTICS:
            raise MetricsError(f"未知评估口径: {self.semantics}")
        if self.metrics is None:
            self.metrics = per_class_metrics(self.matrix)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StageReport):
            return NotImplemented
        return (self.name == other.name
                and self.semantics == other.semantics
                and self.matrix == other.matrix
                and self.label_names == other.label_names)

    @property
    def correct(self) -> int:
        return self.matrix.trace

    @property
    def incorrect(self) -> int:
        return self.matrix.total - self.matrix.trace

    @property
    def accuracy(self) -> float:
        return self.metrics.accuracy

    def label_name(self, label: int) -> str:
        return self.label_names.get(label, str(label))

    def to_dict(self) -> Dict:
        m = self.metrics
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "name": self.name,
            "semantics": self.semantics,
            "labels": list(self.matrix.labels),
            "label_names": {str(k): v for k, v in self.label_names.items()},
            "counts": self.matrix.counts.tolist(),
            "correct": self.correct,
            "incorrect": self.incorrect,
            "accuracy": m.accuracy,
            "per_class": [
                dict({"label": label, "support": m.support[i]},
                     **{name: m.rates[name][i] for name in RATE_NAMES})
                for i, label in enumerate(m.labels)
            ],
            "weighted": dict(m.weighted),
            "ill_defined": list(m.ill_defined),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "StageReport":
        if data.get("format_version") != REPORT_FORMAT_VERSION:
            raise MetricsError(f"不支持的报告版本: {data.get('format_version')!r}")
        try:
            matrix = ConfusionMatrix(data["labels"], data["counts"])
            report = cls(
                name=data["name"],
                semantics=data["semantics"],
                matrix=matrix,
                label_names={int(k): v for k, v in (data.get("label_names") or {}).items()},
            )
        except KeyError as e:
            raise MetricsError(f"报告缺少字段 {e}") from None
        if "correct" in data and int(data["correct"]) != report.correct:
            raise MetricsError("报告中的正确数与混淆矩阵的迹不一致")
        return report


# ============ 渲染 ============

def _format_matrix(report: StageReport) -> List[str]:
    labels = report.matrix.labels
    names = [report.label_name(v) for v in labels]
    width = max([len(n) for n in names] + [len(str(report.matrix.counts.max(initial=0))), 6]) + 2
    lines = ["Classified as →".ljust(width + 4) + "".join(n.rjust(width) for n in names)]
    for name, row in zip(names, report.matrix.counts):
        lines.append(name.ljust(width + 4) + "".join(str(int(v)).rjust(width) for v in row))
    return lines


def _format_metrics(report: StageReport) -> List[str]:
    m = report.metrics
    header = ["Class", "Accuracy", "TPR", "FPR", "TNR", "FNR", "Precision", "Recall"]
    widths = [12, 10, 8, 8, 8, 8, 10, 8]
    lines = ["".join(h.ljust(w) for h, w in zip(header, widths))]
    for i, label in enumerate(m.labels):
        accuracy = f"{m.accuracy * 100:.2f}%" if i == 0 else ""
        cells = [report.label_name(label), accuracy] + [f"{m.rates[n][i]:.3f}" for n in RATE_NAMES]
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    cells = ["Weighted", ""] + [f"{m.weighted[n]:.3f}" for n in RATE_NAMES]
    lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    return lines


def render_text(report: StageReport) -> str:
    lines = [f"== {report.name} ({report.semantics}) =="]
    lines.extend(_format_matrix(report))
    lines.append("")
    lines.extend(_format_metrics(report))
    lines.append(f"Accuracy: {report.accuracy * 100:.2f}%  "
                 f"Correct Instances: {report.correct}  Incorrect Instances: {report.incorrect}")
    if report.metrics.ill_defined:
        lines.append(f"无定义比值（记为 0）: {', '.join(report.metrics.ill_defined)}")
    return "\n".join(lines) + "\n"


def render_combined(combined: CombinedMetrics) -> str:
    return (f"Stage 1 × Stage 2: accuracy {combined.accuracy * 100:.2f}%  "
            f"precision {combined.precision:.3f}  recall {combined.recall:.3f}\n")


def render_report(r: StageReport, fmt: str = "text") -> bytes:
    """
    渲染单个报告

    Args:
        r: 阶段报告
        fmt: "text"（对齐的表格）或 "json"（机器可读，整数计数与完整精度比值）
    """
    if fmt == "text":
        return render_text(r).encode("utf-8")
    if fmt == "json":
        return json.dumps(r.to_dict(), ensure_ascii=False, indent=2).encode("utf-8")
    raise MetricsError(f"未知报告格式: {fmt}")


def parse_report(data: bytes) -> StageReport:
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MetricsError(f"报告解析失败: {e}") from None
    return StageReport.from_dict(document)


def render_bundle(reports: Sequence[StageReport], combined: Optional[CombinedMetrics] = None,
                  fmt: str = "text") -> bytes:
    """渲染一次评估产生的全部报告"""
    if fmt == "text":
        parts = [render_text(r) for r in reports]
        if combined is not None:
            parts.append(render_combined(combined))
        return "\n".join(parts).encode("utf-8")
    if fmt == "json":
        document = {
            "format_version": REPORT_FORMAT_VERSION,
            "reports": [r.to_dict() for r in reports],
            "combined": combined.to_dict() if combined is not None else None,
        }
        return json.dumps(document, ensure_ascii=False, indent=2).encode("utf-8")
    raise MetricsError(f"未知报告格式: {fmt}")


def parse_bundle(data: bytes) -> Tuple[List[StageReport], Optional[CombinedMetrics]]:
    """解析 render_bundle 的 json 输出；单个报告文档也可接受"""
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MetricsError(f"报告解析失败: {e}") from None
    if "reports" not in document:
        return [StageReport.from_dict(document)], None
    if document.get("format_version") != REPORT_FORMAT_VERSION:
        raise MetricsError(f"不支持的报告版本: {document.get('format_version')!r}")
    reports = [StageReport.from_dict(r) for r in document["reports"]]
    combined = document.get("combined")
    return reports, CombinedMetrics(**combined) if combined else None


# ============ 已发表的混淆矩阵 ============

@dataclass(frozen=True)
class PublishedTable:
    """公布的混淆矩阵及其对应的汇总值（准确率以百分比给出）"""

    name: str
    labels: Tuple[int, ...]
    counts: Tuple[Tuple[int, ...], ...]
    accuracy_percent: float
    correct: int
    incorrect: int

    def report(self, label_names: Optional[Dict[int, str]] = None) -> StageReport:
        return StageReport(self.name, GROUND_TRUTH_ROUTED, ConfusionMatrix(self.labels, self.counts),
                           label_names=dict(label_names or {}))


# 第二级类别 2 的表头与类别 1 重复，按行标签改为 25–28、33–35；
# 类别 7 最后一行的 "22" 按子类 24 处理
_PUBLISHED = (
    PublishedTable("stage1", (0, 1), (
        (71309, 370),
        (1313, 18597),
    ), 98.16, 89906, 1683),
    PublishedTable("stage2", (1, 2, 3, 4, 5, 6, 7), (
        (1881, 650, 0, 0, 0, 0, 0),
        (511, 3781, 0, 0, 0, 0, 0),
        (0, 0, 2522, 15, 0, 2, 0),
        (0, 0, 22, 6835, 0, 5, 0),
        (0, 0, 0, 0, 1666, 0, 0),
        (0, 0, 6, 15, 0, 706, 0),
        (0, 0, 0, 0, 10, 0, 1283),
    ), 93.79, 18674, 1236),
    PublishedTable("stage3-c1", (29, 30, 31, 32), (
        (400, 7, 86, 87),
        (0, 706, 0, 0),
        (52, 0, 527, 59),
        (74, 0, 83, 450),
    ), 82.30, 2083, 448),
    PublishedTable("stage3-c2", (25, 26, 27, 28, 33, 34, 35), (
        (368, 41, 3, 42, 2, 4, 17),
        (37, 479, 0, 45, 0, 4, 6),
        (2, 0, 671, 1, 2, 0, 14),
        (35, 74, 3, 423, 51, 13, 26),
        (0, 0, 7, 6, 505, 0, 15),
        (0, 0, 7, 2, 0, 647, 27),
        (1, 0, 7, 3, 10, 17, 675),
    ), 87.79, 3768, 524),
    PublishedTable("stage3-c3", (13, 14, 15, 16, 17), (
        (513, 1, 1, 0, 2),
        (0, 516, 1, 0, 1),
        (1, 1, 506, 1, 1),
        (0, 1, 1, 540, 1),
        (0, 2, 1, 0, 448),
    ), 99.37, 2523, 16),
    PublishedTable("stage3-c4", tuple(range(1, 13)), (
        (569, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0),
        (1, 431, 0, 0, 0, 6, 0, 0, 1, 6, 0, 0),
        (0, 0, 573, 1, 0, 0, 0, 0, 0, 0, 0, 0),
        (0, 0, 0, 655, 0, 0, 0, 0, 0, 0, 0, 0),
        (0, 0, 0, 0, 481, 2, 0, 1, 0, 0, 0, 1),
        (1, 2, 0, 0, 0, 692, 0, 0, 0, 5, 0, 0),
        (1, 0, 0, 1, 0, 0, 512, 0, 1, 0, 0, 0),
        (0, 0, 0, 0, 2, 0, 0, 609, 0, 1, 0, 0),
        (0, 0, 0, 1, 0, 0, 0, 0, 458, 1, 0, 0),
        (0, 1, 0, 0, 0, 0, 1, 0, 2, 515, 0, 0),
        (0, 1, 1, 2, 0, 0, 0, 0, 0, 0, 624, 0),
        (0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 696),
    ), 99.32, 6815, 47),
    PublishedTable("stage3-c5", (19, 21, 22), (
        (544, 1, 0),
        (0, 588, 0),
        (0, 0, 533),
    ), 99.94, 1665, 1),
    PublishedTable("stage3-c7", (20, 23, 24), (
        (187, 0, 5),
        (0, 693, 0),
        (2, 0, 406),
    ), 99.47, 1286, 7),
)

# 组合指标公布值：第一级 / 第二级的准确率、加权精确率、加权召回率
PUBLISHED_STAGE_FIGURES = {
    "stage1": StageFigures(accuracy=0.9816, weighted_precision=0.982, weighted_recall=0.982),
    "stage2": StageFigures(accuracy=0.9379, weighted_precision=0.937, weighted_recall=0.938),
}


def published_tables() -> Tuple[PublishedTable, ...]:
    return _PUBLISHED
