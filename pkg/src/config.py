#!/usr/bin/env python3
"""
流水线配置（config.yml）

未显式给出的种子由主种子加固定偏移得到：
split +1，imputation +2，synthesis +3，stage1 +11，stage2 +12，stage3 +13
（第三级每个类别再加上类别号）。
"""
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import yaml

from cascade import StageConfigs
from forest import TrainConfig
from imputation import ImputationConfig, ImputationError

CONFIG_VERSION = 1
OUTPUT_DIR_ENV = "CASCADE_IDS_OUTPUT_DIR"

SEED_OFFSETS = {
    "split": 1,
    "imputation": 2,
    "synthesis": 3,
    "stage1": 11,
    "stage2": 12,
    "stage3": 13,
}

STAGE_BATCH_DEFAULTS = {"stage1": 1000, "stage2": 100, "stage3": 10}

EVALUATION_SEMANTICS = ("stagewise", "end2end", "both")
REPORT_FORMATS = ("text", "json")

_STAGE_KEYS = set(TrainConfig.__dataclass_fields__)
_IMPUTATION_KEYS = set(ImputationConfig.__dataclass_fields__)


class ConfigError(ValueError):
    """配置文件缺失或内容非法"""


@dataclass
class SynthesisSettings:
    """synth 命令的默认参数（可被 --spec 文件覆盖）"""

    scale: float = 0.01
    missing_rate: float = 0.0
    response_overlap: float = 0.0
    seed: int = 0


@dataclass
class EvaluationSettings:
    semantics: str = "both"
    formats: List[str] = field(default_factory=lambda: ["text", "json"])


@dataclass
class PipelineConfig:
    dataset: str = "data/gas_pipeline.csv"
    output_dir: str = "output"
    seed: int = 0
    split_seed: int = 1
    imputation: ImputationConfig = field(default_factory=ImputationConfig)
    stages: StageConfigs = field(default_factory=StageConfigs)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    notify: Dict = field(default_factory=dict)
    source: Optional[str] = None

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> Dict:
        """写入各命令清单的配置快照"""
        return {
            "version": CONFIG_VERSION,
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "split": {"seed": self.split_seed},
            "imputation": {
                "chain_iterations": self.imputation.chain_iterations,
                "seed": self.imputation.seed,
                "numeric_model": self.imputation.numeric_model,
                "categorical_model": self.imputation.categorical_model,
                "initial_fill": self.imputation.initial_fill,
            },
            "stages": {
                "stage1": self.stages.stage1.to_dict(),
                "stage2": self.stages.stage2.to_dict(),
                "stage3": self.stages.stage3.to_dict(),
            },
            "evaluation": {"semantics": self.evaluation.semantics, "formats": list(self.evaluation.formats)},
            "synthesis": {
                "scale": self.synthesis.scale,
                "missing_rate": self.synthesis.missing_rate,
                "response_overlap": self.synthesis.response_overlap,
                "seed": self.synthesis.seed,
            },
        }


def _check_seed(name: str, value) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} 必须是整数，实际为 {value!r}") from None
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"{name} 必须是 64 位无符号整数，实际为 {value!r}")
    return seed


def _section(raw: Dict, key: str) -> Dict:
    value = raw.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"配置项 {key} 必须是映射")
    return value


def _seed_for(section: Dict, part: str, master: int) -> int:
    if section.get("seed") is not None:
        return _check_seed(f"{part}.seed", section["seed"])
    return _check_seed(f"{part}.seed", master + SEED_OFFSETS[part])


def _stage_config(stages: Dict, name: str, master: int) -> TrainConfig:
    section = stages.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"stages.{name} 必须是映射")
    unknown = set(section) - _STAGE_KEYS
    if unknown:
        raise ConfigError(f"stages.{name} 含未知参数: {sorted(unknown)}")
    values = dict(section)
    values["seed"] = _seed_for(section, name, master)
    values.setdefault("batch_size", STAGE_BATCH_DEFAULTS[name])
    return TrainConfig(**values)


def parse_config(raw: Optional[Dict], seed: Optional[int] = None, out: Optional[str] = None,
                 source: Optional[str] = None) -> PipelineConfig:
    """
    由 YAML 文档构造 PipelineConfig

    Args:
        raw: yaml.safe_load 的结果；None 表示全部取默认值
        seed: 命令行 --seed，替换主种子（显式写出的各部分种子仍然优先）
        out: 命令行 --out，优先于环境变量和配置文件
        source: 配置文件路径（仅用于记录）
    """
    if raw is None:
        raw = {"version": CONFIG_VERSION}
    if not isinstance(raw, dict):
        raise ConfigError("配置文件顶层必须是映射")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"不支持的配置版本: {raw.get('version')!r}（当前为 {CONFIG_VERSION}）")

    master = _check_seed("seed", seed if seed is not None else raw.get("seed", 0))

    imputation_raw = _section(raw, "imputation")
    unknown = set(imputation_raw) - _IMPUTATION_KEYS
    if unknown:
        raise ConfigError(f"imputation 含未知参数: {sorted(unknown)}")
    imputation_values = dict(imputation_raw)
    imputation_values["seed"] = _seed_for(imputation_raw, "imputation", master)
    try:
        imputation = ImputationConfig(**imputation_values)
    except ImputationError as e:
        raise ConfigError(str(e)) from None

    stages_raw = _section(raw, "stages")
    unknown = set(stages_raw) - set(STAGE_BATCH_DEFAULTS)
    if unknown:
        raise ConfigError(f"stages 含未知阶段: {sorted(unknown)}")
    stages = StageConfigs(
        _stage_config(stages_raw, "stage1", master),
        _stage_config(stages_raw, "stage2", master),
        _stage_config(stages_raw, "stage3", master),
    )

    evaluation_raw = _section(raw, "evaluation")
    evaluation = EvaluationSettings(
        semantics=evaluation_raw.get("semantics", "both"),
        formats=list(evaluation_raw.get("formats", ["text", "json"])),
    )
    if evaluation.semantics not in EVALUATION_SEMANTICS:
        raise ConfigError(f"evaluation.semantics 必须是 {EVALUATION_SEMANTICS} 之一")
    for fmt in evaluation.formats:
        if fmt not in REPORT_FORMATS:
            raise ConfigError(f"evaluation.formats 含未知格式: {fmt}")

    synthesis_raw = _section(raw, "synthesis")
    synthesis = SynthesisSettings(
        scale=float(synthesis_raw.get("scale", 0.01)),
        missing_rate=float(synthesis_raw.get("missing_rate", 0.0)),
        response_overlap=float(synthesis_raw.get("response_overlap", 0.0)),
        seed=_seed_for(synthesis_raw, "synthesis", master),
    )

    output_dir = str(raw.get("output_dir", "output"))
    if os.environ.get(OUTPUT_DIR_ENV):
        output_dir = os.environ[OUTPUT_DIR_ENV]
    if out:
        output_dir = out

    return PipelineConfig(
        dataset=str(raw.get("dataset", "data/gas_pipeline.csv")),
        output_dir=output_dir,
        seed=master,
        split_seed=_seed_for(_section(raw, "split"), "split", master),
        imputation=imputation,
        stages=stages,
        evaluation=evaluation,
        synthesis=synthesis,
        notify=_section(raw, "notify"),
        source=source,
    )


def load_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None,
                out: Optional[str] = None) -> PipelineConfig:
    """
    加载配置文件；path 为 None 时使用默认配置

    Raises:
        ConfigError: 文件不存在、YAML 解析失败或内容非法
    """
    if path is None:
        return parse_config(None, seed=seed, out=out)
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"未找到配置文件: {config_path}")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"配置文件 YAML 格式错误: {e}") from None
    return parse_config(raw, seed=seed, out=out, source=str(config_path))
