#!/usr/bin/env python3
"""
CascadeIDS 流水线管理脚本

用法:
    python manage.py <命令> [参数...] [--config config.yml] [--seed N] [--out DIR]

命令: synth / impute / split / train / eval / report / help
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

import yaml

PROJECT_ROOT = Path(__file__).parent.absolute()
sys.path.insert(0, str(PROJECT_ROOT / "src"))

from cascade import CascadeError, evaluate_end_to_end, evaluate_stagewise, load_cascade, save_cascade, train_cascade  # noqa: E402
from config import EVALUATION_SEMANTICS, REPORT_FORMATS, ConfigError, PipelineConfig, load_config  # noqa: E402
from forest import ForestError  # noqa: E402
from imputation import ImputationError, mice_impute_with_report  # noqa: E402
from ingestion import (LoadError, SynthesisSpec, generate_synthetic, load_dataset,  # noqa: E402
                       published_scaled_spec, uniform_missing_rates, write_dataset)
from logger import log_error, log_info, log_success, log_warning  # noqa: E402
from metrics import (PUBLISHED_STAGE_FIGURES, MetricsError, combined_two_stage,  # noqa: E402
                     parse_bundle, published_tables, render_bundle)
from partitioning import PartitionError, load_fold, write_partition  # noqa: E402
from runner import run_step  # noqa: E402
from taxonomy import TAXONOMY, TaxonomyError  # noqa: E402

# 命令层捕获的错误；其余异常由 run_step 兜底
PIPELINE_ERRORS = (
    ConfigError, LoadError, ImputationError, PartitionError, ForestError,
    CascadeError, MetricsError, TaxonomyError, OSError, yaml.YAMLError,
)

BINARY_NAMES = {0: "Normal", 1: "Attack"}


# ============ 工具函数 ============
def _fail(message: str) -> int:
    log_error(message)
    return 1


def _write_manifest(path: Path, data: Dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, allow_unicode=True, sort_keys=False)


def _stdout(data: bytes) -> None:
    sys.stdout.write(data.decode("utf-8"))
    sys.stdout.flush()


def load_synthesis_spec(path: Optional[str], cfg: PipelineConfig) -> SynthesisSpec:
    """
    读取合成参数文件（YAML）

    给出 counts 时按子类计数生成，否则按原始数据集比例乘以 scale。
    可选键: scale, seed, missing_rate, response_overlap, counts, ranges,
    missing_rates, linear_relations（目标: [来源, 斜率, 截距]）
    """
    raw: Dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"合成参数文件 {path} 顶层必须是映射")

    seed = int(raw.get("seed", cfg.synthesis.seed))
    missing_rate = float(raw.get("missing_rate", cfg.synthesis.missing_rate))
    response_overlap = float(raw.get("response_overlap", cfg.synthesis.response_overlap))
    if raw.get("counts") is not None:
        spec = SynthesisSpec(counts={int(k): int(v) for k, v in raw["counts"].items()}, seed=seed,
                             missing_rates=uniform_missing_rates(missing_rate),
                             response_overlap=response_overlap)
    else:
        spec = published_scaled_spec(float(raw.get("scale", cfg.synthesis.scale)), seed=seed,
                                     missing_rate=missing_rate, response_overlap=response_overlap)
    spec.ranges.update({k: (float(v[0]), float(v[1])) for k, v in (raw.get("ranges") or {}).items()})
    spec.missing_rates.update({k: float(v) for k, v in (raw.get("missing_rates") or {}).items()})
    spec.linear_relations.update({
        k: (str(v[0]), float(v[1]), float(v[2])) for k, v in (raw.get("linear_relations") or {}).items()
    })
    spec.validate()
    return spec


# ============ 命令实现 ============
def cmd_synth(spec_path: Optional[str], cfg: PipelineConfig) -> int:
    """生成合成数据集和生成清单"""
    out = cfg.output_path
    try:
        spec = load_synthesis_spec(spec_path, cfg)
        dataset = generate_synthetic(spec)
        data_path = out / "synthetic.csv"
        write_dataset(dataset, data_path)
        _write_manifest(out / "synth_manifest.yml", {
            "command": "synth",
            "spec": str(Path(spec_path).resolve()) if spec_path else None,
            "seed": int(spec.seed),
            "counts": {int(k): int(v) for k, v in sorted(spec.counts.items())},
            "total": spec.total,
            "missing_rates": dict(sorted(spec.missing_rates.items())),
            "response_overlap": float(spec.response_overlap),
            "linear_relations": {k: list(v) for k, v in spec.linear_relations.items()},
            "output": str(data_path.resolve()),
            "fingerprint": dataset.fingerprint(),
        })
    except (ValueError, *PIPELINE_ERRORS) as e:
        return _fail(f"生成合成数据失败: {e}")
    log_success(f"合成数据已写出: {data_path} ({len(dataset)} 条)")
    return 0


def cmd_impute(in_path: Optional[str], cfg: PipelineConfig) -> int:
    """MICE 插补并写出补全后的数据集和插补清单"""
    in_path = in_path or cfg.dataset
    out = cfg.output_path
    try:
        dataset = load_dataset(in_path)
        imputed, report = mice_impute_with_report(dataset, cfg.imputation)
        data_path = out / "imputed.csv"
        write_dataset(imputed, data_path)
        manifest = {"command": "impute", "input": str(Path(in_path).resolve()),
                    "input_fingerprint": dataset.fingerprint(), "output": str(data_path.resolve()),
                    "output_fingerprint": imputed.fingerprint()}
        manifest.update(report.to_dict())
        manifest["config"] = cfg.to_dict()["imputation"]
        _write_manifest(out / "imputation_manifest.yml", manifest)
    except ImputationError as e:
        return _fail(f"插补失败（特征 {e.feature}）: {e}")
    except PIPELINE_ERRORS as e:
        return _fail(f"插补失败: {e}")
    log_success(f"补全数据已写出: {data_path}")
    return 0


def cmd_split(in_path: Optional[str], cfg: PipelineConfig) -> int:
    """分层三等分并写出分片与折清单"""
    in_path = in_path or cfg.dataset
    try:
        dataset = load_dataset(in_path)
        if not dataset.is_complete:
            return _fail("数据集含缺失值，请先运行 impute 插补")
        manifests = write_partition(dataset, in_path, cfg.output_path / "folds", cfg.split_seed)
    except PIPELINE_ERRORS as e:
        return _fail(f"分片失败: {e}")
    for path in manifests:
        log_info(f"折清单: {path}")
    log_success("分片完成")
    return 0


def cmd_train(fold_path: Optional[str], cfg: PipelineConfig) -> int:
    """在折的训练视图上训练三级模型"""
    if not fold_path:
        return _fail("train 需要折清单路径，例如 output/folds/fold_1.yml")
    try:
        train, _, manifest = load_fold(fold_path)
        if not train.is_complete:
            return _fail("训练集含缺失值，请先运行 impute 插补后重新 split")
        model = train_cascade(train, cfg.stages, TAXONOMY)
        model_dir = cfg.output_path / f"model_fold{manifest.get('fold_id', 0)}"
        save_cascade(model, model_dir)
        log = dict(model.training_log)
        log.update({"fold": str(Path(fold_path).resolve()), "fold_id": manifest.get("fold_id"),
                    "config": cfg.to_dict()["stages"]})
        _write_manifest(model_dir / "training_log.yml", log)
    except PIPELINE_ERRORS as e:
        return _fail(f"训练失败: {e}")

    populations = model.training_log
    log_info(f"第一级样本: {populations['stage1']}")
    log_info(f"第二级样本: {populations['stage2']}")
    for c, histogram in populations["stage3"].items():
        log_info(f"第三级类别 {c} 样本: {histogram}")
    log_info(f"DoS 直通样本: {populations['dos_passthrough']}")
    log_success(f"模型已保存到 {model_dir}")
    return 0


def cmd_eval(model_path: Optional[str], fold_path: Optional[str], semantics: str, fmt: str,
             cfg: PipelineConfig) -> int:
    """评估模型，输出各级报告和前两级组合指标"""
    if not model_path or not fold_path:
        return _fail("eval 需要模型清单和折清单路径")
    try:
        model = load_cascade(model_path, TAXONOMY)
        _, test, manifest = load_fold(fold_path)
        if not test.is_complete:
            return _fail("测试集含缺失值，请先运行 impute 插补后重新 split")

        reports = []
        combined = None
        stagewise_accuracy = {}
        if semantics in ("stagewise", "both"):
            stagewise = evaluate_stagewise(model, test)
            reports.extend(stagewise)
            by_name = {r.name: r for r in stagewise}
            stagewise_accuracy = {r.name: r.accuracy for r in stagewise}
            if "stage1" in by_name and "stage2" in by_name:
                combined = combined_two_stage(by_name["stage1"].metrics, by_name["stage2"].metrics)
                log_info(f"前两级组合准确率 {combined.accuracy * 100:.2f}%")
        if semantics in ("end2end", "both"):
            e2e = evaluate_end_to_end(model, test)
            reports.append(e2e)
            if stagewise_accuracy:
                worst = min(stagewise_accuracy.values())
                log_info(f"端到端准确率 {e2e.accuracy * 100:.2f}%，逐级最低准确率 {worst * 100:.2f}%")

        out = cfg.output_path / "reports"
        stem = f"eval_fold{manifest.get('fold_id', 0)}"
        formats = sorted(set(cfg.evaluation.formats) | {fmt})
        written = []
        for report_format in formats:
            path = out / f"{stem}.{'txt' if report_format == 'text' else 'json'}"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(render_bundle(reports, combined, report_format))
            written.append(str(path))
            log_info(f"报告已写出: {path}")
        eval_manifest = out / "eval_manifest.yml"
        _write_manifest(eval_manifest, {
            "command": "eval",
            "model": str(Path(model_path).resolve()),
            "fold": str(Path(fold_path).resolve()),
            "fold_id": manifest.get("fold_id"),
            "fingerprint": manifest.get("fingerprint", ""),
            "semantics": semantics,
            "formats": formats,
            "reports": written,
            "config": cfg.to_dict(),
        })
        log_info(f"评估清单已写出: {eval_manifest}")
    except PIPELINE_ERRORS as e:
        return _fail(f"评估失败: {e}")

    _stdout(render_bundle(reports, combined, fmt))
    return 0


def cmd_report(paths: List[str], published: bool, fmt: str) -> int:
    """显示已保存的 json 报告，或用已发表的混淆矩阵重新计算各表"""
    if not published and not paths:
        return _fail("report 需要报告文件路径，或使用 --published")
    try:
        if published:
            reports = [
                t.report(BINARY_NAMES if t.name == "stage1" else None) for t in published_tables()
            ]
            by_name = {r.name: r for r in reports}
            combined = combined_two_stage(by_name["stage1"].metrics, by_name["stage2"].metrics)
            _stdout(render_bundle(reports, combined, fmt))
            if fmt == "text":
                quoted = combined_two_stage(PUBLISHED_STAGE_FIGURES["stage1"], PUBLISHED_STAGE_FIGURES["stage2"])
                print(f"公布数字相乘: accuracy {quoted.accuracy * 100:.2f}%  "
                      f"precision {quoted.precision:.3f}  recall {quoted.recall:.3f}")
            return 0
        for path in paths:
            reports, combined = parse_bundle(Path(path).read_bytes())
            _stdout(render_bundle(reports, combined, fmt))
    except PIPELINE_ERRORS as e:
        return _fail(f"报告处理失败: {e}")
    return 0


def cmd_help() -> int:
    """显示帮助信息"""
    help_text = """
CascadeIDS 流水线管理脚本

用法:
    python manage.py <命令> [参数...] [选项]

命令:
  synth [--spec spec.yml]          生成合成数据集 -> <out>/synthetic.csv
  impute [数据集.csv]              MICE 插补 -> <out>/imputed.csv
  split [数据集.csv]               分层三等分 -> <out>/folds/fold_k.yml
  train <折清单>                   训练三级模型 -> <out>/model_foldk/cascade.yml
  eval <模型清单> <折清单>         评估模型 -> <out>/reports/
  report <报告.json...>            显示已保存的报告
  report --published               用已发表的混淆矩阵重新计算各表
  help                             显示帮助信息

选项:
  --config, -c <path>              配置文件（默认使用内置默认值）
  --seed <u64>                     主种子
  --out, -o <dir>                  输出目录（优先于 CASCADE_IDS_OUTPUT_DIR）
  --format {text,json}             报告格式
  --semantics {stagewise,end2end,both}
                                   评估口径

示例:
  python manage.py synth --out output
  python manage.py split output/synthetic.csv --out output
  python manage.py train output/folds/fold_1.yml --out output
  python manage.py eval output/model_fold1 output/folds/fold_1.yml --out output
"""
    print(help_text)
    return 0


# ============ 命令行模式 ============
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manage.py", add_help=False)
    parser.add_argument("command", nargs="?", default="help")
    parser.add_argument("paths", nargs="*")
    parser.add_argument("--config", "-c")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", "-o")
    parser.add_argument("--format", choices=REPORT_FORMATS, default="text")
    parser.add_argument("--semantics", choices=EVALUATION_SEMANTICS)
    parser.add_argument("--spec")
    parser.add_argument("--published", action="store_true")
    parser.add_argument("--help", "-h", action="store_true")
    return parser


def run_cli(argv: List[str]) -> int:
    """运行命令行模式"""
    args = build_parser().parse_intermixed_args(argv)
    command = args.command
    if args.help or command in ("help", "--help", "-h"):
        return cmd_help()

    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as e:
        return _fail(str(e))

    paths = args.paths
    first = paths[0] if paths else None
    second = paths[1] if len(paths) > 1 else None

    if command == "synth":
        func = lambda: cmd_synth(args.spec, cfg)  # noqa: E731
    elif command == "impute":
        func = lambda: cmd_impute(first, cfg)  # noqa: E731
    elif command == "split":
        func = lambda: cmd_split(first, cfg)  # noqa: E731
    elif command == "train":
        func = lambda: cmd_train(first, cfg)  # noqa: E731
    elif command == "eval":
        semantics = args.semantics or cfg.evaluation.semantics
        func = lambda: cmd_eval(first, second, semantics, args.format, cfg)  # noqa: E731
    elif command == "report":
        func = lambda: cmd_report(paths, args.published, args.format)  # noqa: E731
    else:
        log_warning(f"未知命令: {command}")
        cmd_help()
        return 1

    return run_step(command, func, cfg.notify, output_dir=str(cfg.output_path))


# ============ 主函数 ============
def main():
    """主函数入口"""
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
