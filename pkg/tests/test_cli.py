import json

import pytest
import yaml

from conftest import uniform_counts
from manage import run_cli
from metrics import parse_bundle
from partitioning import write_index_list


@pytest.fixture
def workspace(tmp_path):
    """小森林配置 + 按子类计数的合成参数"""
    config = {
        "version": 1,
        "seed": 7,
        "imputation": {"chain_iterations": 2},
        "stages": {name: {"num_trees": 3} for name in ("stage1", "stage2", "stage3")},
        "evaluation": {"formats": ["text", "json"]},
    }
    (tmp_path / "config.yml").write_text(yaml.safe_dump(config), encoding="utf-8")
    spec = {"counts": uniform_counts(), "missing_rates": {"Gain": 0.1, "Solenoid": 0.1}}
    (tmp_path / "spec.yml").write_text(yaml.safe_dump(spec), encoding="utf-8")
    return tmp_path


def _json_from_stdout(text):
    """标准输出中日志行与报告交错，取出其中的 JSON 文档"""
    document, _ = json.JSONDecoder().raw_decode(text[text.index("{\n"):])
    return document


def _run(workspace, *argv, out="out"):
    return run_cli(list(argv) + ["--config", str(workspace / "config.yml"), "--out", str(workspace / out)])


def test_help():
    assert run_cli([]) == 0
    assert run_cli(["help"]) == 0


def test_unknown_command(workspace):
    assert _run(workspace, "frobnicate") == 1


def test_bad_config(tmp_path):
    (tmp_path / "config.yml").write_text("version: 3\n", encoding="utf-8")
    assert run_cli(["synth", "--config", str(tmp_path / "config.yml")]) == 1


def test_full_pipeline(workspace, capsys):
    out = workspace / "out"
    assert _run(workspace, "synth", "--spec", str(workspace / "spec.yml")) == 0
    assert (out / "synthetic.csv").exists()
    manifest = yaml.safe_load((out / "synth_manifest.yml").read_text(encoding="utf-8"))
    assert manifest["total"] == 240

    assert _run(workspace, "impute", str(out / "synthetic.csv")) == 0
    imputation = yaml.safe_load((out / "imputation_manifest.yml").read_text(encoding="utf-8"))
    assert imputation["imputed_cells"] > 0
    assert imputation["seed"] == 9

    assert _run(workspace, "split", str(out / "imputed.csv")) == 0
    fold = out / "folds" / "fold_1.yml"
    assert fold.exists()

    assert _run(workspace, "train", str(fold)) == 0
    model_dir = out / "model_fold1"
    assert (model_dir / "cascade.yml").exists()
    training_log = yaml.safe_load((model_dir / "training_log.yml").read_text(encoding="utf-8"))
    assert training_log["stage1"] == {"Normal": 20, "Attack": 140}
    assert training_log["seeds"]["stage1"] == 18

    capsys.readouterr()
    assert _run(workspace, "eval", str(model_dir), str(fold), "--format", "json") == 0
    document = _json_from_stdout(capsys.readouterr().out)
    names = [r["name"] for r in document["reports"]]
    assert names[:2] == ["stage1", "stage2"]
    assert names[-1] == "end-to-end"
    assert document["combined"] is not None

    reports = out / "reports"
    assert (reports / "eval_fold1.txt").exists()
    parsed, combined = parse_bundle((reports / "eval_fold1.json").read_bytes())
    assert parsed[0].matrix.total == 80
    assert combined is not None

    eval_manifest = yaml.safe_load((reports / "eval_manifest.yml").read_text(encoding="utf-8"))
    assert eval_manifest["command"] == "eval"
    assert eval_manifest["model"] == str(model_dir.resolve())
    assert eval_manifest["fold"] == str(fold.resolve())
    assert eval_manifest["fingerprint"] == yaml.safe_load(fold.read_text(encoding="utf-8"))["fingerprint"]
    assert eval_manifest["semantics"] == "both"
    assert eval_manifest["formats"] == ["json", "text"]
    assert len(eval_manifest["reports"]) == 2
    assert eval_manifest["config"]["stages"]["stage1"]["num_trees"] == 3

    assert run_cli(["report", str(reports / "eval_fold1.json")]) == 0
    assert "Classified as →" in capsys.readouterr().out


def test_eval_semantics_selection(workspace, capsys):
    out = workspace / "out"
    assert _run(workspace, "synth", "--spec", str(workspace / "spec.yml")) == 0
    assert _run(workspace, "impute", str(out / "synthetic.csv")) == 0
    assert _run(workspace, "split", str(out / "imputed.csv")) == 0
    fold = out / "folds" / "fold_2.yml"
    assert _run(workspace, "train", str(fold)) == 0

    capsys.readouterr()
    assert _run(workspace, "eval", str(out / "model_fold2"), str(fold),
                "--semantics", "end2end", "--format", "json") == 0
    document = _json_from_stdout(capsys.readouterr().out)
    assert [r["name"] for r in document["reports"]] == ["end-to-end"]
    assert document["combined"] is None


def test_report_published(capsys):
    assert run_cli(["report", "--published"]) == 0
    text = capsys.readouterr().out
    assert "98.16%" in text
    assert "93.79%" in text
    assert "公布数字相乘" in text


def test_report_requires_input():
    assert run_cli(["report"]) == 1


def test_all_zero_counts(workspace):
    (workspace / "zero.yml").write_text(yaml.safe_dump({"counts": {0: 0, 5: 0}}), encoding="utf-8")
    assert _run(workspace, "synth", "--spec", str(workspace / "zero.yml")) == 0
    lines = (workspace / "out" / "synthetic.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1


def test_unwritable_output(workspace):
    (workspace / "blocker").write_text("", encoding="utf-8")
    assert _run(workspace, "synth", "--spec", str(workspace / "spec.yml"), out="blocker/sub") == 1


def test_split_rejects_missing_cells(workspace):
    assert _run(workspace, "synth", "--spec", str(workspace / "spec.yml")) == 0
    assert _run(workspace, "split", str(workspace / "out" / "synthetic.csv")) == 1
    assert not (workspace / "out" / "folds").exists()


def test_train_rejects_missing_cells(workspace):
    assert _run(workspace, "synth", "--spec", str(workspace / "spec.yml")) == 0
    folds = workspace / "manual"
    write_index_list(range(0, 240, 2), folds / "train.txt")
    write_index_list(range(1, 240, 2), folds / "test.txt")
    manifest = {"fold_id": 1, "dataset": str(workspace / "out" / "synthetic.csv"),
                "train": "train.txt", "test": "test.txt"}
    (folds / "fold_1.yml").write_text(yaml.safe_dump(manifest), encoding="utf-8")
    assert _run(workspace, "train", str(folds / "fold_1.yml")) == 1
    assert not (workspace / "out" / "model_fold1").exists()


def test_impute_names_fully_missing_feature(workspace):
    (workspace / "allgone.yml").write_text(
        yaml.safe_dump({"counts": {0: 10}, "missing_rates": {"Gain": 1.0}}), encoding="utf-8")
    assert _run(workspace, "synth", "--spec", str(workspace / "allgone.yml")) == 0
    assert _run(workspace, "impute", str(workspace / "out" / "synthetic.csv")) == 1


def test_same_seed_same_outputs(workspace):
    for out in ("a", "b"):
        assert _run(workspace, "synth", "--spec", str(workspace / "spec.yml"), out=out) == 0
        assert _run(workspace, "impute", str(workspace / out / "synthetic.csv"), out=out) == 0
        assert _run(workspace, "split", str(workspace / out / "imputed.csv"), out=out) == 0

    def read(out, name):
        return (workspace / out / name).read_bytes()

    assert read("a", "synthetic.csv") == read("b", "synthetic.csv")
    assert read("a", "imputed.csv") == read("b", "imputed.csv")
    for k in (1, 2, 3):
        assert read("a", f"folds/split_{k}.txt") == read("b", f"folds/split_{k}.txt")
    manifest_a = yaml.safe_load(read("a", "synth_manifest.yml"))
    manifest_b = yaml.safe_load(read("b", "synth_manifest.yml"))
    assert manifest_a["fingerprint"] == manifest_b["fingerprint"]
    assert manifest_a["seed"] == manifest_b["seed"] == 10
