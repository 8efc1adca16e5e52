"""1/10 规模的完整流水线：合成 → 插补 → 分片 → 训练 → 路由与评估"""
import numpy as np
import pytest
import yaml

from cascade import StageConfigs, classify_batch, evaluate_end_to_end, evaluate_stagewise, train_cascade
from conftest import uniform_counts
from forest import TrainConfig
from imputation import ImputationConfig, detect_missing, mice_impute
from ingestion import generate_synthetic, published_scaled_spec
from manage import run_cli
from partitioning import make_folds, split_deviation, stratified_split3
from taxonomy import TAXONOMY

pytestmark = pytest.mark.slow

SEED = 5


@pytest.fixture(scope="module")
def scaled():
    """约 2.7 万条记录，可缺失特征 20% 缺失，插补后按第一折切开"""
    raw = generate_synthetic(published_scaled_spec(0.1, seed=SEED + 3, missing_rate=0.2))
    imputed = mice_impute(raw, ImputationConfig(chain_iterations=2, seed=SEED + 2))
    splits = stratified_split3(imputed, SEED + 1)
    fold = make_folds(splits)[0]
    return raw, imputed, splits, imputed.view(fold.train), imputed.view(fold.test)


@pytest.fixture(scope="module")
def model(scaled):
    _, _, _, train, _ = scaled
    return train_cascade(train, StageConfigs(
        stage1=TrainConfig(num_trees=10, seed=SEED + 11, batch_size=1000),
        stage2=TrainConfig(num_trees=10, seed=SEED + 12, batch_size=100),
        stage3=TrainConfig(num_trees=10, seed=SEED + 13, batch_size=10),
    ))


def test_scaled_dataset_is_imputed_and_stratified(scaled):
    raw, imputed, splits, _, _ = scaled
    assert 27000 <= len(raw) <= 27600
    assert detect_missing(raw).payload_density() == pytest.approx(0.2, abs=0.01)
    assert imputed.is_complete
    assert not detect_missing(imputed).any
    assert np.array_equal(imputed.subclass, raw.subclass)

    assert split_deviation(imputed.subclass, splits) <= 1
    sizes = [len(s) for s in splits]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(i for s in splits for i in s.indices) == list(range(len(imputed)))


def test_every_test_record_routes_to_a_closed_outcome(scaled, model):
    _, _, _, _, test = scaled
    model.counters.reset()
    binary, category, subclass = classify_batch(model, test.features)

    normal = binary == 0
    assert not category[normal].any()
    assert not subclass[normal].any()
    for c, s in zip(category[~normal], subclass[~normal]):
        assert c in TAXONOMY.categories
        assert s in TAXONOMY.category_subclasses(int(c))

    counts = model.counters.snapshot()
    assert counts["stage1"] == len(test)
    assert counts["stage2"] == int((~normal).sum())
    routed = counts.get("dos_rule", 0) + sum(v for k, v in counts.items() if k.startswith("stage3-c"))
    assert routed == counts["stage2"]


def test_both_accuracies_are_reported(scaled, model):
    _, _, _, _, test = scaled
    stagewise = {r.name: r for r in evaluate_stagewise(model, test)}
    end_to_end = evaluate_end_to_end(model, test)

    assert {"stage1", "stage2"} <= set(stagewise)
    assert all(r.matrix.total > 0 for r in stagewise.values())
    assert stagewise["stage1"].accuracy > 0.97
    assert stagewise["stage2"].accuracy > 0.75
    assert stagewise[f"stage3-c{model.dos_category}"].accuracy == 1.0
    assert end_to_end.name == "end-to-end"
    assert end_to_end.matrix.total == len(test)
    assert end_to_end.accuracy > 0.9


def _train_with(tmp_path, out):
    argv = ["--config", str(tmp_path / "config.yml"), "--out", str(tmp_path / out)]
    assert run_cli(["train", str(tmp_path / "out" / "folds" / "fold_1.yml")] + argv) == 0
    return tmp_path / out / "model_fold1"


def test_cli_training_is_byte_identical_for_a_fixed_seed(tmp_path):
    config = {"seed": 3, "stages": {name: {"num_trees": 4} for name in ("stage1", "stage2", "stage3")}}
    (tmp_path / "config.yml").write_text(yaml.safe_dump(config), encoding="utf-8")
    (tmp_path / "spec.yml").write_text(yaml.safe_dump({"counts": uniform_counts()}), encoding="utf-8")
    argv = ["--config", str(tmp_path / "config.yml"), "--out", str(tmp_path / "out")]
    assert run_cli(["synth", "--spec", str(tmp_path / "spec.yml")] + argv) == 0
    assert run_cli(["split", str(tmp_path / "out" / "synthetic.csv")] + argv) == 0

    first = _train_with(tmp_path, "first")
    second = _train_with(tmp_path, "second")
    models = sorted(p.name for p in first.glob("*.json"))
    assert "stage1.json" in models and "stage2.json" in models
    assert models == sorted(p.name for p in second.glob("*.json"))
    for name in models + ["cascade.yml"]:
        assert (first / name).read_bytes() == (second / name).read_bytes()
