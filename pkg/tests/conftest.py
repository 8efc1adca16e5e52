import pytest

from ingestion import SynthesisSpec, generate_synthetic
from taxonomy import TAXONOMY


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """日志写到临时目录，清除输出目录覆盖"""
    monkeypatch.setenv("CASCADE_IDS_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.delenv("CASCADE_IDS_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("DEBUG", raising=False)
    return tmp_path


def uniform_counts(per_subclass: int = 6, normal: int = 30):
    counts = {0: normal}
    counts.update({s: per_subclass for s in TAXONOMY.subclasses})
    return counts


@pytest.fixture
def make_synthetic():
    """按子类计数生成合成数据集的工厂"""

    def factory(counts=None, seed=7, **kwargs):
        spec = SynthesisSpec(counts=counts if counts is not None else uniform_counts(), seed=seed, **kwargs)
        return generate_synthetic(spec)

    return factory


@pytest.fixture
def small_dataset(make_synthetic):
    return make_synthetic()
