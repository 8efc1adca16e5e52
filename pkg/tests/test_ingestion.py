import io

import numpy as np
import pytest

from ingestion import (
    Dataset,
    LoadError,
    SynthesisSpec,
    apportion,
    dataset_violations,
    format_number,
    generate_synthetic,
    load_dataset,
    published_scaled_spec,
    subclass_ranges,
    write_dataset,
)
from taxonomy import GAS_PIPELINE_SCHEMA, TAXONOMY

HEADER = ",".join(GAS_PIPELINE_SCHEMA.header)


def _row(labels=(0, 0, 0), **overrides):
    values = {name: "0" for name in GAS_PIPELINE_SCHEMA.names}
    values.update({"Address": "4", "Length": "16", "Function": "3"})
    for name, value in overrides.items():
        values[name.replace("_", " ")] = value
    fields = [values[name] for name in GAS_PIPELINE_SCHEMA.names] + [str(v) for v in labels]
    return ",".join(fields)


def _csv(*rows):
    return io.BytesIO(("\n".join((HEADER,) + rows) + "\n").encode("utf-8"))


def test_header_only_file_is_empty_dataset():
    d = load_dataset(_csv())
    assert len(d) == 0
    assert d.features.shape == (0, 17)


def test_empty_file_is_rejected():
    with pytest.raises(LoadError):
        load_dataset(io.BytesIO(b""))


def test_attack_row_labels():
    d = load_dataset(_csv(_row(), _row((1, 4, 1), Length="72")))
    assert len(d) == 2
    r = d.record(1)
    assert (r.binary, r.category, r.subclass) == (1, 4, 1)
    assert r.features[GAS_PIPELINE_SCHEMA.index_of("Length")] == 72.0


def test_wrong_header_is_rejected():
    bad = io.BytesIO(("x," + HEADER[HEADER.index(",") + 1:] + "\n").encode("utf-8"))
    with pytest.raises(LoadError, match="表头"):
        load_dataset(bad)


def test_extra_field_reports_row():
    with pytest.raises(LoadError) as e:
        load_dataset(_csv(_row(), _row() + ",9"))
    assert e.value.row == 2


def test_short_row_is_rejected():
    short = ",".join(_row().split(",")[1:])
    with pytest.raises(LoadError):
        load_dataset(_csv(_row(), short))


def test_unparseable_number_reports_row():
    with pytest.raises(LoadError, match="不是数字") as e:
        load_dataset(_csv(_row(), _row(), _row(Gain="abc")))
    assert e.value.row == 3


def test_inconsistent_labels_report_row():
    with pytest.raises(LoadError, match="subclass 13 belongs to category 3") as e:
        load_dataset(_csv(_row((1, 2, 13))))
    assert e.value.row == 1


def test_missing_tokens():
    d = load_dataset(_csv(_row(Gain="?", Pressure_Measurement="")))
    assert np.isnan(d.features[0, GAS_PIPELINE_SCHEMA.index_of("Gain")])
    assert np.isnan(d.features[0, GAS_PIPELINE_SCHEMA.index_of("Pressure Measurement")])
    assert not d.is_complete


def test_invalid_utf8_is_load_error():
    data = _csv(_row()).getvalue().replace(b"16", b"1\xff", 1)
    with pytest.raises(LoadError, match="UTF-8"):
        load_dataset(io.BytesIO(data))


def test_invalid_utf8_file_is_load_error(tmp_path):
    path = tmp_path / "latin1.csv"
    path.write_bytes((HEADER + "\n").encode("utf-8") + b"\xe9\xe9\n")
    with pytest.raises(LoadError, match="UTF-8"):
        load_dataset(path)


def test_missing_network_feature_is_rejected():
    with pytest.raises(LoadError, match="Address must not be missing"):
        load_dataset(_csv(_row(Address="")))


def test_round_trip_keeps_missing_cells(small_dataset):
    features = np.array(small_dataset.features)
    pressure = GAS_PIPELINE_SCHEMA.index_of("Pressure Measurement")
    features[0, pressure] = np.nan
    d = small_dataset.with_features(features, "real")

    buffer = io.BytesIO()
    write_dataset(d, buffer)
    text = buffer.getvalue().decode("utf-8")
    first = text.split("\n")[1].split(",")
    assert first[pressure] == ""
    assert "\r" not in text

    buffer.seek(0)
    assert load_dataset(buffer).equals(d)


def test_write_to_path(tmp_path, small_dataset):
    target = tmp_path / "nested" / "data.csv"
    write_dataset(small_dataset, target)
    assert load_dataset(target).equals(small_dataset)


def test_format_number():
    assert format_number(16.0) == "16"
    assert format_number(0.1) == "0.1"
    assert format_number(float("nan")) == ""
    assert float(format_number(1 / 3)) == 1 / 3
    assert format_number(-0.0) == "-0.0"
    assert format_number(0.0) == "0"


def test_negative_zero_survives_round_trip(small_dataset):
    features = np.array(small_dataset.features)
    gain = GAS_PIPELINE_SCHEMA.index_of("Gain")
    features[:, gain] = 0.5
    features[0, gain] = -0.0
    buffer = io.BytesIO()
    write_dataset(small_dataset.with_features(features, "real"), buffer)
    buffer.seek(0)
    loaded = load_dataset(buffer)
    assert np.signbit(loaded.features[0, gain])
    assert loaded.features[0, gain] == 0.0


def test_dataset_is_read_only(small_dataset):
    with pytest.raises(ValueError):
        small_dataset.features[0, 0] = 1.0


def test_dataset_violations_are_vectorised():
    features = np.zeros((3, 17))
    features[:, GAS_PIPELINE_SCHEMA.index_of("Solenoid")] = [0, 1, 3]
    d = Dataset(features, [0, 1, 1], [0, 4, 2], [0, 1, 13])
    problems = dataset_violations(d)
    assert [i for i, _ in problems] == [2]
    assert "Solenoid" in problems[0][1]
    assert "subclass 13 belongs to category 3" in problems[0][1]


# ============ 合成数据 ============

def test_synthetic_counts_are_exact(make_synthetic):
    counts = {0: 12, 1: 3, 18: 5, 29: 2}
    d = make_synthetic(counts)
    assert d.histogram("specified") == counts
    assert d.histogram("categorized") == {0: 12, 4: 3, 6: 5, 1: 2}
    assert d.provenance == "synthetic"
    assert dataset_violations(d, allow_missing=False) == []


def test_synthetic_is_deterministic(make_synthetic):
    a = make_synthetic(seed=3)
    b = make_synthetic(seed=3)
    c = make_synthetic(seed=4)
    assert a.equals(b)
    assert a.fingerprint() == b.fingerprint()
    assert not a.equals(c)


def test_all_zero_counts_give_empty_dataset(make_synthetic):
    d = make_synthetic({0: 0, 5: 0})
    assert len(d) == 0


def test_normal_only(make_synthetic):
    d = make_synthetic({0: 10})
    assert d.histogram("binary") == {0: 10}


def test_linear_relation_and_missing_rate(make_synthetic):
    d = make_synthetic(
        {0: 400},
        linear_relations={"Pressure Measurement": ("Set Point", 2.0, 1.0)},
        missing_rates={"Gain": 0.5},
    )
    sp = d.features[:, GAS_PIPELINE_SCHEMA.index_of("Set Point")]
    pm = d.features[:, GAS_PIPELINE_SCHEMA.index_of("Pressure Measurement")]
    np.testing.assert_allclose(pm, 2.0 * sp + 1.0)

    missing = d.missing
    gain = GAS_PIPELINE_SCHEMA.index_of("Gain")
    assert 100 < missing[:, gain].sum() < 300
    assert missing.sum() == missing[:, gain].sum()


def test_missing_rate_on_network_feature_is_rejected():
    with pytest.raises(ValueError, match="不允许缺失"):
        generate_synthetic(SynthesisSpec(counts={0: 5}, missing_rates={"Address": 0.1}))


def test_categorical_range_outside_domain_is_rejected():
    with pytest.raises(ValueError, match="离散特征"):
        SynthesisSpec(counts={0: 5}, ranges={"Solenoid": (0.0, 3.0)})
    with pytest.raises(ValueError, match="离散特征"):
        SynthesisSpec(counts={0: 5}, ranges={"System Mode": (0.5, 2.0)})
    spec = SynthesisSpec(counts={0: 50}, ranges={"System Mode": (1.0, 2.0)})
    mode = generate_synthetic(spec).features[:, GAS_PIPELINE_SCHEMA.index_of("System Mode")]
    assert set(np.unique(mode)) <= {1.0, 2.0}


def test_linear_relation_cannot_target_categorical_feature():
    with pytest.raises(ValueError, match="离散特征"):
        SynthesisSpec(counts={0: 5}, linear_relations={"System Mode": ("Set Point", 1.0, 0.0)})


def test_unknown_feature_name_is_rejected():
    with pytest.raises(ValueError, match="未知特征"):
        SynthesisSpec(counts={0: 5}, ranges={"Valve": (0.0, 1.0)})
    with pytest.raises(ValueError, match="未知特征"):
        SynthesisSpec(counts={0: 5}, linear_relations={"Gain": ("Valve", 1.0, 0.0)})


def test_category_length_bands_do_not_overlap():
    spec = SynthesisSpec(counts={})
    length = GAS_PIPELINE_SCHEMA.index_of("Length")
    bands = {}
    for c in TAXONOMY.categories:
        bands[c] = subclass_ranges(TAXONOMY.category_subclasses(c)[0], spec)[length]
    assert bands[1] == bands[2]
    distinct = sorted(set(bands.values()) | {subclass_ranges(0, spec)[length]})
    for (_, hi), (lo, _) in zip(distinct, distinct[1:]):
        assert hi < lo


def test_apportion_largest_remainder():
    assert apportion(10, {1: 1.0, 2: 1.0, 3: 1.0}) == {1: 4, 2: 3, 3: 3}
    assert apportion(0, {1: 1.0}) == {1: 0}
    assert sum(apportion(77, {s: float(s) for s in range(1, 8)}).values()) == 77


def test_published_scaled_spec_keeps_category_proportions():
    spec = published_scaled_spec(0.01, seed=5)
    d = generate_synthetic(spec)
    assert len(d) == 2747
    assert d.histogram("categorized") == {0: 2146, 1: 78, 2: 130, 3: 79, 4: 204, 5: 49, 6: 22, 7: 39}


def test_published_scaled_spec_missing_rate():
    spec = published_scaled_spec(0.01, missing_rate=0.2)
    assert len(spec.missing_rates) == 11
    assert set(spec.missing_rates.values()) == {0.2}
