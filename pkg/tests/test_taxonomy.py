import pytest

from taxonomy import (
    DOS_CATEGORY,
    DOS_SUBCLASS,
    GAS_PIPELINE_SCHEMA,
    PUBLISHED_CATEGORY_COUNTS,
    PUBLISHED_STAGE1_COUNTS,
    PUBLISHED_STAGE2_COUNTS,
    PUBLISHED_SUBCLASS_COUNTS,
    TAXONOMY,
    Category,
    FeatureGroup,
    Record,
    Taxonomy,
    TaxonomyError,
    subclass_to_category,
    validate_record,
)


def test_schema_matches_feature_table():
    assert GAS_PIPELINE_SCHEMA.names == [
        "Address", "Length", "Gain", "Deadband", "Rate", "Control Scheme", "Solenoid",
        "CRC Rate", "Timestamp", "Function", "Set Point", "Reset Rate", "Cycle Time",
        "System Mode", "Pump Mode", "Pressure Measurement", "Command Response",
    ]
    assert len(GAS_PIPELINE_SCHEMA.indices(FeatureGroup.NETWORK)) == 5
    assert len(GAS_PIPELINE_SCHEMA.indices(FeatureGroup.COMMAND_PAYLOAD)) == 11
    assert len(GAS_PIPELINE_SCHEMA.indices(FeatureGroup.RESPONSE_PAYLOAD)) == 1


def test_missable_features_are_payload_only():
    missable = [GAS_PIPELINE_SCHEMA[i] for i in GAS_PIPELINE_SCHEMA.missable_indices]
    assert len(missable) == 11
    assert all(f.group != FeatureGroup.NETWORK for f in missable)
    assert "Function" not in [f.name for f in missable]


def test_header_appends_label_columns():
    assert GAS_PIPELINE_SCHEMA.header[-3:] == ["binary", "categorized", "specified"]


@pytest.mark.parametrize("subclass, category", [(1, 4), (18, 6), (29, 1), (13, 3), (21, 5), (24, 7), (35, 2)])
def test_subclass_to_category(subclass, category):
    assert subclass_to_category(subclass) == category


@pytest.mark.parametrize("subclass", [0, 36, -1])
def test_subclass_to_category_rejects_out_of_domain(subclass):
    with pytest.raises(TaxonomyError):
        subclass_to_category(subclass)


def test_normal_has_no_category_message():
    with pytest.raises(TaxonomyError, match="Normal has no attack category"):
        TAXONOMY.subclass_to_category(0)


def test_subclass_sets_partition_1_to_35():
    owned = [s for c in TAXONOMY.categories for s in TAXONOMY.category_subclasses(c)]
    assert sorted(owned) == list(range(1, 36))
    for s in range(1, 36):
        assert s in TAXONOMY.category_subclasses(TAXONOMY.subclass_to_category(s))


def test_category_sizes():
    assert len(TAXONOMY.category_subclasses(4)) == 12
    assert TAXONOMY.category_subclasses(DOS_CATEGORY) == (DOS_SUBCLASS,)
    assert TAXONOMY.category_subclasses(1) == (29, 30, 31, 32)
    assert TAXONOMY.category_subclasses(2) == (25, 26, 27, 28, 33, 34, 35)
    assert TAXONOMY.category_subclasses(5) == (19, 21, 22)
    assert TAXONOMY.category_subclasses(7) == (20, 23, 24)


def test_category_names():
    assert TAXONOMY.category_name(Category.MPCI) == "MPCI"
    assert TAXONOMY.category_name(0) == "Normal"
    assert TAXONOMY.subclass_name(18) == "Bad CRC Attack"


def test_overlapping_taxonomy_is_rejected():
    with pytest.raises(TaxonomyError):
        Taxonomy(category_subclass_map={1: (1, 2), 2: (2,)})


def test_lookup_table_matches_mapping():
    table = TAXONOMY.lookup_table()
    assert table[0] == 0
    assert all(table[s] == TAXONOMY.subclass_to_category(s) for s in range(1, 36))


def _record(binary, category, subclass, **overrides):
    features = [0.0] * len(GAS_PIPELINE_SCHEMA)
    for name, value in overrides.items():
        features[GAS_PIPELINE_SCHEMA.index_of(name.replace("_", " "))] = value
    return Record(features, binary, category, subclass)


def test_validate_normal_record():
    assert validate_record(_record(0, 0, 0)).ok


def test_validate_dos_record():
    assert validate_record(_record(1, 6, 18)).ok


def test_validate_reports_wrong_category():
    result = validate_record(_record(1, 2, 13))
    assert not result.ok
    assert "subclass 13 belongs to category 3" in result.violations


def test_validate_reports_label_disagreement():
    result = validate_record(_record(0, 4, 1))
    assert any("disagree" in v for v in result.violations)


def test_validate_reports_out_of_domain_feature():
    result = validate_record(_record(0, 0, 0, Solenoid=2.0))
    assert result.violations == ["Solenoid value 2 not in {0,1}"]


def test_validate_missing_values():
    assert validate_record(_record(0, 0, 0, Pressure_Measurement=None)).ok
    result = validate_record(_record(0, 0, 0, Address=None))
    assert result.violations == ["Address must not be missing"]


def test_validate_wrong_arity():
    result = validate_record(Record([0.0] * 16, 0, 0, 0))
    assert any("expected 17 features" in v for v in result.violations)


# ============ 公布计数的一致性 ============

def test_category_counts_total():
    assert sum(PUBLISHED_CATEGORY_COUNTS.values()) == 274628
    assert sum(v for k, v in PUBLISHED_CATEGORY_COUNTS.items() if k) == 60048


def test_stage1_counts_match_stage2_totals():
    train_attack = PUBLISHED_STAGE1_COUNTS["train"][1]
    test_attack = PUBLISHED_STAGE1_COUNTS["test"][1]
    assert sum(train for train, _ in PUBLISHED_STAGE2_COUNTS.values()) == train_attack == 40138
    assert sum(test for _, test in PUBLISHED_STAGE2_COUNTS.values()) == test_attack == 19910


def _grouped_subclass_counts(column):
    totals = {}
    for s, counts in PUBLISHED_SUBCLASS_COUNTS.items():
        c = TAXONOMY.subclass_to_category(s)
        totals[c] = totals.get(c, 0) + counts[column]
    return totals


@pytest.mark.parametrize("category", [1, 2, 4, 5, 6, 7])
def test_subclass_training_counts_sum_to_category(category):
    assert _grouped_subclass_counts(0)[category] == PUBLISHED_STAGE2_COUNTS[category][0]


def test_category_3_training_count_erratum():
    # 子类 13–17 合计 5461，第二级表写作 5361
    assert _grouped_subclass_counts(0)[3] == 5461
    assert PUBLISHED_STAGE2_COUNTS[3][0] == 5361


def test_subclass_testing_counts_sum_to_category():
    grouped = _grouped_subclass_counts(1)
    for c, (_, test) in PUBLISHED_STAGE2_COUNTS.items():
        assert grouped[c] == test
