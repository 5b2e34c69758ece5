import pytest

from conftest import ROOT
from errors import DataError, SchemaError
from schema_ingest import (CleaningPolicy, MissingPolicy, conform_table, dump_schema, load_schema, load_table,
                           load_tables, merge_vocabularies, parse_schema)

SMALL_SCHEMA = """
label: income
columns:
  - name: age
    kind: numeric
    integer: true
    range: [17, 90]
  - name: sex
    kind: categorical
  - name: income
    kind: categorical
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return path


def test_two_column_schema():
    schema = parse_schema("""
columns:
  - {name: age, kind: numeric, integer: true, range: [17, 90]}
  - {name: sex, kind: categorical}
""")
    assert schema.names == ['age', 'sex']
    assert schema['age'].integer
    assert schema['age'].valid_range == (17, 90)
    assert not schema['sex'].is_numeric


def test_duplicate_column_name_rejected():
    with pytest.raises(SchemaError):
        parse_schema("""
columns:
  - {name: age, kind: numeric}
  - {name: age, kind: categorical}
""")


def test_unknown_kind_rejected():
    with pytest.raises(SchemaError):
        parse_schema("columns:\n  - {name: age, kind: ordinal}\n")


def test_adult_schema_shape():
    schema = load_schema(ROOT / 'schemas' / 'adult.yaml')
    assert len(schema) == 15
    assert len(schema.numeric) == 6
    assert len(schema.categorical) == 9
    assert schema.label == 'income'


def test_schema_dump_is_lossless():
    schema = parse_schema(SMALL_SCHEMA)
    assert parse_schema(dump_schema(schema)) == schema


def test_incomplete_rows_dropped(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    csv = write(tmp_path, 'a.csv', "39, Male, <=50K\n50, ?, >50K\n28, Female, <=50K\n")
    table = load_table(csv, schema, header=False)
    assert len(table) == 2
    assert table.raw_rows == 3
    assert table.dropped_rows == 1
    assert table.schema['sex'].vocabulary == ('Female', 'Male')


def test_reject_policy_raises(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    csv = write(tmp_path, 'a.csv', "39, Male, <=50K\n50, ?, >50K\n")
    with pytest.raises(DataError):
        load_table(csv, schema, CleaningPolicy(missing=MissingPolicy.REJECT), header=False)


def test_income_trailing_period_normalized(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    csv = write(tmp_path, 'test.csv', "|1x3 Cross validator\n39, Male, >50K.\n40, Female, <=50K.\n")
    table = load_table(csv, schema, header=False)
    assert table.column('income').tolist() == ['>50K', '<=50K']


def test_non_numeric_value_rejected(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    csv = write(tmp_path, 'a.csv', "abc, Male, <=50K\n")
    with pytest.raises(DataError):
        load_table(csv, schema, header=False)


def test_header_mismatch_rejected(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    csv = write(tmp_path, 'a.csv', "age,gender,income\n39,Male,<=50K\n")
    with pytest.raises(DataError):
        load_table(csv, schema)


def test_load_is_deterministic(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    csv = write(tmp_path, 'a.csv', "39, Male, <=50K\n28, Female, >50K\n")
    first, second = load_table(csv, schema, header=False), load_table(csv, schema, header=False)
    assert first.schema == second.schema
    assert first.frame.equals(second.frame)


def test_load_tables_concatenates_in_order(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    a = write(tmp_path, 'a.csv', "39, Male, <=50K\n")
    b = write(tmp_path, 'b.csv', "28, Female, >50K.\n")
    table = load_tables([a, b], schema, header=False)
    assert table.column('age').tolist() == [39, 28]
    assert table.sources == (str(a), str(b))


def test_declared_vocabulary_enforced_unless_extended(tmp_path):
    schema = parse_schema("""
columns:
  - {name: age, kind: numeric, integer: true}
  - {name: sex, kind: categorical, vocabulary: [Female, Male]}
""")
    csv = write(tmp_path, 'a.csv', "39, Male\n40, Other\n")
    with pytest.raises(DataError):
        load_table(csv, schema, header=False)
    table = load_table(csv, schema, CleaningPolicy(extend_vocabulary=True), header=False)
    assert table.schema['sex'].vocabulary == ('Female', 'Male', 'Other')


def test_merge_and_conform(tmp_path):
    schema = parse_schema(SMALL_SCHEMA)
    a = load_table(write(tmp_path, 'a.csv', "39, Male, <=50K\n41, Male, >50K\n"), schema, header=False)
    b = load_table(write(tmp_path, 'b.csv', "28, Female, >50K\n"), schema, header=False)
    shared = merge_vocabularies(a, b)
    assert shared['sex'].vocabulary == ('Female', 'Male')
    assert conform_table(a, shared).schema == shared
    with pytest.raises(DataError):
        conform_table(b, a.schema)
