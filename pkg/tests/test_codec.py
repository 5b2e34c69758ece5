import numpy as np
import pandas as pd
import pytest
from sklearn.preprocessing import MinMaxScaler

from codec import (BlockKind, CodecSpec, dump_grids, encode_row, encode_table, fit_codec, grid_to_row,
                   grids_to_table, load_grids, vector_to_grid)
from conftest import adult_table_from, make_adult_frame
from errors import DataError
from layout import baseline_layout, build_layout
from schema_ingest import Table, parse_schema

SCHEMA = parse_schema("""
columns:
  - {name: age, kind: numeric, integer: true}
  - {name: sex, kind: categorical, vocabulary: [Female, Male]}
  - {name: hours-per-week, kind: numeric, integer: true}
""")


@pytest.fixture
def table():
    frame = pd.DataFrame({'age': [17, 90, 40], 'sex': ['Male', 'Female', 'Male'], 'hours-per-week': [1, 99, 40]})
    return Table.from_frame(SCHEMA, frame)


@pytest.fixture
def spec(table):
    return fit_codec(table)


def test_blocks_follow_schema_order(spec):
    assert [(b.column_name, b.offset, b.width, b.kind) for b in spec.blocks] == [
        ('age', 0, 1, BlockKind.NUMERIC),
        ('sex', 1, 2, BlockKind.ONE_HOT),
        ('hours-per-week', 3, 1, BlockKind.NUMERIC),
    ]
    assert spec.encoded_width == 4
    assert spec.bounds('age') == (17.0, 90.0)


def test_encode_row_values(spec):
    vec = encode_row({'age': 17, 'sex': 'Male', 'hours-per-week': 40}, spec)
    assert vec[0] == 0.0
    assert tuple(vec[1:3]) == (0.0, 1.0)
    assert vec[3] == pytest.approx(39 / 98)


def test_encode_unknown_category_fails(spec):
    with pytest.raises(DataError):
        encode_row({'age': 20, 'sex': 'Other', 'hours-per-week': 40}, spec)


def test_constant_numeric_column_rejected():
    frame = pd.DataFrame({'age': [30, 30], 'sex': ['Male', 'Female'], 'hours-per-week': [1, 2]})
    with pytest.raises(DataError):
        fit_codec(Table.from_frame(SCHEMA, frame))


def test_grid_mapping_endpoints(spec):
    layout = baseline_layout(spec)
    grid = vector_to_grid(np.array([0.0, 0.5, 1.0, 1.0]), layout)
    assert grid.shape == (10, 11)
    assert grid[0, 0] == -1.0
    assert grid[0, 1] == 0.0
    assert grid[0, 2] == 1.0
    # все остальные ячейки это заполнение
    assert np.count_nonzero(grid) == 3
    assert set(layout.padding_cells).isdisjoint(layout.assignment)


def test_row_survives_grid(spec, table):
    layout = baseline_layout(spec)
    for row in table.rows():
        decoded = grid_to_row(vector_to_grid(encode_row(row, spec), layout), layout, spec)
        assert decoded == row


def test_argmax_decoding_and_clamp(spec):
    layout = baseline_layout(spec)
    grid = np.zeros((10, 11))
    grid[0, 0] = -1.6  # ниже диапазона: обрезается до минимума
    grid[0, 1], grid[0, 2] = 2 * 0.2 - 1, 2 * 0.9 - 1
    grid[0, 3] = 1.4
    row = grid_to_row(grid, layout, spec)
    assert row == {'age': 17, 'sex': 'Male', 'hours-per-week': 99}


def test_unclamped_decoding_leaves_range(spec):
    layout = baseline_layout(spec)
    grid = np.zeros((10, 11))
    grid[0, 0] = -1.6
    row = grid_to_row(grid, layout, spec, clamp=False)
    assert row['age'] < 17


def test_argmax_ties_pick_first(spec):
    layout = baseline_layout(spec)
    grid = np.zeros((10, 11))
    assert grid_to_row(grid, layout, spec)['sex'] == 'Female'


def test_non_finite_grid_rejected(spec):
    layout = baseline_layout(spec)
    grids = np.full((1, 10, 11), np.nan)
    with pytest.raises(DataError):
        grids_to_table(grids, layout, spec)


def test_spec_serialization(spec):
    restored = CodecSpec.from_dict(spec.to_dict())
    assert restored == spec
    assert restored.fingerprint() == spec.fingerprint()


def test_grid_dump_format(spec, table):
    grids = np.stack([vector_to_grid(v, baseline_layout(spec)) for v in encode_table(table, spec)])
    text = dump_grids(grids)
    assert len(text.splitlines()) == 3
    assert np.allclose(load_grids(text), grids, atol=1e-5)


def test_adult_like_fits_grid():
    table = adult_table_from(make_adult_frame())
    spec = fit_codec(table)
    assert spec.encoded_width <= 110
    assert baseline_layout(spec).assignment[0] == (0, 0)


def test_scaling_is_sklearn_min_max(spec, table):
    scaler = spec.scaler()
    assert isinstance(scaler, MinMaxScaler)
    assert tuple(scaler.data_min_) == spec.minima
    assert tuple(scaler.data_max_) == spec.maxima

    numbers = table.frame[['age', 'hours-per-week']].to_numpy(dtype=float)
    encoded = encode_table(table, spec)
    assert np.allclose(encoded[:, [0, 3]], MinMaxScaler().fit(numbers).transform(numbers))


def test_encoding_clips_out_of_range_numbers(spec):
    vec = encode_row({'age': 120, 'sex': 'Female', 'hours-per-week': 0}, spec)
    assert vec[0] == 1.0
    assert vec[3] == 0.0


def test_clamped_decode_is_idempotent(spec):
    """decode → encode → decode возвращает ту же таблицу"""
    layout = baseline_layout(spec)
    grids = np.random.default_rng(4).uniform(-1.5, 1.5, (50, 10, 11))
    first = grids_to_table(grids, layout, spec)
    regrids = np.stack([vector_to_grid(v, layout) for v in encode_table(first, spec)])
    second = grids_to_table(regrids, layout, spec)
    pd.testing.assert_frame_equal(first.frame, second.frame)
    assert first.frame['age'].between(17, 90).all()
    assert first.frame['hours-per-week'].between(1, 99).all()


@pytest.mark.parametrize('strategy', ['baseline', 'clustered'])
def test_adult_like_roundtrip_is_exact(strategy):
    table = adult_table_from(make_adult_frame())
    spec = fit_codec(table)
    layout = build_layout(strategy, spec, table=table)
    grids = np.stack([vector_to_grid(v, layout) for v in encode_table(table, spec)])
    decoded = grids_to_table(grids, layout, spec)
    for column in spec.schema.columns:
        if column.is_numeric and not column.integer:
            assert np.allclose(decoded.column(column.name), table.column(column.name))
        else:
            assert list(decoded.column(column.name)) == list(table.column(column.name)), column.name
