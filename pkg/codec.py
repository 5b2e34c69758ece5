#!/usr/bin/env python3
"""
Кодек строк таблицы: one-hot + min-max масштабирование, размещение на сетке и обратное декодирование
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from sklearn.preprocessing import MinMaxScaler

from config import GRID_HEIGHT, GRID_WIDTH, NORMALIZED_RANGE
from errors import DataError, SchemaError
from schema_ingest import Row, Schema, Table, parse_schema

logger = logging.getLogger(__name__)

LOW, HIGH = NORMALIZED_RANGE


class BlockKind(str, Enum):
    NUMERIC = 'numeric'
    ONE_HOT = 'one_hot'


@dataclass(frozen=True)
class FeatureBlock:
    column_name: str
    offset: int
    width: int
    kind: BlockKind

    @property
    def slots(self) -> range:
        return range(self.offset, self.offset + self.width)


@dataclass(frozen=True)
class CodecSpec:
    """Обученные преобразования по столбцам и таблица блоков закодированного вектора"""

    schema: Schema
    minima: Tuple[float, ...]
    maxima: Tuple[float, ...]
    blocks: Tuple[FeatureBlock, ...]
    grid_shape: Tuple[int, int] = (GRID_HEIGHT, GRID_WIDTH)

    @property
    def encoded_width(self) -> int:
        return sum(block.width for block in self.blocks)

    def block(self, name: str) -> FeatureBlock:
        for block in self.blocks:
            if block.column_name == name:
                return block
        raise KeyError(name)

    def bounds(self, name: str) -> Tuple[float, float]:
        index = [c.name for c in self.schema.numeric].index(name)
        return self.minima[index], self.maxima[index]

    def scaler(self, clip: bool = True) -> MinMaxScaler:
        """MinMaxScaler по сохраненным границам числовых столбцов (в порядке схемы)"""
        scaler = MinMaxScaler(clip=clip)
        return scaler.fit(np.array([self.minima, self.maxima], dtype=np.float64))

    def to_dict(self) -> Dict:
        numeric = [c.name for c in self.schema.numeric]
        return {
            'schema': self.schema.to_dict(),
            'scalers': {name: [lo, hi] for name, lo, hi in zip(numeric, self.minima, self.maxima)},
            'blocks': [[b.column_name, b.offset, b.width, b.kind.value] for b in self.blocks],
            'grid_shape': list(self.grid_shape),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'CodecSpec':
        schema = parse_schema(yaml.safe_dump(data['schema'], sort_keys=False))
        numeric = [c.name for c in schema.numeric]
        return cls(
            schema=schema,
            minima=tuple(float(data['scalers'][n][0]) for n in numeric),
            maxima=tuple(float(data['scalers'][n][1]) for n in numeric),
            blocks=tuple(FeatureBlock(name, int(off), int(w), BlockKind(kind))
                         for name, off, w, kind in data['blocks']),
            grid_shape=tuple(data['grid_shape']),
        )

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def _numeric_matrix(table: Table, names: Sequence[str]) -> np.ndarray:
    return table.frame[list(names)].to_numpy(dtype=np.float64)


def fit_codec(table: Table, grid_shape: Tuple[int, int] = (GRID_HEIGHT, GRID_WIDTH)) -> CodecSpec:
    """Обучает min-max масштабирование числовых столбцов и фиксирует словари"""
    if len(table) == 0:
        raise DataError("Нельзя обучить кодек на пустой таблице")

    minima, maxima = (), ()
    numeric = [c.name for c in table.schema.numeric]
    if numeric:
        scaler = MinMaxScaler().fit(_numeric_matrix(table, numeric))
        for name, lo, span in zip(numeric, scaler.data_min_, scaler.data_range_):
            if span == 0:
                raise DataError(f"Столбец {name} постоянен (min == max == {lo})")
        minima = tuple(float(v) for v in scaler.data_min_)
        maxima = tuple(float(v) for v in scaler.data_max_)

    blocks: List[FeatureBlock] = []
    offset = 0
    for column in table.schema.columns:
        if column.is_numeric:
            block = FeatureBlock(column.name, offset, 1, BlockKind.NUMERIC)
        else:
            if not column.vocabulary:
                raise SchemaError(f"Словарь столбца {column.name} пуст")
            block = FeatureBlock(column.name, offset, len(column.vocabulary), BlockKind.ONE_HOT)
        blocks.append(block)
        offset += block.width

    spec = CodecSpec(schema=table.schema, minima=minima, maxima=maxima,
                     blocks=tuple(blocks), grid_shape=tuple(grid_shape))
    logger.info(f"Кодек обучен: ширина вектора {spec.encoded_width}, "
                f"емкость сетки {grid_shape[0] * grid_shape[1]}")
    return spec


def encode_row(row: Row, spec: CodecSpec) -> np.ndarray:
    """Кодирует одну строку в вектор значений [0, 1]"""
    frame = pd.DataFrame([row], columns=spec.schema.names)
    return encode_table(Table.from_frame(spec.schema, frame), spec)[0]


def encode_table(table: Table, spec: CodecSpec) -> np.ndarray:
    """Кодирует всю таблицу: матрица (n, encoded_width); числа вне обученного диапазона обрезаются"""
    out = np.zeros((len(table), spec.encoded_width), dtype=np.float64)
    numeric = [c.name for c in spec.schema.numeric]
    if numeric and len(table):
        scaled = spec.scaler(clip=True).transform(_numeric_matrix(table, numeric))
        for index, name in enumerate(numeric):
            out[:, spec.block(name).offset] = scaled[:, index]

    for column, block in zip(spec.schema.columns, spec.blocks):
        if column.is_numeric:
            continue
        values = table.column(column.name)
        codes = pd.Categorical(values, categories=list(column.vocabulary)).codes
        if (codes < 0).any():
            unknown = sorted(set(values[codes < 0]))
            raise DataError(f"Неизвестная категория в столбце {column.name}: {unknown}")
        out[np.arange(len(table)), block.offset + codes] = 1.0
    return out


def _cells(layout) -> Tuple[np.ndarray, np.ndarray]:
    cells = np.asarray(layout.assignment, dtype=np.intp)
    return cells[:, 0], cells[:, 1]


def _check_layout(layout, width: int):
    if len(layout.assignment) != width:
        raise SchemaError(f"Раскладка покрывает {len(layout.assignment)} ячеек, а ширина вектора {width}")


def vector_to_grid(vec: np.ndarray, layout) -> np.ndarray:
    """Размещает вектор [0,1] на сетке как 2v − 1; ячейки заполнения равны 0"""
    return vectors_to_grids(np.asarray(vec, dtype=np.float64)[None, :], layout)[0]


def vectors_to_grids(matrix: np.ndarray, layout) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    _check_layout(layout, matrix.shape[1])
    rows, cols = _cells(layout)
    height, width = layout.grid_shape
    grids = np.zeros((matrix.shape[0], height, width), dtype=np.float64)
    grids[:, rows, cols] = LOW + (HIGH - LOW) * matrix
    return grids


def _round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def grids_to_table(grids: np.ndarray, layout, spec: CodecSpec, clamp: bool = True) -> Table:
    """
    Декодирует пачку сеток обратно в строки таблицы.

    clamp=True: ячейки обрезаются до [−1, 1], числа остаются в обученном диапазоне.
    clamp=False: числа восстанавливаются без обрезки и могут выйти за диапазон.
    """
    grids = np.asarray(grids, dtype=np.float64)
    if not np.isfinite(grids).all():
        raise DataError("Сетка содержит нечисловые значения")
    _check_layout(layout, spec.encoded_width)

    rows, cols = _cells(layout)
    cells = grids[:, rows, cols]
    unit = (np.clip(cells, LOW, HIGH) - LOW) / (HIGH - LOW)

    data = {}
    numeric = [c.name for c in spec.schema.numeric]
    if numeric and len(grids):
        source = unit if clamp else (cells - LOW) / (HIGH - LOW)
        offsets = [spec.block(name).offset for name in numeric]
        values = spec.scaler().inverse_transform(source[:, offsets])
        if clamp:
            values = np.clip(values, spec.minima, spec.maxima)
        for index, column in enumerate(spec.schema.numeric):
            column_values = values[:, index]
            data[column.name] = _round_half_away(column_values) if column.integer else column_values
    else:
        for column in spec.schema.numeric:
            data[column.name] = np.zeros(len(grids))

    for column, block in zip(spec.schema.columns, spec.blocks):
        if column.is_numeric:
            continue
        codes = np.argmax(unit[:, block.slots.start:block.slots.stop], axis=1)
        data[column.name] = np.asarray(column.vocabulary, dtype=object)[codes]

    frame = pd.DataFrame(data, columns=spec.schema.names)
    return Table.from_frame(spec.schema, frame)


def grid_to_row(grid: np.ndarray, layout, spec: CodecSpec, clamp: bool = True) -> Row:
    """Декодирует одну сетку в строку"""
    table = grids_to_table(np.asarray(grid)[None, ...], layout, spec, clamp=clamp)
    row = table.row(0)
    for column in spec.schema.columns:
        if column.is_numeric:
            row[column.name] = int(row[column.name]) if column.integer else float(row[column.name])
    return row


def dump_grids(grids: Sequence[np.ndarray]) -> str:
    """Отладочный дамп: одна сетка на строку, значения по строкам, 6 значащих цифр"""
    lines = []
    for grid in grids:
        lines.append(' '.join(f'{value:.6g}' for value in np.asarray(grid).ravel()))
    return '\n'.join(lines) + ('\n' if lines else '')


def load_grids(text: str, grid_shape: Tuple[int, int] = (GRID_HEIGHT, GRID_WIDTH)) -> np.ndarray:
    grids = []
    for number, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        values = np.array([float(v) for v in line.split()], dtype=np.float64)
        if values.size != grid_shape[0] * grid_shape[1]:
            raise DataError(f"Строка {number} дампа содержит {values.size} значений")
        grids.append(values.reshape(grid_shape))
    return np.stack(grids) if grids else np.zeros((0,) + tuple(grid_shape))


def codec_summary(spec: CodecSpec, layout=None) -> Dict:
    capacity = spec.grid_shape[0] * spec.grid_shape[1]
    summary = {
        'encoded_width': spec.encoded_width,
        'grid_capacity': capacity,
        'padding_cells': capacity - spec.encoded_width,
        'blocks': {b.column_name: b.width for b in spec.blocks},
    }
    if layout is not None:
        summary['layout_padding_cells'] = len(layout.padding_cells)
    return summary
