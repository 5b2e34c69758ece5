#!/usr/bin/env python3
"""
Раскладки признаков на сетке: базовая, кластерная (по корреляциям) и ручная (по смыслу)
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from scipy.stats.contingency import association as contingency_association

from codec import CodecSpec
from errors import SchemaError, UsageError
from schema_ingest import Table

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


class LayoutStrategy(str, Enum):
    BASELINE = 'baseline'
    CLUSTERED = 'clustered'
    MANUAL = 'manual'


@dataclass(frozen=True)
class Layout:
    strategy: LayoutStrategy
    assignment: Tuple[Cell, ...]  # слот -> (строка, столбец)
    padding_cells: Tuple[Cell, ...]
    grid_shape: Tuple[int, int]
    block_order: Tuple[str, ...]

    @property
    def encoded_width(self) -> int:
        return len(self.assignment)

    def to_dict(self) -> Dict:
        return {
            'strategy': self.strategy.value,
            'assignment': [list(cell) for cell in self.assignment],
            'padding_cells': [list(cell) for cell in self.padding_cells],
            'grid_shape': list(self.grid_shape),
            'block_order': list(self.block_order),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Layout':
        return cls(
            strategy=LayoutStrategy(data['strategy']),
            assignment=tuple(tuple(cell) for cell in data['assignment']),
            padding_cells=tuple(tuple(cell) for cell in data['padding_cells']),
            grid_shape=tuple(data['grid_shape']),
            block_order=tuple(data['block_order']),
        )

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


@dataclass(frozen=True, eq=False)
class AssociationMatrix:
    columns: Tuple[str, ...]
    values: np.ndarray
    measure: str = 'max_abs_pearson'

    def __getitem__(self, pair: Tuple[str, str]) -> float:
        i, j = self.columns.index(pair[0]), self.columns.index(pair[1])
        return float(self.values[i, j])


@dataclass(frozen=True)
class PlacementPlan:
    groups: Tuple[Tuple[str, Tuple[str, ...]], ...]

    @property
    def columns(self) -> List[str]:
        return [name for _, members in self.groups for name in members]


# --- обходы сетки ---

def row_major_cells(grid_shape: Tuple[int, int]) -> List[Cell]:
    height, width = grid_shape
    return [(r, c) for r in range(height) for c in range(width)]


def snake_cells(grid_shape: Tuple[int, int]) -> List[Cell]:
    """Построчный обход с чередованием направления: соседние позиции всегда 4-связны"""
    height, width = grid_shape
    cells = []
    for r in range(height):
        columns = range(width) if r % 2 == 0 else range(width - 1, -1, -1)
        cells.extend((r, c) for c in columns)
    return cells


def _place(spec: CodecSpec, order: Sequence[str], traversal: List[Cell],
           strategy: LayoutStrategy) -> Layout:
    capacity = len(traversal)
    if spec.encoded_width > capacity:
        raise SchemaError(f"Ширина вектора {spec.encoded_width} превышает емкость сетки {capacity}")

    assignment: List[Optional[Cell]] = [None] * spec.encoded_width
    position = 0
    for name in order:
        block = spec.block(name)
        for slot in block.slots:
            assignment[slot] = traversal[position]
            position += 1

    # Ячейки заполнения всегда в хвосте обхода
    padding = tuple(traversal[position:])
    layout = Layout(strategy=strategy, assignment=tuple(assignment), padding_cells=padding,
                    grid_shape=tuple(spec.grid_shape), block_order=tuple(order))
    logger.info(f"Раскладка {strategy.value}: {spec.encoded_width} ячеек признаков, {len(padding)} ячеек заполнения")
    return layout


def baseline_layout(spec: CodecSpec) -> Layout:
    """Блоки в порядке схемы, построчный обход"""
    return _place(spec, spec.schema.names, row_major_cells(spec.grid_shape), LayoutStrategy.BASELINE)


# --- меры связи между столбцами ---

def _indicator_blocks(table: Table) -> Dict[str, np.ndarray]:
    blocks = {}
    for column in table.schema.columns:
        values = table.column(column.name)
        if column.is_numeric:
            blocks[column.name] = values.to_numpy(dtype=np.float64)[:, None]
        else:
            codes = pd.Categorical(values, categories=list(column.vocabulary)).codes
            indicators = np.zeros((len(values), len(column.vocabulary)), dtype=np.float64)
            indicators[np.arange(len(values)), codes] = 1.0
            blocks[column.name] = indicators
    return blocks


def _max_abs_pearson(table: Table) -> np.ndarray:
    names = table.schema.names
    blocks = _indicator_blocks(table)
    matrix = np.hstack([blocks[name] for name in names])
    owners = np.concatenate([[i] * blocks[name].shape[1] for i, name in enumerate(names)])

    std = matrix.std(axis=0)
    live = std > 0
    centered = (matrix[:, live] - matrix[:, live].mean(axis=0)) / std[live]
    corr = np.abs(centered.T @ centered) / len(matrix)
    live_owners = owners[live]

    k = len(names)
    values = np.zeros((k, k), dtype=np.float64)
    for i in range(k):
        rows = live_owners == i
        if not rows.any():
            logger.warning(f"Столбец {names[i]} имеет нулевую дисперсию, связь принята равной 0")
            continue
        for j in range(i + 1, k):
            cols = live_owners == j
            if not cols.any():
                continue
            value = float(np.clip(corr[np.ix_(rows, cols)].max(), 0.0, 1.0))
            values[i, j] = values[j, i] = value
    np.fill_diagonal(values, 1.0)
    return values


def _cramers_v(table: Table) -> np.ndarray:
    """Альтернативная мера: V Крамера, числовые столбцы разбиты на децили"""
    names = table.schema.names
    discrete = {}
    for column in table.schema.columns:
        values = table.column(column.name)
        if column.is_numeric:
            values = pd.qcut(values.rank(method='first'), 10, labels=False)
        discrete[column.name] = values

    k = len(names)
    values = np.eye(k, dtype=np.float64)
    for i in range(k):
        for j in range(i + 1, k):
            observed = pd.crosstab(discrete[names[i]], discrete[names[j]]).to_numpy()
            if min(observed.shape) < 2:
                continue
            value = float(contingency_association(observed, method='cramer'))
            values[i, j] = values[j, i] = value
    return values


ASSOCIATION_MEASURES: Dict[str, Callable[[Table], np.ndarray]] = {
    'max_abs_pearson': _max_abs_pearson,
    'cramers_v': _cramers_v,
}


def association(table: Table, measure: str = 'max_abs_pearson') -> AssociationMatrix:
    """Матрица попарной связи столбцов на обучающих данных"""
    if len(table) == 0:
        raise SchemaError("Нельзя вычислить связи по пустой таблице")
    if measure not in ASSOCIATION_MEASURES:
        raise UsageError(f"Неизвестная мера связи: {measure}")
    values = ASSOCIATION_MEASURES[measure](table)
    return AssociationMatrix(columns=tuple(table.schema.names), values=values, measure=measure)


# --- кластерная раскладка ---

@dataclass(frozen=True)
class _Node:
    members: Tuple[str, ...]  # листья в порядке обхода дендрограммы
    least: str

    @property
    def size(self) -> int:
        return len(self.members)


def cluster_order(assoc: AssociationMatrix) -> Tuple[List[str], List[float]]:
    """
    Агломеративная кластеризация со средней связью на расстоянии 1 − assoc.

    Returns:
        Порядок листьев дендрограммы и высоты слияний.
    """
    names = list(assoc.columns)
    index = {name: i for i, name in enumerate(names)}
    distance = 1.0 - np.asarray(assoc.values, dtype=np.float64)

    nodes = [_Node(members=(name,), least=name) for name in names]
    heights = []

    while len(nodes) > 1:
        best = None
        for a in range(len(nodes)):
            for b in range(a + 1, len(nodes)):
                ia = [index[m] for m in nodes[a].members]
                ib = [index[m] for m in nodes[b].members]
                d = float(distance[np.ix_(ia, ib)].mean())
                key = (d, tuple(sorted((nodes[a].least, nodes[b].least))))
                if best is None or key < best[0]:
                    best = (key, a, b)

        (d, _), a, b = best
        left, right = sorted((nodes[a], nodes[b]), key=lambda n: (n.size, n.least))
        merged = _Node(members=left.members + right.members, least=min(left.least, right.least))
        nodes = [n for i, n in enumerate(nodes) if i not in (a, b)] + [merged]
        heights.append(d)

    return list(nodes[0].members), heights


def clustered_layout(spec: CodecSpec, assoc: AssociationMatrix) -> Layout:
    """Блоки в порядке листьев дендрограммы, змейкой по сетке"""
    if sorted(assoc.columns) != sorted(spec.schema.names):
        raise SchemaError("Размерность матрицы связей не совпадает со схемой")
    order, _ = cluster_order(assoc)
    return _place(spec, order, snake_cells(spec.grid_shape), LayoutStrategy.CLUSTERED)


# --- ручная раскладка ---

def parse_plan(text: str) -> PlacementPlan:
    data = yaml.safe_load(text)
    if not isinstance(data, dict) or not isinstance(data.get('groups'), list):
        raise SchemaError("План размещения должен содержать список 'groups'")
    groups = []
    for entry in data['groups']:
        groups.append((str(entry.get('name', f'group{len(groups) + 1}')),
                       tuple(str(c) for c in entry.get('columns') or ())))
    return PlacementPlan(groups=tuple(groups))


def load_plan(path: Union[str, Path]) -> PlacementPlan:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"План размещения не найден: {path}")
    return parse_plan(path.read_text(encoding='utf-8'))


def validate_plan(plan: PlacementPlan, names: Sequence[str]):
    listed = plan.columns
    duplicates = sorted({name for name in listed if listed.count(name) > 1})
    missing = sorted(set(names) - set(listed))
    unknown = sorted(set(listed) - set(names))
    if duplicates or missing or unknown:
        raise SchemaError(f"План размещения некорректен: повторы {duplicates}, "
                          f"пропущены {missing}, неизвестные {unknown}")


def manual_layout(spec: CodecSpec, plan: PlacementPlan) -> Layout:
    """Группы плана по порядку, змейкой по сетке"""
    validate_plan(plan, spec.schema.names)
    return _place(spec, plan.columns, snake_cells(spec.grid_shape), LayoutStrategy.MANUAL)


def build_layout(strategy: Union[str, LayoutStrategy], spec: CodecSpec, table: Optional[Table] = None,
                 plan: Optional[PlacementPlan] = None, measure: str = 'max_abs_pearson') -> Layout:
    strategy = LayoutStrategy(strategy)
    if strategy == LayoutStrategy.BASELINE:
        return baseline_layout(spec)
    if strategy == LayoutStrategy.CLUSTERED:
        if table is None:
            raise UsageError("Для кластерной раскладки нужна обучающая таблица")
        return clustered_layout(spec, association(table, measure))
    if plan is None:
        raise UsageError("Для ручной раскладки нужен план (--plan)")
    return manual_layout(spec, plan)


def export_layout(layout: Layout, spec: CodecSpec) -> str:
    """Текстовая таблица (column, slot, row, col) для воспроизводимости и сравнения"""
    lines = ['column\tslot\trow\tcol']
    for block in spec.blocks:
        for slot in block.slots:
            row, col = layout.assignment[slot]
            lines.append(f'{block.column_name}\t{slot}\t{row}\t{col}')
    for row, col in layout.padding_cells:
        lines.append(f'-\t-\t{row}\t{col}')
    return '\n'.join(lines) + '\n'


def describe_choices(strategy: Union[str, LayoutStrategy], measure: str = 'max_abs_pearson') -> Dict[str, str]:
    """Выбранные варианты обхода и кластеризации, печатаются в отчетах"""
    strategy = LayoutStrategy(strategy)
    choices = {'padding': 'ячейки заполнения в хвосте обхода'}
    if strategy == LayoutStrategy.BASELINE:
        choices['traversal'] = 'построчный (row-major)'
    else:
        choices['traversal'] = 'змейка (направление чередуется по строкам)'
    if strategy == LayoutStrategy.CLUSTERED:
        choices['measure'] = measure
        choices['linkage'] = 'средняя связь на 1 − assoc, ничьи по имени столбца'
        choices['leaf_order'] = 'дети упорядочены по (размер кластера, наименьший член)'
        choices['unit'] = 'кластеризуются столбцы, блоки не дробятся'
    return choices
