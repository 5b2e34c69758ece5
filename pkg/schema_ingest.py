#!/usr/bin/env python3
"""
Модуль загрузки и очистки табличных данных по объявленной схеме
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd
import yaml

from config import LABEL_COLUMN, MISSING_TOKEN
from errors import DataError, SchemaError

logger = logging.getLogger(__name__)

Cell = Union[int, float, str]
Row = Dict[str, Cell]


class ColumnKind(str, Enum):
    NUMERIC = 'numeric'
    CATEGORICAL = 'categorical'


class MissingPolicy(str, Enum):
    DROP_INCOMPLETE = 'drop_incomplete'
    REJECT = 'reject'


@dataclass(frozen=True)
class CleaningPolicy:
    missing: MissingPolicy = MissingPolicy.DROP_INCOMPLETE
    missing_token: str = MISSING_TOKEN
    extend_vocabulary: bool = False


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: ColumnKind
    integer: bool = False
    valid_range: Optional[Tuple[float, float]] = None
    vocabulary: Tuple[str, ...] = ()
    declared_vocabulary: bool = field(default=False, compare=False)

    @property
    def is_numeric(self) -> bool:
        return self.kind == ColumnKind.NUMERIC

    def to_dict(self) -> Dict:
        data: Dict = {'name': self.name, 'kind': self.kind.value}
        if self.is_numeric:
            data['integer'] = self.integer
            if self.valid_range is not None:
                data['range'] = list(self.valid_range)
        elif self.vocabulary:
            data['vocabulary'] = list(self.vocabulary)
        return data


@dataclass(frozen=True)
class Schema:
    columns: Tuple[ColumnSpec, ...]
    label: str = LABEL_COLUMN

    @property
    def names(self) -> List[str]:
        return [column.name for column in self.columns]

    def __len__(self) -> int:
        return len(self.columns)

    def __getitem__(self, name: str) -> ColumnSpec:
        for column in self.columns:
            if column.name == name:
                return column
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(column.name == name for column in self.columns)

    @property
    def numeric(self) -> List[ColumnSpec]:
        return [c for c in self.columns if c.is_numeric]

    @property
    def categorical(self) -> List[ColumnSpec]:
        return [c for c in self.columns if not c.is_numeric]

    def with_column(self, spec: ColumnSpec) -> 'Schema':
        columns = tuple(spec if c.name == spec.name else c for c in self.columns)
        return replace(self, columns=columns)

    def reordered(self, names: Sequence[str]) -> 'Schema':
        return replace(self, columns=tuple(self[name] for name in names))

    def to_dict(self) -> Dict:
        return {'label': self.label, 'columns': [c.to_dict() for c in self.columns]}

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


@dataclass(frozen=True, eq=False)
class Table:
    """Очищенная таблица: один столбец frame на столбец схемы, в порядке схемы"""

    schema: Schema
    frame: pd.DataFrame
    raw_rows: int = 0
    dropped_rows: int = 0
    sources: Tuple[str, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.frame)

    def rows(self) -> List[Row]:
        return self.frame.to_dict(orient='records')

    def row(self, index: int) -> Row:
        return self.frame.iloc[index].to_dict()

    def column(self, name: str) -> pd.Series:
        return self.frame[name]

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[Row]) -> 'Table':
        frame = pd.DataFrame(list(rows), columns=schema.names)
        return cls.from_frame(schema, frame)

    @classmethod
    def from_frame(cls, schema: Schema, frame: pd.DataFrame) -> 'Table':
        frame = frame[schema.names].reset_index(drop=True)
        for column in schema.numeric:
            dtype = 'int64' if column.integer else 'float64'
            frame[column.name] = frame[column.name].astype(dtype)
        return cls(schema=schema, frame=frame, raw_rows=len(frame))


def parse_schema(config_text: str) -> Schema:
    """Разбирает YAML-описание схемы"""
    try:
        data = yaml.safe_load(config_text)
    except yaml.YAMLError as e:
        raise SchemaError(f"Некорректный YAML схемы: {e}")

    if not isinstance(data, dict) or not isinstance(data.get('columns'), list):
        raise SchemaError("Схема должна содержать список 'columns'")

    columns = []
    seen = set()
    for entry in data['columns']:
        if not isinstance(entry, dict) or 'name' not in entry:
            raise SchemaError(f"Столбец без имени: {entry!r}")
        name = str(entry['name'])
        if name in seen:
            raise SchemaError(f"Повторяющееся имя столбца: {name}")
        seen.add(name)

        try:
            kind = ColumnKind(str(entry.get('kind', '')).lower())
        except ValueError:
            raise SchemaError(f"Неизвестный тип столбца {name}: {entry.get('kind')!r}")

        if kind == ColumnKind.NUMERIC:
            valid_range = _parse_range(name, entry.get('range'))
            columns.append(ColumnSpec(name=name, kind=kind, integer=bool(entry.get('integer', False)),
                                      valid_range=valid_range))
        else:
            vocabulary = tuple(str(v) for v in entry.get('vocabulary') or ())
            if len(set(vocabulary)) != len(vocabulary):
                raise SchemaError(f"Словарь столбца {name} содержит повторы")
            columns.append(ColumnSpec(name=name, kind=kind, vocabulary=vocabulary,
                                      declared_vocabulary=bool(vocabulary)))

    if not columns:
        raise SchemaError("Схема не содержит столбцов")

    label = str(data.get('label', LABEL_COLUMN))
    return Schema(columns=tuple(columns), label=label)


def _parse_range(name: str, raw) -> Optional[Tuple[float, float]]:
    if raw is None:
        return None
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise SchemaError(f"Диапазон столбца {name} должен быть парой [lo, hi]")
    try:
        lo, hi = float(raw[0]), float(raw[1])
    except (TypeError, ValueError):
        raise SchemaError(f"Диапазон столбца {name} не числовой: {raw!r}")
    if lo > hi:
        raise SchemaError(f"Диапазон столбца {name}: lo > hi ({lo} > {hi})")
    if lo.is_integer() and hi.is_integer():
        return (int(lo), int(hi))
    return (lo, hi)


def dump_schema(schema: Schema) -> str:
    """Сериализует схему обратно в YAML (без потерь)"""
    return yaml.safe_dump(schema.to_dict(), sort_keys=False, allow_unicode=True)


def load_schema(path: Union[str, Path]) -> Schema:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Файл схемы не найден: {path}")
    return parse_schema(path.read_text(encoding='utf-8'))


def _read_raw(csv_path: Union[str, Path], schema: Schema, header: bool) -> pd.DataFrame:
    """Читает CSV как строки и приводит столбцы к порядку схемы"""
    path = Path(csv_path)
    if not path.exists():
        raise DataError(f"Файл данных не найден: {path}")

    frame = pd.read_csv(
        path,
        header=0 if header else None,
        names=None if header else schema.names,
        index_col=False,
        dtype=str,
        keep_default_na=False,
        skipinitialspace=True,
        skip_blank_lines=True,
    )

    if header:
        frame.columns = [str(c).strip() for c in frame.columns]
        if sorted(frame.columns) != sorted(schema.names):
            missing = sorted(set(schema.names) - set(frame.columns))
            extra = sorted(set(frame.columns) - set(schema.names))
            raise DataError(f"Заголовок {path.name} не совпадает со схемой: нет {missing}, лишние {extra}")
        frame = frame[schema.names]

    frame = frame.fillna('')
    # Служебные строки UCI вида "|1x3 Cross validator"
    first = frame[schema.names[0]].astype(str)
    frame = frame[~first.str.startswith('|')]
    return frame.apply(lambda s: s.astype(str).str.strip())


def _clean(frame: pd.DataFrame, schema: Schema, policy: CleaningPolicy,
           sources: Sequence[str]) -> Table:
    raw_rows = len(frame)
    incomplete = ((frame == policy.missing_token) | (frame == '')).any(axis=1)

    if incomplete.any():
        if policy.missing == MissingPolicy.REJECT:
            first_bad = int(incomplete.to_numpy().nonzero()[0][0])
            raise DataError(f"Строка {first_bad} содержит пропуск '{policy.missing_token}'")
        frame = frame[~incomplete]

    frame = frame.reset_index(drop=True).copy()
    dropped = raw_rows - len(frame)

    if schema.label in schema and not schema[schema.label].is_numeric:
        frame[schema.label] = frame[schema.label].str.replace(r'\.$', '', regex=True)

    for column in schema.columns:
        if column.is_numeric:
            frame[column.name] = _to_numeric(frame[column.name], column)
        else:
            schema = _settle_vocabulary(frame[column.name], column, schema, policy)

    logger.info(f"Загружено строк: {raw_rows}, отброшено неполных: {dropped}, осталось: {len(frame)}")
    return Table(schema=schema, frame=frame, raw_rows=raw_rows, dropped_rows=dropped,
                 sources=tuple(str(s) for s in sources))


def _to_numeric(values: pd.Series, column: ColumnSpec) -> pd.Series:
    parsed = pd.to_numeric(values, errors='coerce')
    bad = parsed.isna()
    if bad.any():
        index = int(bad.to_numpy().nonzero()[0][0])
        raise DataError(f"Нечисловое значение в столбце {column.name}, строка {index}: {values.iloc[index]!r}")
    if column.integer:
        if not (parsed == parsed.round()).all():
            raise DataError(f"Столбец {column.name} объявлен целым, но содержит дробные значения")
        return parsed.astype('int64')
    return parsed.astype('float64')


def _settle_vocabulary(values: pd.Series, column: ColumnSpec, schema: Schema,
                       policy: CleaningPolicy) -> Schema:
    observed = set(values.unique())
    if not column.vocabulary:
        return schema.with_column(replace(column, vocabulary=tuple(sorted(observed))))

    unknown = sorted(observed - set(column.vocabulary))
    if not unknown:
        return schema
    if not policy.extend_vocabulary:
        raise DataError(f"Неизвестные категории в столбце {column.name}: {unknown}")
    logger.warning(f"Словарь столбца {column.name} расширен: {unknown}")
    return schema.with_column(replace(column, vocabulary=column.vocabulary + tuple(unknown)))


def load_table(csv_path: Union[str, Path], schema: Schema, policy: Optional[CleaningPolicy] = None,
               header: bool = True) -> Table:
    """Загружает и очищает один CSV файл"""
    policy = policy or CleaningPolicy()
    frame = _read_raw(csv_path, schema, header)
    return _clean(frame, schema, policy, [str(csv_path)])


def load_tables(csv_paths: Sequence[Union[str, Path]], schema: Schema,
                policy: Optional[CleaningPolicy] = None, header: bool = True) -> Table:
    """Загружает несколько файлов (например, train+test) в одну таблицу в порядке файлов"""
    policy = policy or CleaningPolicy()
    frames = [_read_raw(path, schema, header) for path in csv_paths]
    frame = pd.concat(frames, ignore_index=True)
    return _clean(frame, schema, policy, [str(p) for p in csv_paths])


def fit_vocabularies(table: Table) -> Schema:
    """Фиксирует словари по таблице для столбцов, где словарь не объявлен"""
    schema = table.schema
    for column in schema.categorical:
        if column.declared_vocabulary:
            continue
        vocabulary = tuple(sorted(set(table.column(column.name).unique())))
        schema = schema.with_column(replace(column, vocabulary=vocabulary))
    return schema


def conform_table(table: Table, schema: Schema) -> Table:
    """Проверяет, что категории таблицы укладываются в словари схемы, и подменяет схему"""
    if table.schema.names != schema.names:
        raise SchemaError("Столбцы таблицы не совпадают со схемой")
    for column in schema.categorical:
        unknown = sorted(set(table.column(column.name).unique()) - set(column.vocabulary))
        if unknown:
            raise DataError(f"Неизвестные категории в столбце {column.name}: {unknown}")
    return replace(table, schema=schema)


def write_table(table: Table, path: Union[str, Path]):
    """Записывает таблицу в CSV с заголовком схемы"""
    table.frame.to_csv(path, index=False, lineterminator='\n')


def ingestion_summary(table: Table) -> Dict:
    return {
        'sources': list(table.sources),
        'raw_rows': int(table.raw_rows),
        'dropped_rows': int(table.dropped_rows),
        'kept_rows': int(len(table)),
    }


def merge_vocabularies(*tables: Table) -> Schema:
    """Общая схема для нескольких таблиц: словари объединены и отсортированы"""
    if not tables:
        raise SchemaError("Нет таблиц для объединения словарей")
    schema = tables[0].schema
    for table in tables[1:]:
        if table.schema.names != schema.names:
            raise SchemaError("Столбцы таблиц не совпадают")
    for column in schema.categorical:
        observed = set()
        for table in tables:
            observed |= set(table.schema[column.name].vocabulary)
            observed |= set(table.column(column.name).unique())
        schema = schema.with_column(replace(column, vocabulary=tuple(sorted(observed))))
    return schema
